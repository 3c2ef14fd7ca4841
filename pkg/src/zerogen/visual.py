"""Sentence-level guidance: candidate pruning and the joint-similarity term.

The k tokens with the highest shifted scores form the candidate set; every
other token is structurally excluded from selection (no -inf sentinels in the
arithmetic). Each candidate is scored by the softmax, over the candidate set,
of the cosine between the extended prefix's joint embedding and the control
embedding.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Vocabulary
from .errors import ConfigError
from .oracles import MultimodalOracle, cosine


@dataclass(frozen=True)
class CandidateSet:
    """The k top-scoring token ids (ascending id order) and their shifted
    scores; ties on score break toward the lower token id."""

    token_ids: tuple[int, ...]
    base_scores: np.ndarray

    @property
    def k(self) -> int:
        return len(self.token_ids)


def candidate_set(scores: np.ndarray, k: int) -> CandidateSet:
    if not 1 <= k <= scores.shape[0]:
        raise ConfigError("k out of range")
    # stable argsort on -scores keeps equal scores in ascending-id order
    order = np.argsort(-scores, kind="stable")[:k]
    ids = tuple(sorted(int(i) for i in order))
    return CandidateSet(token_ids=ids, base_scores=scores[list(ids)].copy())


def joint_similarity(tokens: Sequence[str], vctl_embed: np.ndarray,
                     oracle: MultimodalOracle) -> float:
    """Cosine between the sequence's joint embedding and the control embedding."""
    return cosine(oracle.embed_text(tokens), vctl_embed)


class SequenceEmbedCache:
    """Session-scoped memo for embed_text keyed by the exact token-id tuple;
    sound because oracles are deterministic."""

    def __init__(self, oracle: MultimodalOracle, vocab: Vocabulary):
        self.oracle = oracle
        self.vocab = vocab
        self._memo: dict = {}

    def embed_ids(self, ids: tuple[int, ...]) -> np.ndarray:
        hit = self._memo.get(ids)
        if hit is None:
            hit = self.oracle.embed_text([self.vocab.tokens[i] for i in ids])
            self._memo[ids] = hit
        return hit


def candidate_softmax(sims: np.ndarray) -> np.ndarray:
    """Softmax over a candidate set's similarities; max-shifted for stability,
    which also realizes the constant-shift invariance."""
    shifted = np.exp(sims - sims.max())
    return shifted / shifted.sum()


def magic_term(prefix: Sequence[int], cands: CandidateSet, vctl_embed: np.ndarray,
               cache: SequenceEmbedCache) -> np.ndarray:
    """Per-candidate softmax of joint similarity between prefix+candidate and
    the control. Positive, sums to 1, invariant to a constant similarity shift.
    """
    if cands.k == 0:
        raise ConfigError("candidate set is empty")
    base = tuple(prefix)
    sims = np.empty(cands.k, dtype=np.float64)
    for i, tid in enumerate(cands.token_ids):
        sims[i] = cosine(cache.embed_ids(base + (tid,)), vctl_embed)
    return candidate_softmax(sims)


def combined_candidate_scores(cands: CandidateSet, magic_weights: np.ndarray,
                              beta_t: float) -> np.ndarray:
    """base_score + beta_t * magic_weight per candidate; tokens outside the
    candidate set are never scored."""
    if magic_weights.shape[0] != cands.k:
        raise ConfigError("candidate/weight length mismatch")
    return cands.base_scores + beta_t * magic_weights
