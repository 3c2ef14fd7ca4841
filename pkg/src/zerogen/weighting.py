"""Word-level dynamic control weights.

Both weights share one rule: average a word-level signal, amplify it by the
threshold lambda, cap at the configured upper bound. The textual signal is
the mean unshifted LM probability of the n_hat most probable keywords; the
visual signal is the mean cosine between each candidate token (embedded as a
one-token text) and the control embedding. Negative signals clamp to 0 by
default: a negative weight would invert the control direction.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Vocabulary
from .errors import ConfigError
from .oracles import MultimodalOracle, cosine
from .visual import CandidateSet


def amplify_weight(d: float, lambda_: float, upper: float,
                   allow_negative: bool = False) -> float:
    """min(d / lambda, upper), floored at 0 unless allow_negative."""
    w = min(d / lambda_, upper)
    if not allow_negative:
        w = max(w, 0.0)
    return w


def select_keyword_subset(p_lm: np.ndarray, keyword_ids: Sequence[int],
                          n_hat: int) -> list[int]:
    """The n_hat keyword ids with the highest current unshifted probability;
    ties break toward the lower token id."""
    if not 1 <= n_hat <= len(keyword_ids):
        raise ConfigError("n_hat out of range")
    ranked = sorted(keyword_ids, key=lambda tid: (-p_lm[tid], tid))
    return ranked[:n_hat]


def compute_alpha(p_lm: np.ndarray, keyword_ids: Sequence[int], n_hat: int,
                  lambda_: float, alpha_max: float,
                  allow_negative: bool = False) -> tuple[float, float]:
    """(d_t, alpha_t) from the unshifted LM output."""
    for tid in keyword_ids:
        if not 0 <= tid < p_lm.shape[0]:
            raise ConfigError(f"keyword id {tid} out of vocabulary range")
    subset = select_keyword_subset(p_lm, keyword_ids, n_hat)
    d_t = float(np.mean([p_lm[tid] for tid in subset]))
    return d_t, amplify_weight(d_t, lambda_, alpha_max, allow_negative)


class WordControlSimCache:
    """token id -> cosine(one-token joint embedding, control embedding).

    Populated lazily; entries are deterministic so racing inserts are benign.
    Makes the visual signal O(k) lookups per step.
    """

    def __init__(self, oracle: MultimodalOracle, vocab: Vocabulary,
                 vctl_embed: np.ndarray):
        self.oracle = oracle
        self.vocab = vocab
        self.vctl_embed = vctl_embed
        self._memo: dict[int, float] = {}

    def get(self, token_id: int) -> float:
        hit = self._memo.get(token_id)
        if hit is None:
            hit = cosine(self.oracle.embed_text([self.vocab.tokens[token_id]]),
                         self.vctl_embed)
            self._memo[token_id] = hit
        return hit


def compute_beta(cands: CandidateSet, cache: WordControlSimCache, lambda_: float,
                 beta_max: float, allow_negative: bool = False) -> tuple[float, float]:
    """(d_v, beta_t) from the current candidate set."""
    if cands.k == 0:
        raise ConfigError("candidate set is empty")
    d_v = float(np.mean([cache.get(tid) for tid in cands.token_ids]))
    return d_v, amplify_weight(d_v, lambda_, beta_max, allow_negative)
