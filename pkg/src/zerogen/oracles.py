"""Oracle interfaces plus deterministic table/n-gram implementations.

The engine consults three oracles: a textual oracle mapping single tokens to
embedding vectors, a multimodal oracle mapping token sequences and control
payloads into one joint space, and the base LM supplying next-token
distributions and hidden representations. Everything here is deterministic so
a full decode is reproducible bit-for-bit.
"""

from __future__ import annotations

import hashlib
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Vocabulary, VisualControl
from .errors import ConfigError, OracleError


class _EventCounter:
    """Counts zero-norm cosine events; queries never raise mid-decode."""

    def __init__(self):
        self.count = 0

    def reset(self):
        self.count = 0


ZERO_NORM_EVENTS = _EventCounter()


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity, clamped to [-1, 1] against rounding spill; defined
    as 0 when either vector has zero norm (counted in ZERO_NORM_EVENTS rather
    than raised)."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        ZERO_NORM_EVENTS.count += 1
        return 0.0
    return min(1.0, max(-1.0, float(np.dot(u, v) / (nu * nv))))


def normalize(v: np.ndarray) -> np.ndarray:
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise OracleError("cannot normalize a zero-norm vector")
    return v / n


@dataclass(frozen=True)
class EmbeddingTable:
    """Per-token vectors aligned with a Vocabulary; uncovered tokens hold zero
    rows and score 0 in any cosine."""

    dim: int
    vectors: np.ndarray
    covered: frozenset

    @property
    def coverage(self) -> int:
        return len(self.covered)

    def content_hash(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.vectors).tobytes()).hexdigest()


def load_corpus(path: str) -> list[str]:
    """Whitespace-tokenized UTF-8 corpus."""
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read().split()


def load_embedding_table(path: str, vocab: Vocabulary) -> EmbeddingTable:
    """Load a text embedding table: one ``token v1 v2 ... vdim`` line per token.

    Lines for tokens outside the vocabulary are dimension-checked but skipped.
    Raises OracleError on a malformed line or inconsistent dimensions.
    """
    dim: Optional[int] = None
    vectors = None
    covered = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            token, fields = parts[0], parts[1:]
            if not fields:
                raise OracleError(f"{path}:{lineno}: expected token and vector values")
            if dim is None:
                dim = len(fields)
                vectors = np.zeros((vocab.size, dim), dtype=np.float64)
            elif len(fields) != dim:
                raise OracleError(f"{path}:{lineno}: inconsistent dimension "
                                  f"(expected {dim}, got {len(fields)})")
            try:
                vec = np.array([float(x) for x in fields], dtype=np.float64)
            except ValueError:
                raise OracleError(f"{path}:{lineno}: unparsable float") from None
            if token in vocab:
                tid = vocab.id_of(token)
                vectors[tid] = vec
                covered.add(tid)
    if dim is None:
        raise OracleError(f"{path}: empty embedding table")
    return EmbeddingTable(dim=dim, vectors=vectors, covered=frozenset(covered))


def save_embedding_table(path: str, table: EmbeddingTable, vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for tid in sorted(table.covered):
            values = " ".join(repr(float(x)) for x in table.vectors[tid])
            fh.write(f"{vocab.tokens[tid]} {values}\n")


class TextualOracle(ABC):
    """Token -> embedding vector. Deterministic."""

    dim: int

    @abstractmethod
    def embed_token(self, token: str) -> np.ndarray: ...

    @abstractmethod
    def can_embed(self, token: str) -> bool: ...

    def oracle_id(self) -> str:
        return self.__class__.__name__


class MultimodalOracle(ABC):
    """Token sequences and control payloads -> one joint unit-vector space."""

    dim: int

    @abstractmethod
    def embed_text(self, tokens: Sequence[str]) -> np.ndarray: ...

    @abstractmethod
    def embed_control(self, ref: str) -> np.ndarray: ...


class BaseLM(ABC):
    """Next-token distribution and hidden representation of the base LM."""

    @abstractmethod
    def next_distribution(self, prefix: Sequence[int]) -> np.ndarray: ...

    @abstractmethod
    def representation(self, prefix: Sequence[int], token: int) -> np.ndarray: ...


def toy_embed_text(tokens: Sequence[str], table: EmbeddingTable, vocab: Vocabulary) -> np.ndarray:
    """Toy joint-space text embedding: mean-pool token vectors, L2-normalize.

    Permutation-invariant by construction. Raises on an empty sequence or a
    zero-norm mean; the caller decides how to handle those.
    """
    if len(tokens) == 0:
        raise OracleError("cannot embed an empty token sequence")
    rows = np.array([table.vectors[vocab.id_of(tok)] for tok in tokens], dtype=np.float64)
    mean = rows.mean(axis=0)
    n = float(np.linalg.norm(mean))
    if n == 0.0:
        raise OracleError("zero-norm mean embedding")
    return mean / n


def toy_representation(prefix: Sequence[int], token: int, table: EmbeddingTable) -> np.ndarray:
    """Context-independent stand-in for the LM hidden state: the token's static
    embedding. Downstream, the degeneration penalty then punishes literal
    token repetition."""
    return table.vectors[token]


class TableTextualOracle(TextualOracle):
    def __init__(self, table: EmbeddingTable, vocab: Vocabulary):
        self.table = table
        self.vocab = vocab
        self.dim = table.dim
        self._id = None

    def embed_token(self, token: str) -> np.ndarray:
        if token not in self.vocab:
            raise OracleError(f"token {token!r} not in vocabulary")
        return self.table.vectors[self.vocab.id_of(token)]

    def can_embed(self, token: str) -> bool:
        return token in self.vocab and self.vocab.id_of(token) in self.table.covered

    def oracle_id(self) -> str:
        if self._id is None:
            self._id = f"table:{self.table.content_hash()}"
        return self._id


class TableMultimodalOracle(MultimodalOracle):
    """Toy joint space over the same embedding table; control references are
    whitespace token strings embedded as text."""

    def __init__(self, table: EmbeddingTable, vocab: Vocabulary):
        self.table = table
        self.vocab = vocab
        self.dim = table.dim

    def embed_text(self, tokens: Sequence[str]) -> np.ndarray:
        return toy_embed_text(tokens, self.table, self.vocab)

    def embed_control(self, ref: str) -> np.ndarray:
        return self.embed_text(ref.split())


class NGramToyLM(BaseLM):
    """Add-k smoothed n-gram model over a Vocabulary; the hermetic base LM.

    P(w | ctx) = (count(ctx, w) + k_s) / (count(ctx) + k_s * V), with ctx the
    last ``order - 1`` tokens. Unseen contexts fall back to the uniform
    smoothed distribution. Smoothing keeps every token's probability nonzero,
    which the dynamic textual weight relies on.
    """

    def __init__(self, order: int, vocab: Vocabulary, k_s: float = 0.5,
                 repr_table: Optional[EmbeddingTable] = None):
        if order < 1:
            raise ConfigError("ngram order must be >= 1")
        if k_s <= 0:
            raise ConfigError("smoothing constant must be > 0")
        self.order = order
        self.vocab = vocab
        self.k_s = k_s
        self.repr_table = repr_table
        self._counts: dict[tuple, Counter] = {}
        self._totals: Counter = Counter()

    def fit(self, corpus_ids: Sequence[int]) -> "NGramToyLM":
        m = self.order
        for i, tid in enumerate(corpus_ids):
            ctx = tuple(corpus_ids[max(0, i - m + 1):i])
            self._counts.setdefault(ctx, Counter())[tid] += 1
            self._totals[ctx] += 1
        return self

    def next_distribution(self, prefix: Sequence[int]) -> np.ndarray:
        ctx = tuple(prefix[-(self.order - 1):]) if self.order > 1 else ()
        counts = np.zeros(self.vocab.size, dtype=np.float64)
        for tid, c in self._counts.get(ctx, {}).items():
            counts[tid] = c
        total = self._totals.get(ctx, 0)
        return (counts + self.k_s) / (total + self.k_s * self.vocab.size)

    def representation(self, prefix: Sequence[int], token: int) -> np.ndarray:
        if self.repr_table is None:
            raise OracleError("toy LM has no representation table attached")
        return toy_representation(prefix, token, self.repr_table)


@dataclass
class OracleSet:
    """The oracles one generation session consults. ``textual`` may be absent
    when no keywords are used, ``multimodal`` when no visual control is."""

    lm: BaseLM
    textual: Optional[TextualOracle] = None
    multimodal: Optional[MultimodalOracle] = None


def resolve_visual_control(vctl: VisualControl, oracle: MultimodalOracle) -> np.ndarray:
    """Resolve a payload to a unit-norm embedding of the oracle's dimension."""
    if vctl.ref is not None:
        vec = np.asarray(oracle.embed_control(vctl.ref), dtype=np.float64)
    else:
        vec = np.asarray(vctl.vector, dtype=np.float64)
        if vec.shape != (oracle.dim,):
            raise ConfigError(f"control vector has dimension {vec.shape}, "
                              f"oracle expects ({oracle.dim},)")
        vec = normalize(vec)
    if vec.shape != (oracle.dim,):
        raise OracleError(f"control embedding has dimension {vec.shape[0]}, "
                          f"oracle declared {oracle.dim}")
    return vec
