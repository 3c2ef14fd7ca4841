"""Token-level guidance: keyword-vocabulary similarity priors.

The similarity matrix is computed once per session, a per-step control vector
is selected from it (step-wise random row, column mean, or column max), and
the LM distribution is shifted by simple weighted addition. The shifted vector
is a ranking score, deliberately not renormalized: later scoring consumes it
as-is, and renormalizing would change its balance against the softmax visual
term.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import TextualControl, Vocabulary
from .errors import ConfigError, OracleError
from .oracles import TextualOracle, cosine

_CACHE_MAGIC = b"ZGSM"
_CACHE_VERSION = 1


@dataclass(frozen=True)
class SimilarityMatrix:
    """N x V cosine similarities between keywords (rows) and vocabulary."""

    rows: np.ndarray
    keywords: tuple[str, ...]

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def v(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class ControlVector:
    """The per-step length-V guidance vector and the mode that produced it."""

    values: np.ndarray
    source: str


def build_similarity_matrix(vocab: Vocabulary, tctl: TextualControl,
                            oracle: TextualOracle, floor: bool = False) -> SimilarityMatrix:
    """Cosine of every vocabulary token against every keyword.

    ``floor`` clips negative similarities to 0 (experiment flag, default off:
    raw cosines in [-1, 1] are kept).
    """
    if tctl.n < 1:
        raise ConfigError("cannot build a similarity matrix without keywords")
    for kw in tctl.keywords:
        if not oracle.can_embed(kw):
            raise OracleError(f"keyword {kw!r} is not embeddable by the textual oracle")
    token_vecs = [oracle.embed_token(tok) for tok in vocab.tokens]
    rows = np.empty((tctl.n, vocab.size), dtype=np.float64)
    for n, kw in enumerate(tctl.keywords):
        kv = oracle.embed_token(kw)
        for i, tv in enumerate(token_vecs):
            rows[n, i] = cosine(tv, kv)
    if floor:
        rows = np.maximum(rows, 0.0)
    return SimilarityMatrix(rows=rows, keywords=tctl.keywords)


def select_control(matrix: SimilarityMatrix, mode: str,
                   rng: Optional[np.random.Generator] = None) -> ControlVector:
    """Collapse the matrix to one length-V control vector.

    sr: one uniformly sampled row, redrawn every step (consumes the session
    rng, exactly one draw); mp: column-wise mean; wm: column-wise max (ties
    between keywords resolve to the same value, so the lower keyword index
    winning is observationally equivalent and free).
    """
    if mode == "sr":
        if rng is None:
            raise ConfigError("sr selection needs the session rng")
        row = int(rng.integers(matrix.n))
        return ControlVector(values=matrix.rows[row].copy(), source="sr")
    if mode == "mp":
        return ControlVector(values=matrix.rows.mean(axis=0), source="mp")
    if mode == "wm":
        return ControlVector(values=matrix.rows.max(axis=0), source="wm")
    raise ConfigError("selection invalid")


def shift_distribution(p_lm: np.ndarray, ctrl: np.ndarray, alpha_t: float) -> np.ndarray:
    """p_lm + alpha_t * ctrl, an unnormalized ranking score vector."""
    if p_lm.shape != ctrl.shape:
        raise ConfigError(f"length mismatch: p_lm {p_lm.shape} vs control {ctrl.shape}")
    return p_lm + alpha_t * ctrl


def matrix_cache_key(vocab: Vocabulary, tctl: TextualControl, oracle_id: str,
                     floor: bool = False) -> bytes:
    """8-byte cache key over (vocabulary, keyword list, oracle identity, flags)."""
    h = hashlib.sha256()
    h.update(vocab.hash().encode("ascii"))
    h.update(b"\x00".join(kw.encode("utf-8") for kw in tctl.keywords))
    h.update(oracle_id.encode("utf-8"))
    h.update(b"floor" if floor else b"raw")
    return h.digest()[:8]


def save_matrix_cache(path: str, matrix: SimilarityMatrix, key: bytes) -> None:
    """Binary cache: magic, version, N, V, key, then row-major little-endian
    float64 entries."""
    rows = np.ascontiguousarray(matrix.rows, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<III", _CACHE_VERSION, matrix.n, matrix.v))
        fh.write(key)
        fh.write(rows.tobytes())


def load_matrix_cache(path: str, key: bytes,
                      keywords: tuple[str, ...]) -> Optional[SimilarityMatrix]:
    """Load a cached matrix; returns None on a key mismatch (stale cache),
    raises OracleError on a corrupt file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    header = 4 + 12 + 8
    if len(blob) < header or blob[:4] != _CACHE_MAGIC:
        raise OracleError(f"{path}: not a similarity-matrix cache")
    version, n, v = struct.unpack("<III", blob[4:16])
    if version != _CACHE_VERSION:
        raise OracleError(f"{path}: unsupported cache version {version}")
    if blob[16:24] != key:
        return None
    body = blob[header:]
    if len(body) != n * v * 8 or n != len(keywords):
        raise OracleError(f"{path}: truncated or mismatched cache body")
    rows = np.frombuffer(body, dtype="<f8").reshape(n, v).astype(np.float64)
    return SimilarityMatrix(rows=rows, keywords=keywords)
