"""Reference-free evaluation of generated sequences.

All metrics are pure functions of their inputs. Distinct-n and perplexity are
computed per sequence; callers evaluating a batch report the mean.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import OracleError
from .oracles import BaseLM, MultimodalOracle, cosine

REPORT_FIELDS = ("distinct_2", "distinct_4", "control_sim", "keyword_hit_rate", "ppl")


@dataclass(frozen=True)
class EvalReport:
    distinct_2: float
    distinct_4: float
    control_sim: float
    keyword_hit_rate: float
    ppl: float

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in REPORT_FIELDS}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def distinct_n(tokens: Sequence, n: int) -> float:
    """Unique n-grams over total n-grams; 0 for sequences shorter than n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = len(tokens) - n + 1
    if total <= 0:
        return 0.0
    grams = {tuple(tokens[i:i + n]) for i in range(total)}
    return len(grams) / total


def control_similarity(tokens: Sequence[str], vctl_embed: np.ndarray,
                       oracle: MultimodalOracle) -> float:
    """Cosine between the sequence's joint embedding and the control embedding."""
    if len(tokens) == 0:
        raise OracleError("cannot score an empty sequence")
    return cosine(oracle.embed_text(tokens), vctl_embed)


def keyword_hit_rate(tokens: Sequence[str], keywords: Sequence[str]) -> float:
    """Fraction of keywords appearing at least once (exact token match)."""
    if len(keywords) == 0:
        return 0.0
    present = set(tokens)
    return sum(1 for kw in keywords if kw in present) / len(keywords)


def perplexity(token_ids: Sequence[int], lm: BaseLM) -> float:
    """exp of the mean negative log-likelihood under the base LM, conditioning
    each token on the preceding ones within the sequence."""
    if len(token_ids) == 0:
        raise ValueError("cannot compute perplexity of an empty sequence")
    total = 0.0
    for t, tid in enumerate(token_ids):
        p = float(lm.next_distribution(token_ids[:t])[tid])
        if p <= 0.0:
            raise OracleError(f"token at position {t} has zero probability")
        total += math.log(p)
    return math.exp(-total / len(token_ids))
