"""The decoding loop: contrastive scoring plus both guidance channels.

Per step, in order: query the base LM; derive the textual weight from the
unshifted distribution; shift the distribution with the selected control
vector; prune to the top-k candidate set; derive the visual weight from the
candidates; score each candidate with the contrastive objective (confidence
minus weighted degeneration penalty) using the shifted score as confidence;
add the weighted joint-similarity term; emit the argmax (ties to the lower
token id) and append its representation to the history.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import (DecoderConfig, GenerationState, StepWeights, TextualControl,
                   VisualControl, Vocabulary, validate_config)
from .errors import ConfigError, OracleError
from .oracles import OracleSet, cosine, resolve_visual_control
from .textual import SimilarityMatrix, build_similarity_matrix, select_control, shift_distribution
from .visual import CandidateSet, SequenceEmbedCache, candidate_set, magic_term
from .weighting import WordControlSimCache, compute_alpha, compute_beta


def degeneration_penalty(h_cand: np.ndarray, history: Sequence[np.ndarray]) -> float:
    """Max cosine between the candidate's representation and every previously
    emitted one; 0 for an empty history."""
    if len(history) == 0:
        return 0.0
    return max(cosine(h_cand, h) for h in history)


def simctg_score(confidence: float, penalty: float, eta: float) -> float:
    """(1 - eta) * confidence - eta * penalty."""
    return (1.0 - eta) * confidence - eta * penalty


@dataclass(frozen=True)
class CandidateScore:
    token_id: int
    confidence: float
    penalty: float
    magic: float
    combined: float


@dataclass(frozen=True)
class StepTrace:
    step: int
    chosen: int
    weights: StepWeights
    candidates: tuple[CandidateScore, ...]


class GenerationSession:
    """One decoding session over fixed oracles, controls, and config.

    The keyword-vocabulary similarity matrix is computed (or adopted) exactly
    once here; decode steps only read it. Sessions are single-threaded and own
    their state; the oracles are only ever read.
    """

    def __init__(self, vocab: Vocabulary, cfg: DecoderConfig, oracles: OracleSet,
                 tctl: Optional[TextualControl] = None,
                 vctl: Optional[VisualControl] = None,
                 matrix: Optional[SimilarityMatrix] = None):
        tctl = tctl or TextualControl()
        self.vocab = vocab
        self.cfg = validate_config(cfg, vocab, tctl)
        self.oracles = oracles
        self.tctl = tctl

        if tctl.n > 0:
            if oracles.textual is None:
                raise ConfigError("keywords given but no textual oracle configured")
            if matrix is None:
                matrix = build_similarity_matrix(vocab, tctl, oracles.textual,
                                                 floor=self.cfg.floor_similarities)
            elif matrix.keywords != tctl.keywords:
                raise ConfigError("similarity matrix keywords do not match the control")
            self.keyword_ids = [vocab.id_of(kw) for kw in tctl.keywords]
        else:
            matrix = None
            self.keyword_ids = []
        self.matrix = matrix

        if vctl is not None:
            if oracles.multimodal is None:
                raise ConfigError("visual control given but no multimodal oracle configured")
            self.vctl_embed = resolve_visual_control(vctl, oracles.multimodal)
            self._seq_cache = SequenceEmbedCache(oracles.multimodal, vocab)
            self._word_cache = WordControlSimCache(oracles.multimodal, vocab, self.vctl_embed)
        else:
            self.vctl_embed = None
            self._seq_cache = None
            self._word_cache = None

        self.eos_id = vocab.id_of(cfg.eos_token) if cfg.eos_token in vocab else None

    def new_state(self, prompt: Sequence[int]) -> GenerationState:
        if len(prompt) == 0:
            raise ConfigError("empty prompt")
        prefix = list(prompt)
        history = [self.oracles.lm.representation(prefix[:j], prefix[j])
                   for j in range(len(prefix))]
        rng = np.random.Generator(np.random.PCG64(self.cfg.seed))
        return GenerationState(prefix=prefix, hidden_history=history,
                               prompt_len=len(prefix), rng=rng)

    def decode_step(self, state: GenerationState) -> tuple[int, StepTrace]:
        cfg = self.cfg
        t = state.step + 1
        try:
            p_lm = np.asarray(self.oracles.lm.next_distribution(state.prefix), dtype=np.float64)
        except OracleError as exc:
            raise OracleError(f"step {t}: {exc}") from exc
        if p_lm.shape != (self.vocab.size,) or abs(float(p_lm.sum()) - 1.0) > 1e-6:
            raise OracleError(f"step {t}: base LM returned an invalid distribution")

        if self.matrix is not None:
            d_t, dyn_alpha = compute_alpha(p_lm, self.keyword_ids, cfg.n_hat,
                                           cfg.lambda_, cfg.alpha_max,
                                           cfg.allow_negative_weights)
            alpha_t = dyn_alpha if cfg.textual_dynamic else cfg.alpha
            ctrl = select_control(self.matrix, cfg.selection, state.rng)
            scores = shift_distribution(p_lm, ctrl.values, alpha_t)
        else:
            d_t, alpha_t = 0.0, 0.0
            scores = p_lm

        cands = candidate_set(scores, cfg.k)

        if self.vctl_embed is not None:
            d_v, dyn_beta = compute_beta(cands, self._word_cache, cfg.lambda_,
                                         cfg.beta_max, cfg.allow_negative_weights)
            beta_t = dyn_beta if cfg.visual_dynamic else cfg.beta
            try:
                magic = magic_term(state.prefix, cands, self.vctl_embed, self._seq_cache)
            except OracleError as exc:
                raise OracleError(f"step {t}: {exc}") from exc
        else:
            d_v, beta_t = 0.0, 0.0
            magic = np.zeros(cands.k, dtype=np.float64)

        reprs = []
        records = []
        combined = np.empty(cands.k, dtype=np.float64)
        for i, tid in enumerate(cands.token_ids):
            h = self.oracles.lm.representation(state.prefix, tid)
            reprs.append(h)
            conf = float(cands.base_scores[i])
            pen = degeneration_penalty(h, state.hidden_history)
            score = simctg_score(conf, pen, cfg.eta)
            if self.vctl_embed is None:
                total = score
            elif cfg.beta_double_apply:
                # literal double-weighting reading: the visual weight applied
                # both inside the candidate score and outside it
                total = score + beta_t * (conf + beta_t * float(magic[i]))
            else:
                total = score + beta_t * float(magic[i])
            combined[i] = total
            records.append(CandidateScore(token_id=tid, confidence=conf, penalty=pen,
                                          magic=float(magic[i]), combined=total))

        # candidates are in ascending id order, so argmax ties break low-id
        best = int(np.argmax(combined))
        chosen = cands.token_ids[best]
        weights = StepWeights(d_t=d_t, d_v=d_v, alpha_t=alpha_t, beta_t=beta_t)
        trace = StepTrace(step=t, chosen=chosen, weights=weights,
                          candidates=tuple(records))

        state.prefix.append(chosen)
        state.hidden_history.append(reprs[best])
        state.weight_trace.append(weights)
        return chosen, trace

    def generate(self, prompt: Sequence[int]) -> tuple[list[int], list[StepTrace]]:
        """Decode until the EOS token or the length cap; returns the full token
        id sequence (prompt included) and one trace per emitted token."""
        state = self.new_state(prompt)
        traces: list[StepTrace] = []
        for _ in range(self.cfg.max_len):
            tid, trace = self.decode_step(state)
            traces.append(trace)
            if self.eos_id is not None and tid == self.eos_id:
                break
        return list(state.prefix), traces


def generate(prompt: Sequence[int], tctl: Optional[TextualControl],
             vctl: Optional[VisualControl], cfg: DecoderConfig, vocab: Vocabulary,
             oracles: OracleSet) -> tuple[list[int], list[StepTrace]]:
    """Single-call decode; equivalent to building a session and generating."""
    return GenerationSession(vocab, cfg, oracles, tctl, vctl).generate(prompt)


def step_trace_to_dict(trace: StepTrace, vocab: Vocabulary) -> dict:
    return {
        "step": trace.step,
        "token_id": trace.chosen,
        "token": vocab.tokens[trace.chosen],
        "alpha_t": trace.weights.alpha_t,
        "beta_t": trace.weights.beta_t,
        "d_t": trace.weights.d_t,
        "d_v": trace.weights.d_v,
        "candidates": [
            {"token_id": c.token_id, "confidence": c.confidence, "penalty": c.penalty,
             "magic": c.magic, "combined": c.combined}
            for c in trace.candidates
        ],
    }


def write_trace_jsonl(path: str, traces_per_prompt: Sequence[Sequence[StepTrace]],
                      vocab: Vocabulary) -> None:
    """One JSON object per decode step, newline-delimited; multi-prompt runs
    carry the prompt index on every record."""
    single = len(traces_per_prompt) == 1
    with open(path, "w", encoding="utf-8") as fh:
        for p, traces in enumerate(traces_per_prompt):
            for trace in traces:
                record = step_trace_to_dict(trace, vocab)
                if not single:
                    record = {"prompt_index": p, **record}
                fh.write(json.dumps(record) + "\n")


def check_trace_invariants(traces: Sequence[StepTrace], cfg: DecoderConfig) -> None:
    """Raise ValueError if any recorded step violates the trace contract:
    the chosen token must maximize the recorded combined scores (lowest id on
    ties) and the weights must sit inside their clamp ranges."""
    for trace in traces:
        best = max(trace.candidates, key=lambda c: (c.combined, -c.token_id))
        if trace.chosen != best.token_id:
            raise ValueError(f"step {trace.step}: chosen {trace.chosen} is not the "
                             f"combined-score argmax {best.token_id}")
        w = trace.weights
        if cfg.textual_dynamic and not (-1e-12 <= w.alpha_t <= cfg.alpha_max + 1e-12):
            raise ValueError(f"step {trace.step}: alpha_t {w.alpha_t} outside clamp")
        if cfg.visual_dynamic and not (-1e-12 <= w.beta_t <= cfg.beta_max + 1e-12):
            raise ValueError(f"step {trace.step}: beta_t {w.beta_t} outside clamp")
