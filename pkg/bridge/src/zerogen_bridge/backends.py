"""Model backends served over the wire.

Each backend family is selected by a spec string:

  LM   : ngram:<corpus>[:order=N][:ks=F]  hermetic add-k smoothed n-gram
         hf:<name_or_path>                causal LM via transformers
  word : a text embedding table, one "token v1 .. vd" line per token
  joint: table:<file>                     mean-pool-normalize over a table
         hf:<name_or_path>                sentence-transformers model
         clip:<name_or_path>              CLIP text/image tower (control refs
                                          are image paths)

The n-gram LM reports each token's static word embedding as its hidden state,
so the degeneration penalty downstream penalizes literal repetition; a neural
LM reports the last-layer hidden state at the candidate position. All
backends are deterministic.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from typing import Optional, Sequence

import numpy as np


class BackendError(Exception):
    pass


def load_table(path: str) -> dict[str, np.ndarray]:
    """Text embedding table -> token to vector map; dimension-checked."""
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts:
                continue
            token, fields = parts[0], parts[1:]
            if dim is None:
                dim = len(fields)
            elif len(fields) != dim:
                raise BackendError(f"{path}:{lineno}: inconsistent dimension")
            try:
                table[token] = np.array([float(x) for x in fields], dtype=np.float64)
            except ValueError:
                raise BackendError(f"{path}:{lineno}: unparsable float") from None
    if not table:
        raise BackendError(f"{path}: empty embedding table")
    return table


def _parse_spec(spec: str) -> tuple[str, str, dict]:
    head, _, rest = spec.partition(":")
    target = rest
    options = {}
    while ":" in target and "=" in target.rsplit(":", 1)[1]:
        target, _, option = target.rpartition(":")
        key, _, value = option.partition("=")
        options[key] = value
    return head, target, options


class NGramLM:
    """Add-k smoothed n-gram model over the sorted unique corpus tokens."""

    def __init__(self, corpus_path: str, order: int = 2, k_s: float = 0.5):
        with open(corpus_path, "r", encoding="utf-8") as fh:
            words = fh.read().split()
        if not words:
            raise BackendError(f"{corpus_path}: empty corpus")
        self.tokens: list[str] = sorted(set(words))
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        self.order = order
        self.k_s = k_s
        self._counts: dict[tuple, Counter] = {}
        self._totals: Counter = Counter()
        ids = [self.index[w] for w in words]
        for i, tid in enumerate(ids):
            ctx = tuple(ids[max(0, i - order + 1):i])
            self._counts.setdefault(ctx, Counter())[tid] += 1
            self._totals[ctx] += 1

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def next_probs(self, prefix: Sequence[int]) -> np.ndarray:
        ctx = tuple(prefix[-(self.order - 1):]) if self.order > 1 else ()
        counts = np.zeros(self.vocab_size, dtype=np.float64)
        for tid, c in self._counts.get(ctx, {}).items():
            counts[tid] = c
        total = self._totals.get(ctx, 0)
        return (counts + self.k_s) / (total + self.k_s * self.vocab_size)

    def hidden_state(self, prefix: Sequence[int], token: int,
                     word_table: Optional[dict]) -> np.ndarray:
        if word_table is None:
            raise BackendError("hermetic LM needs --emb for hidden states")
        vec = word_table.get(self.tokens[token])
        if vec is None:
            dim = len(next(iter(word_table.values())))
            return np.zeros(dim, dtype=np.float64)
        return vec


class HFCausalLM:
    """transformers-backed causal LM; deterministic eval-mode inference."""

    def __init__(self, name: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModelForCausalLM, AutoTokenizer
        except ImportError as exc:
            raise BackendError(f"hf backend needs torch+transformers: {exc}") from exc
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(name)
        self.model = AutoModelForCausalLM.from_pretrained(name).to(device).eval()
        self.device = device
        size = self.model.get_input_embeddings().num_embeddings
        self.tokens = self.tokenizer.convert_ids_to_tokens(list(range(size)))

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    def next_probs(self, prefix: Sequence[int]) -> np.ndarray:
        torch = self._torch
        ids = list(prefix) or [self.tokenizer.bos_token_id or 0]
        with torch.no_grad():
            out = self.model(torch.tensor([ids], device=self.device))
            probs = torch.softmax(out.logits[0, -1].double(), dim=-1)
        return probs.cpu().numpy()

    def hidden_state(self, prefix: Sequence[int], token: int, word_table=None) -> np.ndarray:
        torch = self._torch
        ids = list(prefix) + [int(token)]
        with torch.no_grad():
            out = self.model(torch.tensor([ids], device=self.device),
                             output_hidden_states=True)
        return out.hidden_states[-1][0, -1].double().cpu().numpy()

    def decode(self, ids: Sequence[int]) -> str:
        return self.tokenizer.decode(list(ids))


class TableEmbedder:
    """Joint-space embedder backed by a word table: mean-pool, L2-normalize.
    Unknown words contribute zero vectors; control refs are whitespace text."""

    def __init__(self, path: str):
        self.table = load_table(path)
        self.dim = len(next(iter(self.table.values())))

    def _words_to_vec(self, words: Sequence[str]) -> np.ndarray:
        if not words:
            raise BackendError("cannot embed empty text")
        rows = [self.table.get(w, np.zeros(self.dim)) for w in words]
        mean = np.mean(rows, axis=0)
        norm = float(np.linalg.norm(mean))
        if norm == 0.0:
            raise BackendError("zero-norm text embedding")
        return mean / norm

    def embed_text(self, text: str) -> np.ndarray:
        return self._words_to_vec(text.split())

    def embed_control(self, ref: str) -> np.ndarray:
        return self._words_to_vec(ref.split())


class SentenceEmbedder:
    def __init__(self, name: str, device: str = "cpu"):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise BackendError(f"hf joint backend needs sentence-transformers: {exc}") from exc
        self.model = SentenceTransformer(name, device=device)
        self.dim = self.model.get_sentence_embedding_dimension()

    def embed_text(self, text: str) -> np.ndarray:
        vec = np.asarray(self.model.encode([text], normalize_embeddings=True)[0],
                         dtype=np.float64)
        n = float(np.linalg.norm(vec))
        return vec / n

    def embed_control(self, ref: str) -> np.ndarray:
        return self.embed_text(ref)


class ClipEmbedder:
    """CLIP text/image towers; embed_control resolves an image path."""

    def __init__(self, name: str, device: str = "cpu"):
        try:
            import torch
            from PIL import Image
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackendError(f"clip backend needs torch+transformers+Pillow: {exc}") from exc
        self._torch = torch
        self._Image = Image
        self.processor = CLIPProcessor.from_pretrained(name)
        self.model = CLIPModel.from_pretrained(name).to(device).eval()
        self.device = device
        self.dim = self.model.config.projection_dim

    def embed_text(self, text: str) -> np.ndarray:
        torch = self._torch
        inputs = self.processor(text=[text], return_tensors="pt", truncation=True)
        with torch.no_grad():
            feats = self.model.get_text_features(**{k: v.to(self.device)
                                                    for k, v in inputs.items()})
        vec = feats[0].double().cpu().numpy()
        return vec / float(np.linalg.norm(vec))

    def embed_control(self, ref: str) -> np.ndarray:
        torch = self._torch
        image = self._Image.open(ref).convert("RGB")
        inputs = self.processor(images=image, return_tensors="pt")
        with torch.no_grad():
            feats = self.model.get_image_features(**{k: v.to(self.device)
                                                     for k, v in inputs.items()})
        vec = feats[0].double().cpu().numpy()
        return vec / float(np.linalg.norm(vec))


def build_lm(spec: str, device: str = "cpu"):
    kind, target, options = _parse_spec(spec)
    if kind == "ngram":
        return NGramLM(target, order=int(options.get("order", 2)),
                       k_s=float(options.get("ks", 0.5)))
    if kind == "hf":
        return HFCausalLM(target, device=device)
    raise BackendError(f"unknown LM spec {spec!r} (expected ngram:... or hf:...)")


def build_joint(spec: str, device: str = "cpu"):
    kind, target, _ = _parse_spec(spec)
    if kind == "table":
        return TableEmbedder(target)
    if kind == "hf":
        return SentenceEmbedder(target, device=device)
    if kind == "clip":
        return ClipEmbedder(target, device=device)
    raise BackendError(f"unknown joint spec {spec!r} (expected table:/hf:/clip:...)")


def vocab_hash(tokens: Sequence[str]) -> str:
    return hashlib.sha256("\n".join(tokens).encode("utf-8")).hexdigest()
