"""Domain types, decoding configuration, and the flat key=value config format."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional, Sequence, Union

import numpy as np

from .errors import ConfigError

PRESET_NAMES = ("coco", "flickr30k", "visnews")

SELECTION_MODES = ("sr", "mp", "wm")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered token inventory of the base LM.

    Token ids are positions in ``tokens``; every similarity vector, score
    vector, and probability vector in the engine is indexed by these ids.
    """

    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(self.tokens) < 2:
            raise ConfigError("vocabulary must contain at least 2 tokens")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ConfigError("vocabulary tokens must be unique")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_corpus(cls, corpus_tokens: Sequence[str]) -> "Vocabulary":
        """Canonical vocabulary for a whitespace-tokenized corpus: sorted uniques."""
        return cls(tuple(sorted(set(corpus_tokens))))

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise ConfigError(f"token {token!r} not in vocabulary") from None

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def hash(self) -> str:
        """sha256 over the newline-joined token list; used for cache keys and
        bridge session verification."""
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TextualControl:
    """Keyword set steering token choice. Empty disables textual guidance."""

    keywords: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return len(self.keywords)


@dataclass(frozen=True)
class VisualControl:
    """Sentence-level control payload: either a raw embedding of the
    multimodal oracle's dimension, or an opaque reference string the oracle
    resolves (an image path for a real backend, a token string in toy mode).
    """

    vector: Optional[np.ndarray] = None
    ref: Optional[str] = None

    def __post_init__(self):
        if (self.vector is None) == (self.ref is None):
            raise ConfigError("visual control needs exactly one of vector or ref")


# Field order here is the canonical serialization order of the config format.
_INT_KEYS = ("k", "max_len", "seed")
_FLOAT_KEYS = ("eta", "lambda", "alpha", "beta", "alpha_max", "beta_max")
_BOOL_KEYS = (
    "textual_dynamic",
    "visual_dynamic",
    "allow_negative_weights",
    "beta_double_apply",
    "floor_similarities",
)


@dataclass(frozen=True)
class DecoderConfig:
    """All decoding knobs.

    ``alpha``/``beta`` are the fixed weights used when the corresponding
    dynamic flag is off; ``alpha_max``/``beta_max`` bound the dynamic weights.
    ``n_hat`` is the keyword-subset size for the textual weight ("all" resolves
    to the keyword count at validation).
    """

    k: int = 5
    eta: float = 0.1
    lambda_: float = 0.2
    alpha: float = 1.0
    beta: float = 1.0
    alpha_max: float = 2.5
    beta_max: float = 1.0
    n_hat: Union[int, str] = "all"
    selection: str = "wm"
    max_len: int = 16
    seed: int = 0
    eos_token: str = "<eos>"
    textual_dynamic: bool = True
    visual_dynamic: bool = True
    allow_negative_weights: bool = False
    beta_double_apply: bool = False
    floor_similarities: bool = False


def _format_value(key: str, value) -> str:
    if key in _BOOL_KEYS:
        return "true" if value else "false"
    return str(value)


def config_to_text(cfg: DecoderConfig) -> str:
    """Serialize to the flat key=value format, one field per line, canonical order."""
    lines = []
    for f in dataclasses.fields(cfg):
        key = "lambda" if f.name == "lambda_" else f.name
        lines.append(f"{key}={_format_value(key, getattr(cfg, f.name))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str, base: Optional[DecoderConfig] = None) -> DecoderConfig:
    """Parse the flat key=value format. Unknown keys are an error; keys absent
    from the file keep the value from ``base`` (engine defaults if omitted)."""
    values: dict = {}
    known = {("lambda" if f.name == "lambda_" else f.name): f.name
             for f in dataclasses.fields(DecoderConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in known:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            if key in _INT_KEYS:
                parsed = int(value)
            elif key in _FLOAT_KEYS:
                parsed = float(value)
            elif key in _BOOL_KEYS:
                if value not in ("true", "false"):
                    raise ValueError(value)
                parsed = value == "true"
            elif key == "n_hat":
                parsed = value if value == "all" else int(value)
            else:  # selection, eos_token
                parsed = value
        except ValueError:
            raise ConfigError(f"config line {lineno}: bad value for {key!r}: {value!r}") from None
        values[known[key]] = parsed
    return dataclasses.replace(base or DecoderConfig(), **values)


def load_config(path: str, base: Optional[DecoderConfig] = None) -> DecoderConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read(), base=base)


def load_preset(name: str) -> DecoderConfig:
    """Load one of the shipped task presets (data files, not code constants)."""
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    text = resources.files("zerogen.presets").joinpath(f"{name}.cfg").read_text("utf-8")
    return parse_config(text)


def preset_text(name: str) -> str:
    if name not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESET_NAMES)}")
    return resources.files("zerogen.presets").joinpath(f"{name}.cfg").read_text("utf-8")


def validate_config(cfg: DecoderConfig, vocab: Vocabulary, tctl: TextualControl) -> DecoderConfig:
    """Check every config invariant against the vocabulary and keyword set.

    Raises ConfigError naming the first violated invariant. Resolves
    ``n_hat="all"`` to the keyword count. Idempotent: validating the result
    again returns an equal config.
    """
    n = tctl.n
    if not 1 <= cfg.k <= vocab.size:
        raise ConfigError("k out of range")
    if not 0.0 <= cfg.eta <= 1.0:
        raise ConfigError("eta out of range")
    if not cfg.lambda_ > 0.0:
        raise ConfigError("lambda out of range")
    if cfg.alpha < 0.0:
        raise ConfigError("alpha out of range")
    if cfg.beta < 0.0:
        raise ConfigError("beta out of range")
    if cfg.alpha_max < 0.0:
        raise ConfigError("alpha_max out of range")
    if cfg.beta_max < 0.0:
        raise ConfigError("beta_max out of range")
    n_hat = max(n, 1) if cfg.n_hat == "all" else cfg.n_hat
    if not isinstance(n_hat, int) or not 1 <= n_hat <= max(n, 1):
        raise ConfigError("n_hat out of range")
    selection = cfg.selection.lower()
    if selection not in SELECTION_MODES:
        raise ConfigError("selection invalid")
    if cfg.max_len < 1:
        raise ConfigError("max_len out of range")
    if cfg.seed < 0:
        raise ConfigError("seed out of range")
    for kw in tctl.keywords:
        if kw not in vocab:
            raise ConfigError(f"keyword {kw!r} not in vocabulary")
    return dataclasses.replace(cfg, n_hat=n_hat, selection=selection)


@dataclass(frozen=True)
class StepWeights:
    """Per-step weighting trace: the averaged signals and the applied weights."""

    d_t: float
    d_v: float
    alpha_t: float
    beta_t: float


@dataclass
class GenerationState:
    """Mutable per-session decoding state, owned by a single generation."""

    prefix: list[int]
    hidden_history: list[np.ndarray]
    prompt_len: int
    rng: np.random.Generator
    weight_trace: list[StepWeights] = field(default_factory=list)

    @property
    def step(self) -> int:
        return len(self.prefix) - self.prompt_len
