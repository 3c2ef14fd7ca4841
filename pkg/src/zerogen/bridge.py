"""Client for the remote-oracle bridge.

Wire protocol: newline-delimited JSON over a stream socket (``host:port``) or
over the stdio of a spawned sidecar (``stdio:<command>``). Requests carry an
``op`` and a monotonically increasing ``id``; responses echo the id and set
``ok``. One request is in flight per connection at a time.

Core ops: ping, lm_next(prefix ids) -> probs, lm_repr(prefix ids, token id)
-> vec, embed_text(string) -> vec, embed_control(ref string) -> vec. Two
extension ops let a session bootstrap entirely from the server: emb_token
(bulk token -> word-embedding lookups, null for misses) and vocab (paged
token-list download). embed_text also accepts token ids so the server, which
owns real tokenization, can render the exact text.

The client enforces the response schema: declared vector lengths, probability
normalization within 1e-6, and unit norms within 1e-6.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import Vocabulary
from .errors import BridgeProtocolError
from .oracles import BaseLM, EmbeddingTable, MultimodalOracle, TextualOracle

_UNIT_TOL = 1e-6
_PROB_TOL = 1e-6
_VOCAB_PAGE = 4096
_EMB_CHUNK = 1024


class BridgeClient:
    """Serialized request/response channel to a running bridge server."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.endpoint = endpoint
        self._next_id = 0
        self._proc = None
        self._sock = None
        if endpoint.startswith("stdio:"):
            cmd = shlex.split(endpoint[len("stdio:"):])
            self._proc = subprocess.Popen(cmd, stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE, text=True,
                                          bufsize=1, encoding="utf-8")
            self._rfile, self._wfile = self._proc.stdout, self._proc.stdin
        else:
            host, _, port = endpoint.rpartition(":")
            if not host or not port.isdigit():
                raise BridgeProtocolError(f"bad endpoint {endpoint!r}; "
                                          "expected host:port or stdio:<command>")
            try:
                self._sock = socket.create_connection((host, int(port)), timeout=timeout)
            except OSError as exc:
                raise BridgeProtocolError(f"cannot reach bridge at {endpoint}: {exc}") from exc
            self._rfile = self._sock.makefile("r", encoding="utf-8", newline="\n")
            self._wfile = self._sock.makefile("w", encoding="utf-8", newline="\n")
        self._dims: Optional[dict] = None
        self._vocab_hash: Optional[str] = None

    def close(self) -> None:
        for obj in (self._rfile, self._wfile, self._sock):
            if obj is not None:
                try:
                    obj.close()
                except OSError:
                    pass
        if self._proc is not None:
            self._proc.terminate()
            self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def call(self, op: str, **fields) -> dict:
        self._next_id += 1
        rid = self._next_id
        request = {"op": op, "id": rid, **fields}
        try:
            self._wfile.write(json.dumps(request) + "\n")
            self._wfile.flush()
            line = self._rfile.readline()
        except OSError as exc:
            raise BridgeProtocolError(f"{op}: transport failure: {exc}") from exc
        if not line:
            raise BridgeProtocolError(f"{op}: connection closed by server")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeProtocolError(f"{op}: unparsable response: {exc}") from exc
        if not isinstance(response, dict) or response.get("id") != rid:
            raise BridgeProtocolError(f"{op}: response id mismatch")
        if not response.get("ok"):
            raise BridgeProtocolError(f"{op}: server error: {response.get('error', 'unknown')}")
        return response

    # -- typed ops ---------------------------------------------------------

    def ping(self) -> dict:
        response = self.call("ping")
        dims = response.get("dims")
        if not isinstance(dims, dict) or "lm_vocab" not in dims or "mm" not in dims:
            raise BridgeProtocolError("ping: missing dims")
        self._dims = dims
        self._vocab_hash = response.get("vocab_hash")
        return response

    @property
    def dims(self) -> dict:
        if self._dims is None:
            self.ping()
        return self._dims

    @property
    def vocab_hash(self) -> Optional[str]:
        if self._dims is None:
            self.ping()
        return self._vocab_hash

    def _vector(self, response: dict, field: str, op: str, dim: Optional[int],
                unit: bool = False) -> np.ndarray:
        raw = response.get(field)
        if not isinstance(raw, list):
            raise BridgeProtocolError(f"{op}: missing {field}")
        vec = np.asarray(raw, dtype=np.float64)
        if dim is not None and vec.shape != (dim,):
            raise BridgeProtocolError(f"{op}: expected length {dim}, got {vec.shape}")
        if not np.all(np.isfinite(vec)):
            raise BridgeProtocolError(f"{op}: non-finite values")
        if unit and abs(float(np.linalg.norm(vec)) - 1.0) > _UNIT_TOL:
            raise BridgeProtocolError(f"{op}: vector is not unit norm")
        return vec

    def lm_next(self, prefix: Sequence[int]) -> np.ndarray:
        response = self.call("lm_next", prefix=list(prefix))
        probs = self._vector(response, "probs", "lm_next", self.dims["lm_vocab"])
        if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > _PROB_TOL:
            raise BridgeProtocolError("lm_next: unnormalized distribution")
        return probs

    def lm_repr(self, prefix: Sequence[int], token: int) -> np.ndarray:
        response = self.call("lm_repr", prefix=list(prefix), token=int(token))
        return self._vector(response, "vec", "lm_repr", None)

    def embed_text(self, text: Optional[str] = None,
                   ids: Optional[Sequence[int]] = None) -> np.ndarray:
        if (text is None) == (ids is None):
            raise BridgeProtocolError("embed_text: pass exactly one of text or ids")
        fields = {"text": text} if text is not None else {"ids": list(ids)}
        response = self.call("embed_text", **fields)
        return self._vector(response, "vec", "embed_text", self.dims["mm"], unit=True)

    def embed_control(self, ref: str) -> np.ndarray:
        response = self.call("embed_control", ref=ref)
        return self._vector(response, "vec", "embed_control", self.dims["mm"], unit=True)

    def emb_token(self, tokens: Sequence[str]) -> list[Optional[np.ndarray]]:
        response = self.call("emb_token", tokens=list(tokens))
        raw = response.get("vectors")
        if not isinstance(raw, list) or len(raw) != len(tokens):
            raise BridgeProtocolError("emb_token: malformed vectors")
        dim = self.dims.get("emb")
        out = []
        for entry in raw:
            if entry is None:
                out.append(None)
            else:
                vec = np.asarray(entry, dtype=np.float64)
                if dim is not None and vec.shape != (dim,):
                    raise BridgeProtocolError(f"emb_token: expected length {dim}")
                out.append(vec)
        return out

    def fetch_vocab(self) -> list[str]:
        tokens: list[str] = []
        total = None
        while total is None or len(tokens) < total:
            response = self.call("vocab", start=len(tokens), count=_VOCAB_PAGE)
            page = response.get("tokens")
            total = response.get("total")
            if not isinstance(page, list) or not isinstance(total, int) or not page:
                raise BridgeProtocolError("vocab: malformed page")
            tokens.extend(page)
        if len(tokens) != total:
            raise BridgeProtocolError("vocab: page overrun")
        return tokens


# -- oracle adapters -------------------------------------------------------


class BridgeBaseLM(BaseLM):
    def __init__(self, client: BridgeClient):
        self.client = client

    def next_distribution(self, prefix: Sequence[int]) -> np.ndarray:
        return self.client.lm_next(prefix)

    def representation(self, prefix: Sequence[int], token: int) -> np.ndarray:
        return self.client.lm_repr(prefix, token)


class BridgeMultimodalOracle(MultimodalOracle):
    def __init__(self, client: BridgeClient, vocab: Vocabulary):
        self.client = client
        self.vocab = vocab
        self.dim = client.dims["mm"]

    def embed_text(self, tokens: Sequence[str]) -> np.ndarray:
        return self.client.embed_text(ids=[self.vocab.id_of(t) for t in tokens])

    def embed_control(self, ref: str) -> np.ndarray:
        return self.client.embed_control(ref)


class BridgeTextualOracle(TextualOracle):
    """Word-embedding lookups served by the bridge, fetched in bulk once and
    held as a vocabulary-aligned table (misses become zero rows)."""

    def __init__(self, client: BridgeClient, vocab: Vocabulary):
        self.client = client
        self.vocab = vocab
        dim = client.dims.get("emb")
        if not dim:
            raise BridgeProtocolError("bridge has no word-embedding backend configured")
        self.dim = dim
        self._table: Optional[EmbeddingTable] = None

    def _fetch(self) -> EmbeddingTable:
        if self._table is None:
            vectors = np.zeros((self.vocab.size, self.dim), dtype=np.float64)
            covered = set()
            for start in range(0, self.vocab.size, _EMB_CHUNK):
                chunk = self.vocab.tokens[start:start + _EMB_CHUNK]
                for offset, vec in enumerate(self.client.emb_token(chunk)):
                    if vec is not None:
                        vectors[start + offset] = vec
                        covered.add(start + offset)
            self._table = EmbeddingTable(dim=self.dim, vectors=vectors,
                                         covered=frozenset(covered))
        return self._table

    def embed_token(self, token: str) -> np.ndarray:
        return self._fetch().vectors[self.vocab.id_of(token)]

    def can_embed(self, token: str) -> bool:
        return token in self.vocab and self.vocab.id_of(token) in self._fetch().covered

    def oracle_id(self) -> str:
        return f"bridge:{self.client.vocab_hash}:emb"


# -- conformance -----------------------------------------------------------


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    ok: bool
    detail: str = ""


def run_conformance(client: BridgeClient,
                    vocab: Optional[Vocabulary] = None) -> list[ConformanceCheck]:
    """Protocol conformance probes against a live server: response schema,
    distribution normalization, determinism, unit norms, and the vocabulary
    hash handshake. Returns one result per check."""
    checks: list[ConformanceCheck] = []

    def run(name, fn):
        try:
            detail = fn() or ""
            checks.append(ConformanceCheck(name, True, detail))
        except Exception as exc:  # noqa: BLE001 - each probe reports independently
            checks.append(ConformanceCheck(name, False, str(exc)))

    def check_ping():
        response = client.ping()
        dims = response["dims"]
        for field in ("lm_vocab", "mm"):
            if not isinstance(dims.get(field), int) or dims[field] < 1:
                raise BridgeProtocolError(f"ping: bad dims[{field}]")
        return f"dims={dims}"

    run("ping schema", check_ping)

    def check_vocab_hash():
        import hashlib
        local = vocab
        if local is None:
            tokens = client.fetch_vocab()
            if len(tokens) != client.dims["lm_vocab"]:
                raise BridgeProtocolError("vocab length disagrees with lm_vocab dim")
            local = Vocabulary(tuple(tokens))
        digest = hashlib.sha256("\n".join(local.tokens).encode("utf-8")).hexdigest()
        if digest != client.vocab_hash:
            raise BridgeProtocolError(
                f"vocabulary hash mismatch: server {client.vocab_hash}, local {digest}")
        return digest[:12]

    run("vocabulary hash", check_vocab_hash)

    def check_lm_next():
        probs = client.lm_next([0])
        again = client.lm_next([0])
        if not np.array_equal(probs, again):
            raise BridgeProtocolError("lm_next is not deterministic")
        return f"sum={float(probs.sum()):.9f}"

    run("lm_next normalization+determinism", check_lm_next)

    def check_lm_repr():
        vec = client.lm_repr([0], 1)
        again = client.lm_repr([0], 1)
        if not np.array_equal(vec, again):
            raise BridgeProtocolError("lm_repr is not deterministic")
        return f"len={vec.shape[0]}"

    run("lm_repr determinism", check_lm_repr)

    def check_embed_text():
        vec = client.embed_text(ids=[0, 1])
        again = client.embed_text(ids=[0, 1])
        if not np.array_equal(vec, again):
            raise BridgeProtocolError("embed_text is not deterministic")
        client.embed_text(text="a")
        return f"norm={float(np.linalg.norm(vec)):.9f}"

    run("embed_text unit norm+determinism", check_embed_text)

    def check_embed_control():
        # servers resolve refs themselves; probe with a self-describing ref
        ref = getattr(client, "conformance_control_ref", "a")
        vec = client.embed_control(ref)
        again = client.embed_control(ref)
        if not np.array_equal(vec, again):
            raise BridgeProtocolError("embed_control is not deterministic")
        return f"norm={float(np.linalg.norm(vec)):.9f}"

    run("embed_control unit norm+determinism", check_embed_control)

    if client.dims.get("emb"):
        def check_emb_token():
            tokens = client.fetch_vocab()[:2] if vocab is None else list(vocab.tokens[:2])
            vecs = client.emb_token(tokens)
            if all(v is None for v in vecs):
                raise BridgeProtocolError("emb_token returned no vectors for vocab tokens")
            return f"dim={client.dims['emb']}"

        run("emb_token lookup", check_emb_token)

    return checks


def assert_conformance(client: BridgeClient, vocab: Optional[Vocabulary] = None) -> None:
    failures = [c for c in run_conformance(client, vocab) if not c.ok]
    if failures:
        lines = "; ".join(f"{c.name}: {c.detail}" for c in failures)
        raise BridgeProtocolError(f"bridge conformance failed: {lines}")
