"""The wire protocol and its serving loops.

Newline-delimited JSON; requests {"op", "id", ...}, responses {"id", "ok",
...}. Ops: ping, lm_next, lm_repr, embed_text (by text or token ids),
embed_control, emb_token (bulk word-embedding lookups, null on a miss), and
vocab (paged token list). A request that fails produces an error response
naming the op; it never tears down the stream. One worker thread serves each
connection; backend calls are serialized under a global lock so concurrent
sessions stay deterministic.
"""

from __future__ import annotations

import json
import socketserver
import sys
import threading
from typing import Optional, Sequence

import numpy as np

from .backends import BackendError, vocab_hash

PROTOCOL_VERSION = 1


class BridgeSession:
    """Loaded backends plus the vocabulary the protocol exposes."""

    def __init__(self, lm, word_table: Optional[dict], joint):
        self.lm = lm
        self.word_table = word_table
        self.joint = joint
        self.tokens: list[str] = list(lm.tokens)
        self.vocab_hash = vocab_hash(self.tokens)
        self._lock = threading.Lock()

    # -- helpers -----------------------------------------------------------

    def _check_ids(self, ids: Sequence, field: str) -> list[int]:
        if not isinstance(ids, list) or not all(isinstance(i, int) for i in ids):
            raise BackendError(f"{field} must be a list of token ids")
        for i in ids:
            if not 0 <= i < len(self.tokens):
                raise BackendError(f"token id {i} out of range")
        return ids

    def _ids_to_text(self, ids: Sequence[int]) -> str:
        if hasattr(self.lm, "decode"):
            return self.lm.decode(ids)
        return " ".join(self.tokens[i] for i in ids)

    # -- ops ---------------------------------------------------------------

    def handle(self, request: dict) -> dict:
        rid = request.get("id")
        op = request.get("op")
        try:
            if not isinstance(op, str):
                raise BackendError("missing op")
            method = getattr(self, f"_op_{op}", None)
            if method is None:
                raise BackendError(f"unknown op {op!r}")
            with self._lock:
                body = method(request)
            return {"id": rid, "ok": True, **body}
        except Exception as exc:  # noqa: BLE001 - per-request error responses
            return {"id": rid, "ok": False, "op": op, "error": str(exc)}

    def _op_ping(self, request: dict) -> dict:
        dims = {"lm_vocab": len(self.tokens), "mm": self.joint.dim}
        if self.word_table is not None:
            dims["emb"] = len(next(iter(self.word_table.values())))
        return {"dims": dims, "vocab_hash": self.vocab_hash,
                "protocol": PROTOCOL_VERSION}

    def _op_lm_next(self, request: dict) -> dict:
        prefix = self._check_ids(request.get("prefix"), "prefix")
        probs = np.asarray(self.lm.next_probs(prefix), dtype=np.float64)
        probs = np.maximum(probs, 0.0)
        probs = probs / probs.sum()
        return {"probs": probs.tolist()}

    def _op_lm_repr(self, request: dict) -> dict:
        prefix = self._check_ids(request.get("prefix"), "prefix")
        token = request.get("token")
        if not isinstance(token, int) or not 0 <= token < len(self.tokens):
            raise BackendError("token must be a valid token id")
        vec = self.lm.hidden_state(prefix, token, self.word_table)
        return {"vec": np.asarray(vec, dtype=np.float64).tolist()}

    def _op_embed_text(self, request: dict) -> dict:
        if "ids" in request:
            text = self._ids_to_text(self._check_ids(request["ids"], "ids"))
        elif isinstance(request.get("text"), str):
            text = request["text"]
        else:
            raise BackendError("embed_text needs text or ids")
        vec = np.asarray(self.joint.embed_text(text), dtype=np.float64)
        return {"vec": (vec / float(np.linalg.norm(vec))).tolist()}

    def _op_embed_control(self, request: dict) -> dict:
        ref = request.get("ref")
        if not isinstance(ref, str):
            raise BackendError("embed_control needs a ref string")
        vec = np.asarray(self.joint.embed_control(ref), dtype=np.float64)
        return {"vec": (vec / float(np.linalg.norm(vec))).tolist()}

    def _op_emb_token(self, request: dict) -> dict:
        tokens = request.get("tokens")
        if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
            raise BackendError("emb_token needs a list of token strings")
        if self.word_table is None:
            raise BackendError("no word-embedding backend configured")
        out = []
        for tok in tokens:
            vec = self.word_table.get(tok)
            out.append(None if vec is None else vec.tolist())
        return {"vectors": out}

    def _op_vocab(self, request: dict) -> dict:
        start = request.get("start", 0)
        count = request.get("count", 4096)
        if not isinstance(start, int) or not isinstance(count, int) or count < 1:
            raise BackendError("vocab needs integer start and positive count")
        return {"tokens": self.tokens[start:start + count], "total": len(self.tokens)}


def _handle_line(session: BridgeSession, line: str) -> dict:
    try:
        request = json.loads(line)
        if not isinstance(request, dict):
            raise ValueError("request must be an object")
    except ValueError as exc:
        return {"id": None, "ok": False, "op": None,
                "error": f"unparsable request: {exc}"}
    return session.handle(request)


def serve_stdio(session: BridgeSession) -> None:
    for line in sys.stdin:
        if not line.strip():
            continue
        sys.stdout.write(json.dumps(_handle_line(session, line)) + "\n")
        sys.stdout.flush()


def serve_tcp(session: BridgeSession, host: str, port: int,
              announce=print) -> None:
    class Handler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                line = raw.decode("utf-8", errors="replace")
                if not line.strip():
                    continue
                try:
                    request = json.loads(line)
                    if not isinstance(request, dict):
                        raise ValueError("request must be an object")
                except ValueError as exc:
                    response = {"id": None, "ok": False, "op": None,
                                "error": f"unparsable request: {exc}"}
                else:
                    response = session.handle(request)
                self.wfile.write((json.dumps(response) + "\n").encode("utf-8"))
                self.wfile.flush()

    class Server(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    with Server((host, port), Handler) as server:
        bound_host, bound_port = server.server_address[:2]
        announce(f"listening on {bound_host}:{bound_port}")
        server.serve_forever(poll_interval=0.1)
