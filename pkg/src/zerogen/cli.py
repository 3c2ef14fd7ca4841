"""Command-line front end.

``zerogen generate`` runs guided decoding with toy (corpus + embedding table)
or bridge oracles and writes three artifacts: the generated text (one line per
prompt, generated tokens only), a JSONL step trace, and a run manifest that
pins every input needed for a bit-exact replay. ``zerogen eval`` scores an
output file; ``zerogen replay`` re-runs a manifest and verifies the outputs
are byte-identical.

Exit codes: 0 success, 2 configuration/input error, 3 oracle error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import __version__
from .bridge import (BridgeBaseLM, BridgeClient, BridgeMultimodalOracle,
                     BridgeTextualOracle)
from .core import (DecoderConfig, TextualControl, VisualControl, Vocabulary,
                   config_to_text, load_config, load_preset, parse_config,
                   validate_config)
from .decoder import GenerationSession, write_trace_jsonl
from .errors import ConfigError, OracleError, ZeroGenError
from .metrics import EvalReport, REPORT_FIELDS, distinct_n, keyword_hit_rate, perplexity
from .oracles import (NGramToyLM, OracleSet, TableMultimodalOracle,
                      TableTextualOracle, cosine, load_corpus, load_embedding_table,
                      resolve_visual_control)
from .textual import (build_similarity_matrix, load_matrix_cache, matrix_cache_key,
                      save_matrix_cache)

MANIFEST_VERSION = 1


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--preset", choices=("coco", "flickr30k", "visnews"),
                   help="load a shipped task preset")
    p.add_argument("--k", type=int)
    p.add_argument("--eta", type=float)
    p.add_argument("--lambda", dest="lambda_", type=float)
    p.add_argument("--alpha-max", type=float)
    p.add_argument("--beta-max", type=float)
    p.add_argument("--n-hat", help='subset size for the textual weight, or "all"')
    p.add_argument("--selection", choices=("sr", "mp", "wm"))
    p.add_argument("--max-len", type=int)
    p.add_argument("--seed", type=int)


def _add_oracle_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help="whitespace-tokenized training corpus (toy LM + vocabulary)")
    p.add_argument("--emb-table", help="text embedding table, one 'token v1 .. vd' line each")
    p.add_argument("--ngram-order", type=int, default=2)
    p.add_argument("--ngram-ks", type=float, default=0.5)
    p.add_argument("--bridge", help="remote oracle endpoint host:port or stdio:<command> "
                                    "(env ZEROGEN_BRIDGE overrides)")


def _add_control_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--keywords", help="comma-separated keyword list")
    p.add_argument("--control-vec", help="text file of control embedding floats")
    p.add_argument("--control-ref", help="control reference resolved by the multimodal oracle")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zerogen")
    parser.add_argument("--version", action="version", version=f"zerogen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="run guided decoding")
    _add_config_flags(gen)
    _add_oracle_flags(gen)
    _add_control_flags(gen)
    gen.add_argument("--prompt", help="prompt text (whitespace-tokenized)")
    gen.add_argument("--prompts-file", help="file with one prompt per line")
    gen.add_argument("--out", default="zerogen_run.txt", help="output text path")
    gen.add_argument("--trace", help="step trace path (JSONL); default <out>.trace.jsonl")
    gen.add_argument("--manifest", help="run manifest path; default <out>.manifest.json")
    gen.add_argument("--matrix-cache", help="optional binary cache for the similarity matrix")
    gen.add_argument("--jobs", type=int, default=1,
                     help="independent prompts decoded concurrently")

    ev = sub.add_parser("eval", help="score a generated output file")
    ev.add_argument("output", help="generated text, one sequence per line")
    _add_oracle_flags(ev)
    _add_control_flags(ev)
    ev.add_argument("--json", action="store_true", help="emit the report as JSON")
    ev.add_argument("--report", help="also write the JSON report to this path")

    rp = sub.add_parser("replay", help="re-run a manifest and verify byte-identical outputs")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="where to write the replayed output (default: temp next to manifest)")
    rp.add_argument("--trace", help="where to write the replayed trace")
    return parser


@dataclass
class Runtime:
    vocab: Vocabulary
    oracles: OracleSet
    meta: dict


def _build_runtime(corpus: Optional[str], emb_table: Optional[str], ngram_order: int,
                   ngram_ks: float, bridge: Optional[str],
                   need_textual: bool, need_multimodal: bool) -> Runtime:
    endpoint = os.environ.get("ZEROGEN_BRIDGE") or bridge
    if endpoint:
        client = BridgeClient(endpoint)
        client.ping()
        if corpus:
            vocab = Vocabulary.from_corpus(load_corpus(corpus))
            if vocab.hash() != client.vocab_hash:
                raise OracleError("bridge vocabulary hash does not match the configured vocabulary")
        else:
            vocab = Vocabulary(tuple(client.fetch_vocab()))
            if vocab.hash() != client.vocab_hash:
                raise OracleError("bridge vocabulary hash does not match its own token list")
        textual = BridgeTextualOracle(client, vocab) if need_textual else None
        multimodal = BridgeMultimodalOracle(client, vocab) if need_multimodal else None
        oracles = OracleSet(lm=BridgeBaseLM(client), textual=textual, multimodal=multimodal)
        meta = {"mode": "bridge", "endpoint": endpoint, "vocab_hash": client.vocab_hash}
        return Runtime(vocab=vocab, oracles=oracles, meta=meta)

    if not corpus or not emb_table:
        raise ConfigError("toy oracles need both --corpus and --emb-table "
                          "(or use --bridge/ZEROGEN_BRIDGE)")
    corpus_tokens = load_corpus(corpus)
    if not corpus_tokens:
        raise ConfigError(f"corpus {corpus!r} is empty")
    vocab = Vocabulary.from_corpus(corpus_tokens)
    table = load_embedding_table(emb_table, vocab)
    lm = NGramToyLM(ngram_order, vocab, k_s=ngram_ks, repr_table=table)
    lm.fit([vocab.id_of(tok) for tok in corpus_tokens])
    oracles = OracleSet(lm=lm,
                        textual=TableTextualOracle(table, vocab) if need_textual else None,
                        multimodal=TableMultimodalOracle(table, vocab) if need_multimodal else None)
    meta = {"mode": "toy", "corpus": corpus, "corpus_sha256": _sha256_file(corpus),
            "emb_table": emb_table, "emb_table_sha256": _sha256_file(emb_table),
            "ngram_order": ngram_order, "ngram_ks": ngram_ks}
    return Runtime(vocab=vocab, oracles=oracles, meta=meta)


def _load_control_vector(path: str) -> np.ndarray:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            values = [float(x) for x in fh.read().split()]
    except ValueError:
        raise ConfigError(f"control vector file {path!r} has non-numeric entries") from None
    if not values:
        raise ConfigError(f"control vector file {path!r} is empty")
    return np.asarray(values, dtype=np.float64)


def _resolve_cfg(config: Optional[str], preset: Optional[str], overrides: dict) -> DecoderConfig:
    if config and preset:
        raise ConfigError("pass either --config or --preset, not both")
    if preset:
        cfg = load_preset(preset)
    elif config:
        cfg = load_config(config)
    else:
        cfg = DecoderConfig()
    clean = {}
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "n_hat" and value != "all":
            try:
                value = int(value)
            except ValueError:
                raise ConfigError('--n-hat takes an integer or "all"') from None
        clean[key] = value
    return replace(cfg, **clean)


def _generate_one(runtime: Runtime, cfg: DecoderConfig, tctl: TextualControl,
                  vctl: Optional[VisualControl], matrix, prompt: str):
    try:
        prompt_ids = [runtime.vocab.id_of(tok) for tok in prompt.split()]
    except ConfigError as exc:
        raise ConfigError(f"prompt token error: {exc}") from exc
    session = GenerationSession(runtime.vocab, cfg, runtime.oracles, tctl, vctl,
                                matrix=matrix)
    ids, traces = session.generate(prompt_ids)
    generated = ids[len(prompt_ids):]
    text = " ".join(runtime.vocab.tokens[i] for i in generated)
    return text, traces


def cmd_generate(args: argparse.Namespace) -> int:
    overrides = {key: getattr(args, key) for key in
                 ("k", "eta", "lambda_", "alpha_max", "beta_max", "n_hat",
                  "selection", "max_len", "seed")}
    cfg = _resolve_cfg(args.config, args.preset, overrides)

    keywords = tuple(kw for kw in (args.keywords or "").split(",") if kw)
    tctl = TextualControl(keywords=keywords)
    if args.control_vec and args.control_ref:
        raise ConfigError("pass either --control-vec or --control-ref, not both")
    vctl = None
    if args.control_vec:
        vctl = VisualControl(vector=_load_control_vector(args.control_vec))
    elif args.control_ref:
        vctl = VisualControl(ref=args.control_ref)

    if args.prompt and args.prompts_file:
        raise ConfigError("pass either --prompt or --prompts-file, not both")
    if args.prompt:
        prompts = [args.prompt]
    elif args.prompts_file:
        with open(args.prompts_file, "r", encoding="utf-8") as fh:
            prompts = [line.strip() for line in fh if line.strip()]
        if not prompts:
            raise ConfigError(f"prompts file {args.prompts_file!r} is empty")
    else:
        raise ConfigError("a prompt is required (--prompt or --prompts-file)")

    runtime = _build_runtime(args.corpus, args.emb_table, args.ngram_order,
                             args.ngram_ks, args.bridge,
                             need_textual=bool(keywords), need_multimodal=vctl is not None)
    cfg = validate_config(cfg, runtime.vocab, tctl)

    matrix = None
    if keywords:
        if runtime.oracles.textual is None:
            raise ConfigError("keywords given but no textual oracle available")
        key = matrix_cache_key(runtime.vocab, tctl, runtime.oracles.textual.oracle_id(),
                               cfg.floor_similarities)
        if args.matrix_cache and os.path.exists(args.matrix_cache):
            matrix = load_matrix_cache(args.matrix_cache, key, keywords)
        if matrix is None:
            matrix = build_similarity_matrix(runtime.vocab, tctl, runtime.oracles.textual,
                                             floor=cfg.floor_similarities)
            if args.matrix_cache:
                save_matrix_cache(args.matrix_cache, matrix, key)

    if args.jobs > 1 and len(prompts) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(
                lambda p: _generate_one(runtime, cfg, tctl, vctl, matrix, p), prompts))
    else:
        results = [_generate_one(runtime, cfg, tctl, vctl, matrix, p) for p in prompts]

    out_path = args.out
    trace_path = args.trace or out_path + ".trace.jsonl"
    manifest_path = args.manifest or out_path + ".manifest.json"

    with open(out_path, "w", encoding="utf-8") as fh:
        for text, _ in results:
            fh.write(text + "\n")
    write_trace_jsonl(trace_path, [traces for _, traces in results], runtime.vocab)

    control_meta = None
    if args.control_vec:
        control_meta = {"vec_file": args.control_vec,
                        "sha256": _sha256_file(args.control_vec)}
    elif args.control_ref:
        control_meta = {"ref": args.control_ref}
    manifest = {
        "version": MANIFEST_VERSION,
        "config": config_to_text(cfg),
        "oracles": runtime.meta,
        "keywords": list(keywords),
        "control": control_meta,
        "prompts": prompts,
        "seed": cfg.seed,
        "out": out_path,
        "trace": trace_path,
        "output_sha256": _sha256_file(out_path),
        "trace_sha256": _sha256_file(trace_path),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    print(f"wrote {out_path} ({len(prompts)} sequence(s)), trace {trace_path}, "
          f"manifest {manifest_path}")
    return 0


def _rerun_manifest(manifest: dict, out_path: str, trace_path: str) -> None:
    cfg = parse_config(manifest["config"])
    meta = manifest["oracles"]
    keywords = tuple(manifest["keywords"])
    control = manifest.get("control")
    if meta["mode"] == "toy":
        for label, path_key, sha_key in (("corpus", "corpus", "corpus_sha256"),
                                         ("embedding table", "emb_table", "emb_table_sha256")):
            if _sha256_file(meta[path_key]) != meta[sha_key]:
                raise ConfigError(f"{label} {meta[path_key]!r} changed since the manifest was written")
        runtime = _build_runtime(meta["corpus"], meta["emb_table"], meta["ngram_order"],
                                 meta["ngram_ks"], None,
                                 need_textual=bool(keywords),
                                 need_multimodal=control is not None)
    else:
        runtime = _build_runtime(None, None, 2, 0.5, meta["endpoint"],
                                 need_textual=bool(keywords),
                                 need_multimodal=control is not None)
        if runtime.meta["vocab_hash"] != meta["vocab_hash"]:
            raise OracleError("bridge vocabulary changed since the manifest was written")

    tctl = TextualControl(keywords=keywords)
    vctl = None
    if control and "vec_file" in control:
        if _sha256_file(control["vec_file"]) != control["sha256"]:
            raise ConfigError(f"control vector {control['vec_file']!r} changed since the manifest")
        vctl = VisualControl(vector=_load_control_vector(control["vec_file"]))
    elif control:
        vctl = VisualControl(ref=control["ref"])

    cfg = validate_config(cfg, runtime.vocab, tctl)
    results = [_generate_one(runtime, cfg, tctl, vctl, None, p) for p in manifest["prompts"]]
    with open(out_path, "w", encoding="utf-8") as fh:
        for text, _ in results:
            fh.write(text + "\n")
    write_trace_jsonl(trace_path, [traces for _, traces in results], runtime.vocab)


def cmd_replay(args: argparse.Namespace) -> int:
    with open(args.manifest, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    out_path = args.out or args.manifest + ".replay.txt"
    trace_path = args.trace or args.manifest + ".replay.trace.jsonl"
    _rerun_manifest(manifest, out_path, trace_path)
    ok = (_sha256_file(out_path) == manifest["output_sha256"]
          and _sha256_file(trace_path) == manifest["trace_sha256"])
    if ok:
        print(f"replay OK: {out_path} and {trace_path} are byte-identical to the recorded run")
        return 0
    print("replay MISMATCH: outputs differ from the recorded run", file=sys.stderr)
    return 1


def cmd_eval(args: argparse.Namespace) -> int:
    try:
        with open(args.output, "r", encoding="utf-8") as fh:
            lines = [line.split() for line in fh if line.strip()]
    except OSError as exc:
        raise ConfigError(f"cannot read output file: {exc}") from exc
    if not lines:
        raise ConfigError(f"output file {args.output!r} is empty")

    keywords = tuple(kw for kw in (args.keywords or "").split(",") if kw)
    need_mm = bool(args.control_vec or args.control_ref)
    runtime = _build_runtime(args.corpus, args.emb_table, args.ngram_order,
                             args.ngram_ks, args.bridge,
                             need_textual=False, need_multimodal=need_mm)

    vctl_embed = None
    if need_mm:
        vctl = (VisualControl(vector=_load_control_vector(args.control_vec))
                if args.control_vec else VisualControl(ref=args.control_ref))
        vctl_embed = resolve_visual_control(vctl, runtime.oracles.multimodal)

    per_line = []
    for tokens in lines:
        ids = [runtime.vocab.id_of(tok) for tok in tokens]
        sim = 0.0
        if vctl_embed is not None:
            sim = cosine(runtime.oracles.multimodal.embed_text(tokens), vctl_embed)
        per_line.append((
            distinct_n(ids, 2),
            distinct_n(ids, 4),
            sim,
            keyword_hit_rate(tokens, keywords),
            perplexity(ids, runtime.oracles.lm),
        ))
    means = [float(np.mean([row[i] for row in per_line])) for i in range(5)]
    report = EvalReport(*means)

    if args.json:
        print(report.to_json())
    else:
        for name in REPORT_FIELDS:
            print(f"{name:<18} {getattr(report, name):.6f}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"generate": cmd_generate, "eval": cmd_eval, "replay": cmd_replay}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return 3
    except ZeroGenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
