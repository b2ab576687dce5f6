"""Command line entry points.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 backend
failure. Commands that emit records write canonical JSON, one object per
line, either to stdout or to --out."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import canon
from .corpus import chunk_document, dedup_guidelines, load_corpus, meta_to_record
from .counterfactual import (
    CfConfig,
    balance_counterfactuals,
    encode_counterfactual_record,
    generate_counterfactual_with_stats,
)
from .extraction import (
    BackendError,
    ResponseParseError,
    extract_recommendations_with_stats,
    make_backend,
    candidate_to_obj,
)
from .factual import (
    FactualConfig,
    decode_factual_record,
    encode_factual_record,
    generate_factual_with_stats,
)
from .executor import Decided, execute, partial_execute
from .model import BOOLEAN, NUMERIC, Assignment, DecisionTree, ModelError
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .questions import render_factual_question
from .store import InstanceStore
from .treeio import TreeFormatError, enumerate_paths, parse_tree, predicate_obj, validate_tree
from .verifier import EQUIVALENCE, STRICT, score_response

logger = logging.getLogger(__name__)

OK = 0
USAGE = 1
VALIDATION = 2
BACKEND = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(USAGE)


def _load_tree(path: str) -> DecisionTree:
    return parse_tree(Path(path).read_text(encoding="utf-8"))


def _out_stream(args):
    if getattr(args, "out", None):
        return open(args.out, "w", encoding="utf-8")
    return sys.stdout


def _emit_lines(args, objs) -> None:
    stream = _out_stream(args)
    try:
        for obj in objs:
            stream.write(canon.dumps(obj) + "\n")
    finally:
        if stream is not sys.stdout:
            stream.close()


def _parse_assignment(tree: DecisionTree, pairs: list[str]) -> Assignment:
    out: Assignment = {}
    for pair in pairs:
        name, sep, raw = pair.partition("=")
        if not sep:
            raise ModelError(f"--assign expects name=value, got {pair!r}")
        spec = tree.variable(name)
        if spec.kind == BOOLEAN:
            low = raw.strip().casefold()
            if low not in ("true", "false"):
                raise ModelError(f"{name}: boolean value must be true or false, got {raw!r}")
            out[name] = low == "true"
        elif spec.kind == NUMERIC:
            try:
                out[name] = float(raw)
            except ValueError:
                raise ModelError(f"{name}: not a number: {raw!r}") from None
        else:
            out[name] = raw
    return out


# ---------------------------------------------------------------------------
# commands

def _cmd_validate(args) -> int:
    tree = _load_tree(args.tree)
    report = validate_tree(tree)
    for f in report.findings:
        print(f"{f.severity} {f.code} [{f.locator}] {f.message}")
    print(f"{'ok' if report.ok else 'invalid'}: {len(report.errors())} errors, "
          f"{len(report.warnings())} warnings")
    return OK if report.ok else VALIDATION


def _cmd_paths(args) -> int:
    tree = _load_tree(args.tree)
    objs = []
    for p in enumerate_paths(tree):
        steps = []
        for s in p.steps:
            obj = predicate_obj(s.predicate)
            obj["taken"] = s.taken
            steps.append(obj)
        objs.append(
            {
                "path_id": p.path_id,
                "leaf": p.leaf_output_index,
                "label": tree.outputs[p.leaf_output_index],
                "satisfiable": p.satisfiable(),
                "steps": steps,
                "constraints": {
                    v.name: p.constraints.describe(v.name) for v in tree.variables
                },
            }
        )
    _emit_lines(args, objs)
    return OK


def _cmd_exec(args) -> int:
    tree = _load_tree(args.tree)
    assignment = _parse_assignment(tree, args.assign or [])
    if args.partial:
        residual = partial_execute(tree, assignment)
        if isinstance(residual, Decided):
            r = residual.result
            obj = {"decided": True, "label": r.label, "output_index": r.output_index}
        else:
            obj = {
                "decided": False,
                "reachable": sorted(residual.reachable),
                "blocking": sorted(residual.blocking),
            }
        print(canon.dumps(obj))
        return OK
    result = execute(tree, assignment)
    steps = []
    for s in result.path:
        obj = predicate_obj(s.predicate)
        obj["taken"] = s.taken
        steps.append(obj)
    print(canon.dumps({"label": result.label, "output_index": result.output_index, "path": steps}))
    return OK


def _cmd_sample_factual(args) -> int:
    tree = _load_tree(args.tree)
    cfg = FactualConfig(seed=args.seed, per_path=args.per_path, no_action_cap=args.no_action_cap)
    instances, stats = generate_factual_with_stats(tree, cfg)
    if args.questions:
        from dataclasses import replace

        instances = [replace(i, question_text=render_factual_question(i, tree)) for i in instances]
    _emit_lines(args, (encode_factual_record(i) for i in instances))
    if stats.balance_infeasible:
        print("warning: no-action balance infeasible under coverage", file=sys.stderr)
    return OK


def _cmd_sample_cf(args) -> int:
    tree = _load_tree(args.tree)
    pool = []
    for line in Path(args.factual).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        inst = decode_factual_record(json.loads(line))
        if inst.tree_id == tree.id:
            pool.append(inst)
    if not pool:
        raise ModelError(f"no factual instances for tree {tree.id!r} in {args.factual}")
    cfg = CfConfig(
        seed=args.seed,
        hidden_count=args.hidden_count,
        identifiable_only=args.identifiable_only,
        per_tree=args.per_tree,
        no_action_cap=args.no_action_cap,
    )
    accepted, _ = generate_counterfactual_with_stats(tree, pool, cfg)
    balanced = balance_counterfactuals(accepted, tree, args.no_action_cap, args.seed)
    _emit_lines(
        args,
        (encode_counterfactual_record(i, redact_gold=args.redact_gold) for i in balanced),
    )
    return OK


def _cmd_verify(args) -> int:
    store = InstanceStore.load(args.trees, args.factual, args.cf)
    mode = EQUIVALENCE if args.credit_equivalence_class else STRICT
    from .service import reply_obj

    replies = []
    for line in Path(args.responses).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        replies.append(reply_obj(score_response(store, obj["instance_id"], obj["response"], mode)))
    _emit_lines(args, replies)
    return OK


def _cmd_serve(args) -> int:
    from .service import serve_http, serve_stdio

    store = InstanceStore.load(args.trees, args.factual, args.cf)
    mode = EQUIVALENCE if args.credit_equivalence_class else STRICT
    counts = store.counts()
    logger.info(
        "store loaded: %d factual, %d counterfactual, %d trees",
        counts["factual"], counts["counterfactual"], counts["trees"],
    )
    if args.stdio:
        serve_stdio(store, mode)
    else:
        serve_http(store, mode, args.host, args.port)
    return OK


def _cmd_curate(args) -> int:
    corpus = load_corpus(args.corpus)
    survivors = dedup_guidelines([m for m, _ in corpus])
    texts = {m.guideline_id: t for m, t in corpus}
    chunks = [
        (meta, chunk)
        for meta in survivors
        for chunk in chunk_document(meta.guideline_id, texts[meta.guideline_id],
                                     args.soft_limit, args.max_chunks)
    ]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "metadata.jsonl").open("w", encoding="utf-8") as fh:
            for meta in survivors:
                fh.write(canon.dumps(meta_to_record(meta)) + "\n")
        with (out / "chunks.jsonl").open("w", encoding="utf-8") as fh:
            for meta, chunk in chunks:
                fh.write(canon.dumps({
                    "chunk_id": chunk.chunk_id,
                    "guideline_id": meta.guideline_id,
                    "word_count": chunk.word_count,
                    "overflow": chunk.overflow,
                    "text": chunk.text,
                }) + "\n")
        print(f"kept {len(survivors)}/{len(corpus)} guidelines, wrote "
              f"{len(chunks)} chunks under {out}")
    else:
        for _, chunk in chunks:
            print(canon.dumps({
                "chunk_id": chunk.chunk_id,
                "word_count": chunk.word_count,
                "overflow": chunk.overflow,
            }))
    return OK


def _cmd_extract(args) -> int:
    backend = make_backend(args.fixtures)
    corpus = load_corpus(args.corpus)
    survivors = dedup_guidelines([m for m, _ in corpus])
    texts = {m.guideline_id: t for m, t in corpus}
    objs = []
    for meta in survivors:
        for chunk in chunk_document(meta.guideline_id, texts[meta.guideline_id],
                                     args.soft_limit, args.max_chunks):
            kept, _ = extract_recommendations_with_stats(chunk, backend)
            objs.extend(candidate_to_obj(c) for c in kept)
    _emit_lines(args, objs)
    return OK


def _cmd_stats(args) -> int:
    from .report import write_report

    written = write_report(args.out_dir, args.factual, args.cf, args.manifest)
    print(f"wrote {written['csv']}")
    for fig in written["figures"]:
        print(f"wrote {fig}")
    return OK


def _cmd_run(args) -> int:
    cfg = PipelineConfig(
        corpus_dir=args.corpus,
        out_dir=args.out,
        seed=args.seed,
        fixture_dir=args.fixtures,
        soft_limit=args.soft_limit,
        max_chunks=args.max_chunks,
        per_path=args.per_path,
        no_action_cap=args.no_action_cap,
        hidden_count=args.hidden_count,
        identifiable_only=args.identifiable_only,
        per_tree=args.per_tree,
        redact_gold=args.redact_gold,
        questions=args.questions,
    )
    manifest = run_pipeline(cfg)
    for key in sorted(manifest["counts"]):
        print(f"{key}: {manifest['counts'][key]}")
    print(f"wrote {Path(args.out) / 'manifest.json'}")
    return OK


# ---------------------------------------------------------------------------
# wiring

def _add_sample_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--no-action-cap", type=float, default=0.5)
    p.add_argument("--out", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="guidex", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("validate", help="validate a tree document")
    p.add_argument("tree")
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("paths", help="enumerate root-to-leaf paths")
    p.add_argument("tree")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_paths)

    p = sub.add_parser("exec", help="execute an assignment")
    p.add_argument("tree")
    p.add_argument("--assign", action="append", metavar="NAME=VALUE")
    p.add_argument("--partial", action="store_true",
                   help="allow missing variables and report the residual")
    p.set_defaults(fn=_cmd_exec)

    p = sub.add_parser("sample-factual", help="generate factual QA records")
    p.add_argument("tree")
    p.add_argument("--per-path", type=int, default=2)
    p.add_argument("--questions", action="store_true")
    _add_sample_common(p)
    p.set_defaults(fn=_cmd_sample_factual)

    p = sub.add_parser("sample-cf", help="generate counterfactual QA records")
    p.add_argument("tree")
    p.add_argument("--factual", required=True, help="factual JSONL to draw scenarios from")
    p.add_argument("--hidden-count", type=int, default=1)
    p.add_argument("--per-tree", type=int, default=16)
    p.add_argument("--identifiable-only", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--redact-gold", action="store_true")
    _add_sample_common(p)
    p.set_defaults(fn=_cmd_sample_cf)

    p = sub.add_parser("verify", help="score a file of model responses")
    p.add_argument("--trees", required=True)
    p.add_argument("--factual")
    p.add_argument("--cf")
    p.add_argument("--responses", required=True)
    p.add_argument("--credit-equivalence-class", action="store_true")
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("serve", help="reward service over stdio or HTTP")
    p.add_argument("--trees", required=True)
    p.add_argument("--factual")
    p.add_argument("--cf")
    p.add_argument("--credit-equivalence-class", action="store_true")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--stdio", action="store_true")
    mode.add_argument("--port", type=int)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(fn=_cmd_serve)

    p = sub.add_parser("curate", help="dedup guidelines and chunk documents")
    p.add_argument("corpus")
    p.add_argument("--soft-limit", type=int, default=4500)
    p.add_argument("--max-chunks", type=int, default=4)
    p.add_argument("--out", help="directory for metadata.jsonl and chunks.jsonl")
    p.set_defaults(fn=_cmd_curate)

    p = sub.add_parser("extract", help="extract recommendation candidates")
    p.add_argument("--corpus", required=True)
    p.add_argument("--fixtures", help="fixture dir; omit to use the HTTP backend from env")
    p.add_argument("--soft-limit", type=int, default=4500)
    p.add_argument("--max-chunks", type=int, default=4)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_extract)

    p = sub.add_parser("stats", help="dataset statistics: CSV plus figures")
    p.add_argument("--factual")
    p.add_argument("--cf")
    p.add_argument("--manifest")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_stats)

    p = sub.add_parser("run", help="full pipeline: corpus to datasets plus manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fixtures", help="fixture dir; omit to use the HTTP backend from env")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--soft-limit", type=int, default=4500)
    p.add_argument("--max-chunks", type=int, default=4)
    p.add_argument("--per-path", type=int, default=2)
    p.add_argument("--no-action-cap", type=float, default=0.5)
    p.add_argument("--hidden-count", type=int, default=1)
    p.add_argument("--identifiable-only", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--per-tree", type=int, default=16)
    p.add_argument("--redact-gold", action="store_true")
    p.add_argument("--questions", action="store_true")
    p.set_defaults(fn=_cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except (TreeFormatError, ModelError, ResponseParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return VALIDATION
    except BackendError as e:
        print(f"backend error: {e}", file=sys.stderr)
        return BACKEND
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return BACKEND if isinstance(e.cause, BackendError) else VALIDATION
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return VALIDATION
    except json.JSONDecodeError as e:
        print(f"error: malformed JSON input: {e}", file=sys.stderr)
        return VALIDATION


if __name__ == "__main__":
    sys.exit(main())
