"""End-to-end dataset build: curate -> chunk -> extract -> draft ->
sample factual -> sample counterfactual -> emit.

Every emitted artifact is canonical and the whole run is a pure function of
the corpus, the backend's responses and the seed; the manifest records stage
counts, the config echo and sha256 digests of every emitted file (its own
timestamp stays out of the digests)."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

from . import canon
from .corpus import Chunk, GuidelineMeta, chunk_document, dedup_guidelines, load_corpus
from .counterfactual import (
    CfConfig,
    balance_counterfactuals,
    cf_balance_infeasible,
    encode_counterfactual_record,
    generate_counterfactual_with_stats,
)
from .extraction import (
    BackendError,
    DraftRejectedError,
    ExtractionBackend,
    extract_recommendations_with_stats,
    make_backend,
)
from .factual import FactualConfig, encode_factual_record, generate_factual_with_stats
from .model import DecisionTree, ModelError, Source, TreeMeta
from .questions import render_factual_question
from .treeio import serialize_tree

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PipelineConfig:
    corpus_dir: str
    out_dir: str
    seed: int = 7
    fixture_dir: str | None = None  # None means the HTTP backend from env
    soft_limit: int = 4500
    max_chunks: int = 4
    per_path: int = 2
    no_action_cap: float = 0.5
    hidden_count: int = 1
    identifiable_only: bool = True
    per_tree: int = 16
    redact_gold: bool = False
    questions: bool = False


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"pipeline stage {stage!r} failed: {cause}")


def _tree_meta(meta: GuidelineMeta) -> TreeMeta:
    return TreeMeta(
        disease_or_drug=meta.disease_or_drug,
        age_group=meta.age_group,
        race=meta.race,
        gender=meta.gender,
        publication_date=meta.publication_date,
    )


# where the run happened, not what it produced; keeping these out lets two
# runs from different directories emit identical manifests
_LOCATION_FIELDS = ("corpus_dir", "out_dir", "fixture_dir")


def _config_echo(cfg: PipelineConfig) -> dict:
    echo = asdict(cfg)
    return {k: echo[k] for k in sorted(echo) if k not in _LOCATION_FIELDS}


def _write_text(path: Path, text: str) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    data = text.encode("utf-8")
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def run_pipeline(cfg: PipelineConfig, backend: ExtractionBackend | None = None) -> dict:
    """Run every stage and return the manifest (also written to out_dir).

    A stage failure writes a partial manifest naming the failed stage, then
    raises PipelineError wrapping the cause."""
    out_dir = Path(cfg.out_dir)
    counts: dict[str, int] = {}
    digests: dict[str, str] = {}
    extras: dict = {}
    stage = "setup"

    def manifest_obj(failed: str | None = None) -> dict:
        obj = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "created_at": datetime.now(timezone.utc).isoformat(),
            "seed": cfg.seed,
            "config": _config_echo(cfg),
            "counts": {k: counts[k] for k in sorted(counts)},
            **{k: extras[k] for k in sorted(extras)},
            "digests": {k: digests[k] for k in sorted(digests)},
        }
        if failed is not None:
            obj["failed_stage"] = failed
        return obj

    def fail(cause: Exception) -> PipelineError:
        logger.error("stage %s failed: %s", stage, cause)
        _write_text(out_dir / "manifest.json", canon.dumps(manifest_obj(failed=stage)))
        return PipelineError(stage, cause)

    try:
        if backend is None:
            backend = make_backend(cfg.fixture_dir)

        stage = "curate"
        corpus = load_corpus(cfg.corpus_dir)
        counts["documents"] = len(corpus)
        survivors = dedup_guidelines([meta for meta, _ in corpus])
        by_id = {meta.guideline_id: text for meta, text in corpus}
        counts["documents_deduped"] = len(survivors)

        stage = "chunk"
        chunked: list[tuple[GuidelineMeta, Chunk]] = []
        for meta in survivors:
            for chunk in chunk_document(
                meta.guideline_id, by_id[meta.guideline_id], cfg.soft_limit, cfg.max_chunks
            ):
                chunked.append((meta, chunk))
        counts["chunks"] = len(chunked)

        stage = "extract"
        candidates = []  # (meta, chunk_index_within_guideline, candidate)
        raw_total = 0
        for meta, chunk in chunked:
            kept, stats = extract_recommendations_with_stats(chunk, backend)
            raw_total += stats.raw
            chunk_index = int(chunk.chunk_id.rsplit("#", 1)[1])
            for candidate in kept:
                candidates.append((meta, chunk_index, candidate))
        counts["candidates"] = raw_total
        counts["validated_recommendations"] = len(candidates)

        stage = "draft"
        from .extraction import draft_tree  # local import keeps stage mapping clear

        trees: list[tuple[GuidelineMeta, DecisionTree]] = []
        rejections: list[dict] = []
        per_chunk_counter: dict[str, int] = {}
        for meta, chunk_index, candidate in candidates:
            ordinal = per_chunk_counter.get(candidate.chunk_id, 0)
            per_chunk_counter[candidate.chunk_id] = ordinal + 1
            tree_id = f"{meta.guideline_id}-c{chunk_index}-r{ordinal}"
            source = Source(guideline_id=meta.guideline_id, chunk_id=candidate.chunk_id)
            try:
                tree = draft_tree(candidate, backend, tree_id, source, _tree_meta(meta))
            except DraftRejectedError as e:
                logger.warning("discarding %s: %s", tree_id, e.reason)
                rejections.append({"tree_id": tree_id, "reason": e.reason})
                continue
            if any(t.id == tree.id for _, t in trees):
                raise ModelError(f"duplicate tree id {tree.id!r}")
            trees.append((meta, tree))
        counts["validated_trees"] = len(trees)
        extras["draft_rejections"] = rejections

        stage = "sample_factual"
        factual_by_tree: dict[str, list] = {}
        balance_flags: list[str] = []
        for _, tree in trees:
            fcfg = FactualConfig(
                seed=cfg.seed, per_path=cfg.per_path, no_action_cap=cfg.no_action_cap
            )
            instances, stats = generate_factual_with_stats(tree, fcfg)
            if cfg.questions:
                instances = [
                    _with_question(inst, render_factual_question(inst, tree))
                    for inst in instances
                ]
            factual_by_tree[tree.id] = instances
            if stats.balance_infeasible:
                balance_flags.append(tree.id)
        counts["factual_instances"] = sum(len(v) for v in factual_by_tree.values())
        extras["balance_infeasible_trees"] = sorted(balance_flags)

        stage = "sample_counterfactual"
        cf_by_tree: dict[str, list] = {}
        cf_candidates = cf_unchanged = cf_nonident = 0
        cf_balance_flags: list[str] = []
        for _, tree in trees:
            ccfg = CfConfig(
                seed=cfg.seed,
                hidden_count=cfg.hidden_count,
                identifiable_only=cfg.identifiable_only,
                per_tree=cfg.per_tree,
                no_action_cap=cfg.no_action_cap,
            )
            accepted, stats = generate_counterfactual_with_stats(
                tree, factual_by_tree[tree.id], ccfg
            )
            balanced = balance_counterfactuals(accepted, tree, cfg.no_action_cap, cfg.seed)
            if cf_balance_infeasible(balanced, tree, cfg.no_action_cap):
                cf_balance_flags.append(tree.id)
            cf_by_tree[tree.id] = balanced
            cf_candidates += stats.candidates
            cf_unchanged += stats.discarded_unchanged
            cf_nonident += stats.discarded_nonidentifiable
        counts["counterfactual_candidates"] = cf_candidates
        counts["counterfactual_discarded_unchanged"] = cf_unchanged
        counts["counterfactual_retained"] = cf_candidates - cf_unchanged
        counts["counterfactual_discarded_nonidentifiable"] = cf_nonident
        counts["counterfactual_emitted"] = sum(len(v) for v in cf_by_tree.values())
        extras["counterfactual_balance_infeasible_trees"] = sorted(cf_balance_flags)

        stage = "emit"
        if trees:
            for _, tree in trees:
                digests[f"trees/{tree.id}.json"] = _write_text(
                    out_dir / "trees" / f"{tree.id}.json", serialize_tree(tree)
                )
            factual_lines = [
                canon.dumps(encode_factual_record(inst))
                for _, tree in trees
                for inst in factual_by_tree[tree.id]
            ]
            digests["factual.jsonl"] = _write_text(
                out_dir / "factual.jsonl", "".join(line + "\n" for line in factual_lines)
            )
            cf_lines = [
                canon.dumps(encode_counterfactual_record(inst, redact_gold=cfg.redact_gold))
                for _, tree in trees
                for inst in cf_by_tree[tree.id]
            ]
            digests["counterfactual.jsonl"] = _write_text(
                out_dir / "counterfactual.jsonl", "".join(line + "\n" for line in cf_lines)
            )

        manifest = manifest_obj()
        _write_text(out_dir / "manifest.json", canon.dumps(manifest))
        return manifest
    except PipelineError:
        raise
    except (ModelError, BackendError, RuntimeError, OSError) as e:
        raise fail(e) from e


def _with_question(inst, question: str):
    return replace(inst, question_text=question)


def manifests_equal(a: dict, b: dict) -> bool:
    """Equality modulo the created_at timestamp."""
    trim_a = {k: v for k, v in a.items() if k != "created_at"}
    trim_b = {k: v for k, v in b.items() if k != "created_at"}
    return trim_a == trim_b
