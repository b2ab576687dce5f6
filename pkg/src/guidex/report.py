"""Dataset statistics: one tidy CSV plus matplotlib figures rendered to
files next to it. Reads the pipeline's emitted JSONL datasets and manifest;
nothing here mutates them."""

from __future__ import annotations

import csv
import json
from collections import Counter
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .model import ModelError

# manifest count keys in pipeline order, for the funnel figure
_STAGE_KEYS = (
    "documents",
    "documents_deduped",
    "chunks",
    "candidates",
    "validated_recommendations",
    "validated_trees",
    "factual_instances",
    "counterfactual_candidates",
    "counterfactual_retained",
    "counterfactual_emitted",
)


def _read_jsonl(path: Path) -> list[dict]:
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            out.append(json.loads(line))
    return out


def collect_stats(
    factual_path: str | Path | None = None,
    counterfactual_path: str | Path | None = None,
    manifest_path: str | Path | None = None,
) -> list[tuple[str, str, object]]:
    """Tidy (section, key, value) rows."""
    rows: list[tuple[str, str, object]] = []

    if manifest_path is not None:
        manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
        for key in sorted(manifest.get("counts", {})):
            rows.append(("stage_count", key, manifest["counts"][key]))
        rows.append(("run", "seed", manifest.get("seed")))

    if factual_path is not None:
        records = _read_jsonl(Path(factual_path))
        rows.append(("factual", "instances", len(records)))
        labels = Counter(r["label"] for r in records)
        for label in sorted(labels):
            rows.append(("factual_label", label, labels[label]))
        depths = Counter(len(r["path"]) for r in records)
        for depth in sorted(depths):
            rows.append(("factual_path_depth", str(depth), depths[depth]))
        per_tree = Counter(r["tree_id"] for r in records)
        for tree_id in sorted(per_tree):
            rows.append(("factual_per_tree", tree_id, per_tree[tree_id]))

    if counterfactual_path is not None:
        records = _read_jsonl(Path(counterfactual_path))
        rows.append(("counterfactual", "instances", len(records)))
        for field, section in (("y_obs", "counterfactual_y_obs"), ("y_cf", "counterfactual_y_cf")):
            labels = Counter(r[field] for r in records)
            for label in sorted(labels):
                rows.append((section, label, labels[label]))
        sizes = Counter(
            len(r["abduction_class"]) for r in records if "abduction_class" in r
        )
        for size in sorted(sizes):
            rows.append(("counterfactual_class_size", str(size), sizes[size]))

    if not rows:
        raise ModelError("nothing to report: give at least one input file")
    return rows


def _bar(ax, counter: dict, title: str) -> None:
    keys = sorted(counter)
    ax.barh(range(len(keys)), [counter[k] for k in keys], color="#4878a8")
    ax.set_yticks(range(len(keys)))
    ax.set_yticklabels([str(k) for k in keys], fontsize=8)
    ax.invert_yaxis()
    ax.set_title(title, fontsize=10)
    ax.set_xlabel("instances", fontsize=8)


def write_report(
    out_dir: str | Path,
    factual_path: str | Path | None = None,
    counterfactual_path: str | Path | None = None,
    manifest_path: str | Path | None = None,
) -> dict:
    """Write stats.csv and the figures; returns {"csv": ..., "figures": [...]}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = collect_stats(factual_path, counterfactual_path, manifest_path)

    csv_path = out / "stats.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["section", "key", "value"])
        writer.writerows(rows)

    figures: list[Path] = []

    def section(name: str) -> dict:
        return {key: value for sec, key, value in rows if sec == name}

    factual_labels = section("factual_label")
    cf_labels = section("counterfactual_y_cf")
    if factual_labels or cf_labels:
        ncols = (1 if factual_labels else 0) + (1 if cf_labels else 0)
        fig, axes = plt.subplots(1, ncols, figsize=(5.0 * ncols, 3.2), squeeze=False)
        col = 0
        if factual_labels:
            _bar(axes[0][col], factual_labels, "factual labels")
            col += 1
        if cf_labels:
            _bar(axes[0][col], cf_labels, "counterfactual outcomes")
        fig.tight_layout()
        path = out / "labels.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        figures.append(path)

    depths = section("factual_path_depth")
    if depths:
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        xs = sorted(int(k) for k in depths)
        ax.bar(xs, [depths[str(x)] for x in xs], color="#6aa84f", width=0.7)
        ax.set_xlabel("path depth (branch decisions)", fontsize=8)
        ax.set_ylabel("instances", fontsize=8)
        ax.set_title("factual path depth", fontsize=10)
        ax.set_xticks(xs)
        fig.tight_layout()
        path = out / "path_depth.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        figures.append(path)

    stages = section("stage_count")
    ordered = [(k, stages[k]) for k in _STAGE_KEYS if k in stages]
    if ordered:
        fig, ax = plt.subplots(figsize=(6.5, 3.4))
        ax.bar(range(len(ordered)), [v for _, v in ordered], color="#b46504")
        ax.set_xticks(range(len(ordered)))
        ax.set_xticklabels([k for k, _ in ordered], rotation=40, ha="right", fontsize=7)
        ax.set_ylabel("count", fontsize=8)
        ax.set_title("pipeline stage counts", fontsize=10)
        fig.tight_layout()
        path = out / "stages.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        figures.append(path)

    return {"csv": csv_path, "figures": figures}
