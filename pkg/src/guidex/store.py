"""Instance store: loads emitted trees and QA datasets back into memory and
indexes them by instance_id for the verifier and the reward service."""

from __future__ import annotations

import json
from pathlib import Path

from .counterfactual import decode_counterfactual_record
from .factual import decode_factual_record
from .model import DecisionTree, ModelError
from .treeio import parse_tree
from .verifier import COUNTERFACTUAL, FACTUAL, StoredInstance


def _read_jsonl(path: Path) -> list[dict]:
    records = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ModelError(f"{path.name} line {line_no}: {e.msg}") from None
    return records


class InstanceStore:
    def __init__(self, trees: dict[str, DecisionTree], entries: dict[str, StoredInstance]):
        self._trees = trees
        self._entries = entries

    @classmethod
    def load(
        cls,
        trees_dir: str | Path,
        factual_path: str | Path | None = None,
        counterfactual_path: str | Path | None = None,
    ) -> "InstanceStore":
        trees: dict[str, DecisionTree] = {}
        for path in sorted(Path(trees_dir).glob("*.json")):
            tree = parse_tree(path.read_text(encoding="utf-8"))
            if tree.id in trees:
                raise ModelError(f"duplicate tree id {tree.id!r}")
            trees[tree.id] = tree

        entries: dict[str, StoredInstance] = {}

        def add(instance_id: str, kind: str, instance, tree_id: str) -> None:
            if instance_id in entries:
                raise ModelError(f"duplicate instance id {instance_id!r}")
            tree = trees.get(tree_id)
            if tree is None:
                raise ModelError(f"instance {instance_id!r} references unknown tree {tree_id!r}")
            entries[instance_id] = StoredInstance(kind=kind, instance=instance, tree=tree)

        if factual_path is not None:
            for record in _read_jsonl(Path(factual_path)):
                inst = decode_factual_record(record)
                add(inst.instance_id, FACTUAL, inst, inst.tree_id)
        if counterfactual_path is not None:
            for record in _read_jsonl(Path(counterfactual_path)):
                inst = decode_counterfactual_record(record)
                add(inst.instance_id, COUNTERFACTUAL, inst, inst.tree_id)
        return cls(trees, entries)

    def get(self, instance_id: str) -> StoredInstance | None:
        return self._entries.get(instance_id)

    def counts(self) -> dict[str, int]:
        factual = sum(1 for e in self._entries.values() if e.kind == FACTUAL)
        return {
            "factual": factual,
            "counterfactual": len(self._entries) - factual,
            "trees": len(self._trees),
        }

    def tree(self, tree_id: str) -> DecisionTree:
        try:
            return self._trees[tree_id]
        except KeyError:
            raise ModelError(f"unknown tree {tree_id!r}") from None

    def instance_ids(self) -> list[str]:
        return list(self._entries)
