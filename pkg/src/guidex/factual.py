"""Factual QA synthesis: deterministic per-path assignment sampling, full
coverage of satisfiable paths, and no-action rebalancing that never breaks
coverage.

Sampling is a pure function of (tree id, path id, draw index, seed):
booleans and categoricals are drawn uniformly from the path's admissible
set, numerics from the grid points inside the path's interval, falling back
to the interval midpoint (open endpoints nudged inward by span/1000) when
the interval contains no grid point. Equality-pinned values are used
verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .constraints import ConstraintSet, NumericConstraint
from .executor import execute
from .model import (
    BOOLEAN,
    NUMERIC,
    Assignment,
    DecisionTree,
    ExecutionPath,
    ModelError,
    PathStep,
    Predicate,
    _assignment_key,
)
from .seeds import derive_rng
from .treeio import enumerate_paths, predicate_obj

# give up on a path after this many draws fail to produce new assignments
_DRAW_LIMIT_PER_TARGET = 16


class UnsatisfiablePathError(ModelError):
    pass


class NoSatisfiablePathError(ModelError):
    pass


@dataclass(frozen=True)
class FactualConfig:
    seed: int
    per_path: int = 2
    no_action_cap: float = 0.5

    def __post_init__(self):
        if self.per_path < 1:
            raise ModelError("per_path must be >= 1")
        if not (0.0 <= self.no_action_cap <= 1.0):
            raise ModelError("no_action_cap must be in [0, 1]")


@dataclass(frozen=True)
class FactualInstance:
    instance_id: str
    tree_id: str
    assignment: Assignment
    label: str
    path_id: int
    path: ExecutionPath
    question_text: str | None = None
    rationale_text: str | None = None


@dataclass(frozen=True)
class FactualStats:
    paths_total: int
    paths_satisfiable: int
    sampled: int
    emitted: int
    balance_removed: int
    balance_infeasible: bool


def _interior_midpoint(c: NumericConstraint) -> float:
    span = c.hi - c.lo
    nudge = span / 1000.0
    lo = c.lo + nudge if c.lo_open else c.lo
    hi = c.hi - nudge if c.hi_open else c.hi
    mid = (lo + hi) / 2.0
    if c.contains(mid):
        return mid
    # an excluded point can sit exactly on the midpoint; step around it
    step = nudge if nudge > 0 else 1.0
    for k in range(1, len(c.excluded) + 2):
        for cand in (mid + k * step, mid - k * step):
            if c.contains(cand):
                return cand
    raise UnsatisfiablePathError(f"no admissible point in {c.describe()}")


def _sample_from_constraints(
    tree: DecisionTree, cs: ConstraintSet, path_id: int, draw_index: int, seed: int
) -> Assignment:
    rng = derive_rng("factual-sample", tree.id, path_id, draw_index, seed)
    out: Assignment = {}
    for spec in tree.variables:
        if spec.kind == NUMERIC:
            c = cs.numeric(spec.name)
            if c.pinned is not None:
                out[spec.name] = c.pinned
            else:
                grid = cs.grid_choices(spec.name)
                out[spec.name] = rng.choice(grid) if grid else _interior_midpoint(c)
        elif spec.kind == BOOLEAN:
            out[spec.name] = rng.choice(cs.boolean_choices(spec.name))
        else:
            out[spec.name] = rng.choice(cs.categorical_choices(spec.name))
    return out


def sample_assignment_for_path(
    tree: DecisionTree, path_id: int, draw_index: int, seed: int
) -> Assignment:
    """One complete assignment guaranteed to execute down path_id."""
    paths = enumerate_paths(tree)
    if not (0 <= path_id < len(paths)):
        raise ModelError(f"unknown path_id {path_id}")
    cs = paths[path_id].constraints
    if not cs.satisfiable():
        bad = cs.unsatisfiable_variable()
        raise UnsatisfiablePathError(
            f"path {path_id} is unsatisfiable: {bad!r} admits {cs.describe(bad)}"
        )
    return _sample_from_constraints(tree, cs, path_id, draw_index, seed)


def _path_capacity(tree: DecisionTree, cs: ConstraintSet) -> int:
    n = 1
    for spec in tree.variables:
        n *= cs.choice_count(spec)
        if n > 10_000:  # plenty; avoids huge products
            return 10_000
    return n


def generate_factual_set(tree: DecisionTree, cfg: FactualConfig) -> list[FactualInstance]:
    instances, _ = generate_factual_with_stats(tree, cfg)
    return instances


def generate_factual_with_stats(
    tree: DecisionTree, cfg: FactualConfig
) -> tuple[list[FactualInstance], FactualStats]:
    """Sample up to per_path distinct assignments for every satisfiable
    path, then rebalance. Coverage outranks balance: every satisfiable path
    keeps at least one instance."""
    paths = enumerate_paths(tree)
    satisfiable = [p for p in paths if p.satisfiable()]
    if not satisfiable:
        raise NoSatisfiablePathError(f"tree {tree.id!r} has no satisfiable path")

    sampled: list[FactualInstance] = []
    for p in satisfiable:
        target = min(cfg.per_path, _path_capacity(tree, p.constraints))
        seen: set = set()
        draw = 0
        limit = _DRAW_LIMIT_PER_TARGET * target + 16
        while len(seen) < target and draw < limit:
            assignment = _sample_from_constraints(tree, p.constraints, p.path_id, draw, cfg.seed)
            key = _assignment_key(assignment)
            if key not in seen:
                seen.add(key)
                result = execute(tree, assignment)
                sampled.append(
                    FactualInstance(
                        instance_id=f"{tree.id}:f:{p.path_id}:{draw}",
                        tree_id=tree.id,
                        assignment=assignment,
                        label=result.label,
                        path_id=p.path_id,
                        path=result.path,
                    )
                )
            draw += 1

    balanced = balance_outputs(sampled, tree, cfg.no_action_cap, cfg.seed)
    stats = FactualStats(
        paths_total=len(paths),
        paths_satisfiable=len(satisfiable),
        sampled=len(sampled),
        emitted=len(balanced),
        balance_removed=len(sampled) - len(balanced),
        balance_infeasible=balance_infeasible(balanced, tree, cfg.no_action_cap),
    )
    return balanced, stats


def _is_no_action(instance: FactualInstance, tree: DecisionTree) -> bool:
    if tree.no_action_index is None:
        return False
    return instance.label == tree.outputs[tree.no_action_index]


def balance_outputs(
    instances: Sequence[FactualInstance], tree: DecisionTree, cap: float, seed: int
) -> list[FactualInstance]:
    """Remove seeded-random no-action instances until their fraction drops
    to cap, refusing removals that would leave a path uncovered. Survivor
    order is preserved."""
    survivors = list(instances)
    if tree.no_action_index is None or not survivors:
        return survivors
    rng = derive_rng("factual-balance", tree.id, seed)
    while True:
        na = sum(1 for i in survivors if _is_no_action(i, tree))
        if na <= cap * len(survivors):
            break
        per_path: dict[int, int] = {}
        for i in survivors:
            per_path[i.path_id] = per_path.get(i.path_id, 0) + 1
        candidates = [
            i for i in survivors if _is_no_action(i, tree) and per_path[i.path_id] >= 2
        ]
        if not candidates:
            break
        survivors.remove(rng.choice(candidates))
    return survivors


def balance_infeasible(
    instances: Sequence[FactualInstance], tree: DecisionTree, cap: float
) -> bool:
    """True when the set still exceeds the cap (coverage blocked balancing)."""
    if tree.no_action_index is None or not instances:
        return False
    na = sum(1 for i in instances if _is_no_action(i, tree))
    return na > cap * len(instances)


# ---------------------------------------------------------------------------
# record format

def _step_obj(step: PathStep) -> dict:
    obj = predicate_obj(step.predicate)
    obj["taken"] = step.taken
    return obj


def encode_factual_record(instance: FactualInstance) -> dict:
    return {
        "instance_id": instance.instance_id,
        "tree_id": instance.tree_id,
        "type": "factual",
        "assignment": dict(instance.assignment),
        "label": instance.label,
        "path_id": instance.path_id,
        "path": [_step_obj(s) for s in instance.path],
        "question_text": instance.question_text,
        "rationale_text": instance.rationale_text,
    }


def _step_from_obj(obj: dict) -> PathStep:
    value = obj["value"]
    if obj["op"] == "in":
        value = frozenset(value)
    return PathStep(Predicate(var=obj["var"], op=obj["op"], value=value), taken=obj["taken"])


def decode_factual_record(record: dict) -> FactualInstance:
    if record.get("type") != "factual":
        raise ModelError(f"not a factual record: type={record.get('type')!r}")
    return FactualInstance(
        instance_id=record["instance_id"],
        tree_id=record["tree_id"],
        assignment=dict(record["assignment"]),
        label=record["label"],
        path_id=record["path_id"],
        path=tuple(_step_from_obj(s) for s in record["path"]),
        question_text=record.get("question_text"),
        rationale_text=record.get("rationale_text"),
    )
