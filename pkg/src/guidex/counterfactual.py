"""Counterfactual QA synthesis.

Each instance hides part of a factual assignment, intervenes on one of the
remaining path variables, and asks for the counterfactual outcome. The
answer is gold-verifiable: abduction recovers the set of hidden completions
consistent with the observed outcome, the intervention is guaranteed to
change the outcome, and both outcomes are recomputed from the tree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import canon
from .executor import Undecided, abduce, check_consistency, execute, partial_execute
from .factual import FactualInstance
from .model import (
    AbductionClass,
    Assignment,
    DecisionTree,
    ModelError,
    Value,
    merge_assignments,
)
from .seeds import derive_rng, derive_seed

# draw rounds over the factual pool before giving up on per_tree
_MAX_ROUNDS = 8


@dataclass(frozen=True)
class CfConfig:
    seed: int
    hidden_count: int = 1
    identifiable_only: bool = True
    per_tree: int = 16
    no_action_cap: float = 0.5

    def __post_init__(self):
        if self.hidden_count < 1:
            raise ModelError("hidden_count must be >= 1")
        if self.per_tree < 1:
            raise ModelError("per_tree must be >= 1")
        if not (0.0 <= self.no_action_cap <= 1.0):
            raise ModelError("no_action_cap must be in [0, 1]")


@dataclass(frozen=True)
class Intervention:
    var: str
    original: Value
    new: Value


@dataclass(frozen=True)
class VariablePartition:
    observed: Assignment
    hidden_names: tuple[str, ...]
    intervention_var: str


@dataclass(frozen=True)
class CounterfactualInstance:
    instance_id: str
    tree_id: str
    observed: Assignment
    hidden_names: tuple[str, ...]
    hidden_values: Assignment
    intervention: Intervention
    y_obs: str
    y_cf: str
    abduction_class: AbductionClass
    rationale_text: str | None = None


@dataclass(frozen=True)
class CfStats:
    candidates: int
    discarded_unchanged: int
    discarded_nonidentifiable: int
    accepted: int


def _canon_assignment(x: Assignment) -> str:
    return canon.dumps({k: x[k] for k in sorted(x)})


def partition_variables(
    tree: DecisionTree, x: Assignment, cfg: CfConfig, draw_index: int
) -> VariablePartition | None:
    """Split a complete assignment into observed / hidden / intervention.

    Hidden variables come from the variables the factual path consults,
    preferring ones whose removal leaves the outcome undecided (so the
    hidden value actually matters); the intervention variable comes from the
    remaining path variables. A variable only qualifies as hidden when its
    value lies in domain_values(), since abduction enumerates exactly that
    set; a midpoint-fallback numeric stays observed. Returns None when the
    path consults too few variables to supply both roles.
    """
    if len(tree.variables) < cfg.hidden_count + 2:
        raise ModelError(
            f"tree {tree.id!r} declares {len(tree.variables)} variables; "
            f"need at least {cfg.hidden_count + 2}"
        )
    result = execute(tree, x)
    consulted: list[str] = []
    for step in result.path:
        if step.predicate.var not in consulted:
            consulted.append(step.predicate.var)
    if len(consulted) < cfg.hidden_count + 1:
        return None
    abducible = [n for n in consulted if x[n] in tree.variable(n).domain_values()]
    if len(abducible) < cfg.hidden_count:
        return None

    rng = derive_rng("cf-partition", tree.id, cfg.seed, draw_index, _canon_assignment(x))
    blocking = []
    free = []
    for name in abducible:
        probe = {k: v for k, v in x.items() if k != name}
        if isinstance(partial_execute(tree, probe), Undecided):
            blocking.append(name)
        else:
            free.append(name)
    rng.shuffle(blocking)
    rng.shuffle(free)
    ranked = blocking + free
    hidden = set(ranked[: cfg.hidden_count])
    pool = [name for name in consulted if name not in hidden]
    intervention_var = rng.choice(pool)

    observed = {
        v.name: x[v.name]
        for v in tree.variables
        if v.name not in hidden and v.name != intervention_var
    }
    hidden_names = tuple(v.name for v in tree.variables if v.name in hidden)
    return VariablePartition(
        observed=observed, hidden_names=hidden_names, intervention_var=intervention_var
    )


def propose_intervention(
    tree: DecisionTree, x: Assignment, var: str, seed: int
) -> Value | None:
    """First domain value (in seeded scan order) whose execution output
    differs from the factual one; None when no value changes it."""
    spec = tree.variable(var)
    y_obs = execute(tree, x).label
    current = x[var]
    candidates = [v for v in spec.domain_values() if v != current]
    rng = derive_rng("cf-intervention", tree.id, var, seed, _canon_assignment(x))
    rng.shuffle(candidates)
    for cand in candidates:
        if execute(tree, {**x, var: cand}).label != y_obs:
            return cand
    return None


def identifiability(inst: CounterfactualInstance) -> bool:
    """True when the hidden state is pinned down uniquely by the evidence."""
    return len(inst.abduction_class) == 1


def validate_counterfactual_instance(tree: DecisionTree, inst: CounterfactualInstance) -> None:
    """Re-derive every verifiable claim the instance makes."""
    names = set(inst.observed) | set(inst.hidden_names) | {inst.intervention.var}
    declared = {v.name for v in tree.variables}
    if names != declared or len(inst.observed) + len(inst.hidden_names) + 1 != len(declared):
        raise ModelError(f"{inst.instance_id}: partition does not cover the variables exactly")
    base = merge_assignments(inst.observed, inst.hidden_values)
    factual = merge_assignments(base, {inst.intervention.var: inst.intervention.original})
    if execute(tree, factual).label != inst.y_obs:
        raise ModelError(f"{inst.instance_id}: y_obs does not replay")
    flipped = merge_assignments(base, {inst.intervention.var: inst.intervention.new})
    if execute(tree, flipped).label != inst.y_cf:
        raise ModelError(f"{inst.instance_id}: y_cf does not replay")
    if inst.y_obs == inst.y_cf:
        raise ModelError(f"{inst.instance_id}: intervention does not change the outcome")
    if inst.hidden_values not in inst.abduction_class:
        raise ModelError(f"{inst.instance_id}: gold hidden values outside the abduction class")
    context = merge_assignments(
        inst.observed, {inst.intervention.var: inst.intervention.original}
    )
    for member in inst.abduction_class:
        if not check_consistency(tree, context, member, inst.y_obs):
            raise ModelError(f"{inst.instance_id}: inconsistent abduction class member")


def generate_counterfactual_set(
    tree: DecisionTree, factual_pool: Sequence[FactualInstance], cfg: CfConfig
) -> list[CounterfactualInstance]:
    instances, _ = generate_counterfactual_with_stats(tree, factual_pool, cfg)
    return instances


def generate_counterfactual_with_stats(
    tree: DecisionTree, factual_pool: Sequence[FactualInstance], cfg: CfConfig
) -> tuple[list[CounterfactualInstance], CfStats]:
    """Draw scenarios over the factual pool until per_tree instances are
    accepted. A scenario whose intervention scan finds no outcome-changing
    value is discarded as unchanged; with identifiable_only, so is any
    scenario whose abduction class is not a singleton."""
    accepted: list[CounterfactualInstance] = []
    candidates = 0
    unchanged = 0
    nonidentifiable = 0

    if len(tree.variables) < cfg.hidden_count + 2:
        # no room for observed + hidden + intervention: nothing to generate
        return accepted, CfStats(0, 0, 0, 0)

    for rnd in range(_MAX_ROUNDS):
        if len(accepted) >= cfg.per_tree:
            break
        for src in factual_pool:
            if len(accepted) >= cfg.per_tree:
                break
            part = partition_variables(tree, src.assignment, cfg, rnd)
            if part is None:
                continue
            scan_seed = derive_seed("cf-scan", cfg.seed, rnd, src.instance_id)
            new_value = propose_intervention(tree, src.assignment, part.intervention_var, scan_seed)
            candidates += 1
            if new_value is None:
                unchanged += 1
                continue
            original = src.assignment[part.intervention_var]
            y_obs = src.label
            y_cf = execute(tree, {**src.assignment, part.intervention_var: new_value}).label
            context = merge_assignments(part.observed, {part.intervention_var: original})
            abduction_class = abduce(tree, context, set(part.hidden_names), y_obs)
            if cfg.identifiable_only and len(abduction_class) != 1:
                nonidentifiable += 1
                continue
            inst = CounterfactualInstance(
                instance_id=f"{tree.id}:cf:{src.instance_id}:{rnd}",
                tree_id=tree.id,
                observed=part.observed,
                hidden_names=part.hidden_names,
                hidden_values={h: src.assignment[h] for h in part.hidden_names},
                intervention=Intervention(var=part.intervention_var, original=original, new=new_value),
                y_obs=y_obs,
                y_cf=y_cf,
                abduction_class=abduction_class,
            )
            validate_counterfactual_instance(tree, inst)
            accepted.append(inst)

    stats = CfStats(
        candidates=candidates,
        discarded_unchanged=unchanged,
        discarded_nonidentifiable=nonidentifiable,
        accepted=len(accepted),
    )
    return accepted, stats


def _is_no_action_label(label: str, tree: DecisionTree) -> bool:
    return tree.no_action_index is not None and label == tree.outputs[tree.no_action_index]


def balance_counterfactuals(
    instances: Sequence[CounterfactualInstance], tree: DecisionTree, cap: float, seed: int
) -> list[CounterfactualInstance]:
    """Rebalance over the counterfactual outcome y_cf, mirroring the factual
    rule; the set is never emptied, so an all-no-action set stays as is."""
    survivors = list(instances)
    if tree.no_action_index is None or not survivors:
        return survivors
    rng = derive_rng("cf-balance", tree.id, seed)
    while True:
        na = [i for i in survivors if _is_no_action_label(i.y_cf, tree)]
        if len(na) <= cap * len(survivors) or len(na) == len(survivors):
            break
        survivors.remove(rng.choice(na))
    return survivors


def cf_balance_infeasible(
    instances: Sequence[CounterfactualInstance], tree: DecisionTree, cap: float
) -> bool:
    if tree.no_action_index is None or not instances:
        return False
    na = sum(1 for i in instances if _is_no_action_label(i.y_cf, tree))
    return na > cap * len(instances)


# ---------------------------------------------------------------------------
# record format

def _ordered(assignment: Assignment, order: Sequence[str]) -> dict:
    return {name: assignment[name] for name in order if name in assignment}


def encode_counterfactual_record(inst: CounterfactualInstance, *, redact_gold: bool = False) -> dict:
    """Full record, or with redact_gold the projection safe to hand to a
    model under evaluation: hidden_values and abduction_class are omitted."""
    hidden_order = list(inst.hidden_names)
    record: dict = {
        "instance_id": inst.instance_id,
        "tree_id": inst.tree_id,
        "type": "counterfactual",
        "observed": dict(inst.observed),
        "hidden_names": hidden_order,
    }
    if not redact_gold:
        record["hidden_values"] = _ordered(inst.hidden_values, hidden_order)
    record["intervention"] = {
        "var": inst.intervention.var,
        "original": inst.intervention.original,
        "new": inst.intervention.new,
    }
    record["y_obs"] = inst.y_obs
    record["y_cf"] = inst.y_cf
    if not redact_gold:
        record["abduction_class"] = [
            _ordered(member, hidden_order) for member in inst.abduction_class
        ]
    record["rationale_text"] = inst.rationale_text
    return record


def decode_counterfactual_record(record: dict) -> CounterfactualInstance:
    if record.get("type") != "counterfactual":
        raise ModelError(f"not a counterfactual record: type={record.get('type')!r}")
    if "hidden_values" not in record or "abduction_class" not in record:
        raise ModelError(f"{record.get('instance_id')}: redacted record cannot be decoded")
    iv = record["intervention"]
    return CounterfactualInstance(
        instance_id=record["instance_id"],
        tree_id=record["tree_id"],
        observed=dict(record["observed"]),
        hidden_names=tuple(record["hidden_names"]),
        hidden_values=dict(record["hidden_values"]),
        intervention=Intervention(var=iv["var"], original=iv["original"], new=iv["new"]),
        y_obs=record["y_obs"],
        y_cf=record["y_cf"],
        abduction_class=AbductionClass(record["abduction_class"]),
        rationale_text=record.get("rationale_text"),
    )
