"""Seeded random decision trees for the property and acceptance suites.

Generated trees are structurally valid by construction but intentionally
allowed to contain dead branches and repeated tests of one variable, so
validation and reachability logic gets exercised on awkward shapes, not
just tidy ones.
"""

from __future__ import annotations

import datetime as dt
import random

from guidex.seeds import derive_rng
from guidex.model import (
    Branch,
    DecisionTree,
    Leaf,
    Predicate,
    Source,
    TreeMeta,
    VariableSpec,
)

_META = TreeMeta(
    disease_or_drug="synthetic",
    age_group="adult",
    race="all",
    gender="all",
    publication_date=dt.date(2024, 1, 1),
)

_CATEGORY_POOL = ("a", "b", "c", "d")


def _source(tree_id: str) -> Source:
    return Source(guideline_id="g-synthetic", chunk_id="g-synthetic#0")


def _numeric_spec(name: str, rng: random.Random) -> VariableSpec:
    lo = round(rng.uniform(-50.0, 50.0), 2)
    hi = round(lo + rng.uniform(10.0, 100.0), 2)
    lattice = sorted({round(lo + (hi - lo) * i / 8.0, 2) for i in range(1, 8)})
    k = rng.randint(2, min(4, len(lattice)))
    grid = tuple(sorted(rng.sample(lattice, k)))
    return VariableSpec(name=name, kind="numeric", unit=None, min=lo, max=hi, grid=grid)


def _variable(name: str, rng: random.Random, kinds=("boolean", "categorical", "numeric")) -> VariableSpec:
    kind = rng.choice(kinds)
    if kind == "boolean":
        return VariableSpec(name=name, kind="boolean")
    if kind == "categorical":
        values = tuple(_CATEGORY_POOL[: rng.randint(2, 4)])
        return VariableSpec(name=name, kind="categorical", values=values)
    return _numeric_spec(name, rng)


def _predicate(spec: VariableSpec, rng: random.Random) -> Predicate:
    if spec.kind == "boolean":
        return Predicate(var=spec.name, op="is", value=rng.random() < 0.5)
    if spec.kind == "categorical":
        if len(spec.values) > 2 and rng.random() < 0.3:
            k = rng.randint(1, len(spec.values) - 1)
            return Predicate(var=spec.name, op="in", value=frozenset(rng.sample(spec.values, k)))
        return Predicate(var=spec.name, op="eq", value=rng.choice(spec.values))
    if rng.random() < 0.15:
        return Predicate(var=spec.name, op="eq", value=rng.choice(spec.grid))
    op = rng.choice(("lt", "le", "gt", "ge"))
    if rng.random() < 0.5:
        literal = rng.choice(spec.grid)
    else:
        literal = round(rng.uniform(spec.min, spec.max), 2)
        literal = min(max(literal, spec.min), spec.max)
    return Predicate(var=spec.name, op=op, value=literal)


def _node(variables, n_outputs: int, rng: random.Random, depth: int, max_depth: int):
    if depth >= max_depth or (depth > 0 and rng.random() < 0.25 + 0.1 * depth):
        return Leaf(output_index=rng.randrange(n_outputs))
    spec = rng.choice(variables)
    return Branch(
        predicate=_predicate(spec, rng),
        then=_node(variables, n_outputs, rng, depth + 1, max_depth),
        orelse=_node(variables, n_outputs, rng, depth + 1, max_depth),
    )


def _build(tree_id: str, variables, rng: random.Random, max_depth: int) -> DecisionTree:
    with_no_action = rng.random() < 0.7
    n_actions = rng.randint(2, 3)
    outputs = tuple(f"act-{i}" for i in range(n_actions))
    no_action_index = None
    if with_no_action:
        outputs = outputs + ("no-action",)
        no_action_index = len(outputs) - 1
    root = _node(variables, len(outputs), rng, 0, max_depth)
    if isinstance(root, Leaf):
        # keep at least one decision so every variable class gets a chance
        root = Branch(
            predicate=_predicate(variables[0], rng),
            then=root,
            orelse=Leaf(output_index=rng.randrange(len(outputs))),
        )
    used = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, Branch):
            used.add(node.predicate.var)
            stack.extend((node.then, node.orelse))
    kept = tuple(v for v in variables if v.name in used)
    return DecisionTree(
        id=tree_id,
        source=_source(tree_id),
        metadata=_META,
        variables=kept,
        outputs=outputs,
        no_action_index=no_action_index,
        root=root,
    )


def random_boolean_tree(seed: int) -> DecisionTree:
    """Boolean-only tree, at most 10 variables, depth at most 6."""
    rng = derive_rng("bool-tree", seed)
    n = rng.randint(2, 10)
    variables = tuple(_variable(f"v{i}", rng, kinds=("boolean",)) for i in range(n))
    return _build(f"bool-{seed}", variables, rng, max_depth=6)


def random_mixed_tree(seed: int) -> DecisionTree:
    """Tree over mixed-kind variables, modest depth, seeded."""
    rng = derive_rng("mixed-tree", seed)
    n = rng.randint(3, 7)
    variables = tuple(_variable(f"v{i}", rng) for i in range(n))
    return _build(f"mixed-{seed}", variables, rng, max_depth=5)
