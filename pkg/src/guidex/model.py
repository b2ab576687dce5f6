"""Core domain types for executable clinical decision trees.

A decision tree binds typed variables (boolean, categorical, numeric) to a
binary branch structure whose internal nodes test atomic predicates and whose
leaves select an output label. Construction enforces the structural rules
that every other layer relies on: declared variables only, kind-legal
operators, literals inside the declared domain, leaf indices in range.

Checks that concern tree *quality* rather than well-formedness (unused
variables, duplicate output labels, dead branches) are deliberately left to
the validator so that defective trees can still be represented and reported.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from datetime import date
from functools import cached_property
from typing import Iterable, Iterator, Union

BOOLEAN = "boolean"
CATEGORICAL = "categorical"
NUMERIC = "numeric"

KINDS = (BOOLEAN, CATEGORICAL, NUMERIC)

# ops by kind; polarity comes from the branch taken, not the op set
NUMERIC_OPS = ("lt", "le", "gt", "ge", "eq")
BOOLEAN_OPS = ("is",)
CATEGORICAL_OPS = ("eq", "in")

_NAME_RE = re.compile(r"[a-z][a-z0-9_]*\Z")

Value = Union[bool, float, int, str]
Assignment = dict[str, Value]


class ModelError(ValueError):
    """A domain-type invariant was violated at construction time."""


class MergeConflictError(ModelError):
    """Two assignments disagree on a variable's value."""

    def __init__(self, name: str, left: Value, right: Value):
        self.name = name
        super().__init__(f"conflicting values for {name!r}: {left!r} vs {right!r}")


def _is_number(v: object) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass(frozen=True)
class VariableSpec:
    """A typed variable declaration.

    numeric variables carry a closed admissible interval [min, max] and a
    finite sampling grid inside it; categorical variables carry their value
    vocabulary; booleans need nothing extra.
    """

    name: str
    kind: str
    values: tuple[str, ...] | None = None
    unit: str | None = None
    min: float | None = None
    max: float | None = None
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if not _NAME_RE.match(self.name):
            raise ModelError(f"bad variable name {self.name!r}")
        if self.kind not in KINDS:
            raise ModelError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            if not self.values:
                raise ModelError(f"variable {self.name!r}: categorical needs values")
            if len(set(self.values)) != len(self.values):
                raise ModelError(f"variable {self.name!r}: duplicate categorical values")
            if any(not isinstance(v, str) or not v for v in self.values):
                raise ModelError(f"variable {self.name!r}: categorical values must be non-empty strings")
            if self.min is not None or self.max is not None or self.grid is not None:
                raise ModelError(f"variable {self.name!r}: numeric fields on categorical variable")
        elif self.kind == NUMERIC:
            if self.min is None or self.max is None or self.grid is None:
                raise ModelError(f"variable {self.name!r}: numeric needs min, max and grid")
            for x in (self.min, self.max, *self.grid):
                if not _is_number(x) or not math.isfinite(x):
                    raise ModelError(f"variable {self.name!r}: non-finite numeric bound or grid point")
            if self.min > self.max:
                raise ModelError(f"variable {self.name!r}: min {self.min} > max {self.max}")
            if not self.grid:
                raise ModelError(f"variable {self.name!r}: empty grid")
            if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
                raise ModelError(f"variable {self.name!r}: grid must be strictly increasing")
            if self.grid[0] < self.min or self.grid[-1] > self.max:
                raise ModelError(f"variable {self.name!r}: grid outside [min, max]")
            if self.values is not None:
                raise ModelError(f"variable {self.name!r}: values on numeric variable")
        else:  # boolean
            if any(f is not None for f in (self.values, self.unit, self.min, self.max, self.grid)):
                raise ModelError(f"variable {self.name!r}: boolean takes no extra fields")

    def domain_values(self) -> tuple[Value, ...]:
        """Finite enumeration domain: booleans, vocabulary, or the grid."""
        if self.kind == BOOLEAN:
            return (False, True)
        if self.kind == CATEGORICAL:
            return tuple(self.values)
        return tuple(self.grid)

    def admits(self, value: Value) -> bool:
        """True when value has this variable's kind and lies in its domain."""
        if self.kind == BOOLEAN:
            return isinstance(value, bool)
        if self.kind == CATEGORICAL:
            return isinstance(value, str) and value in self.values
        return _is_number(value) and math.isfinite(value) and self.min <= value <= self.max


@dataclass(frozen=True)
class Predicate:
    """An atomic test `var op value` evaluated against one assignment value.

    value is a bool for `is`, a float for numeric comparisons, a string for
    categorical `eq` and a frozenset of strings for categorical `in`.
    """

    var: str
    op: str
    value: Value | frozenset

    def validate_against(self, spec: VariableSpec) -> None:
        if spec.kind == NUMERIC:
            if self.op not in NUMERIC_OPS:
                raise ModelError(f"op {self.op!r} illegal for numeric variable {self.var!r}")
            if not _is_number(self.value) or not math.isfinite(self.value):
                raise ModelError(f"predicate on {self.var!r}: numeric literal required")
            if not (spec.min <= self.value <= spec.max):
                raise ModelError(
                    f"predicate on {self.var!r}: literal {self.value} outside [{spec.min}, {spec.max}]"
                )
        elif spec.kind == BOOLEAN:
            if self.op not in BOOLEAN_OPS:
                raise ModelError(f"op {self.op!r} illegal for boolean variable {self.var!r}")
            if not isinstance(self.value, bool):
                raise ModelError(f"predicate on {self.var!r}: boolean literal required")
        else:
            if self.op not in CATEGORICAL_OPS:
                raise ModelError(f"op {self.op!r} illegal for categorical variable {self.var!r}")
            if self.op == "eq":
                if not isinstance(self.value, str):
                    raise ModelError(f"predicate on {self.var!r}: string literal required")
                if self.value not in spec.values:
                    raise ModelError(f"predicate on {self.var!r}: {self.value!r} not a declared value")
            else:
                if not isinstance(self.value, frozenset) or not self.value:
                    raise ModelError(f"predicate on {self.var!r}: non-empty value set required")
                undeclared = sorted(self.value - set(spec.values))
                if undeclared:
                    raise ModelError(f"predicate on {self.var!r}: undeclared values {undeclared}")

    def evaluate(self, value: Value) -> bool:
        op = self.op
        if op == "lt":
            return value < self.value
        if op == "le":
            return value <= self.value
        if op == "gt":
            return value > self.value
        if op == "ge":
            return value >= self.value
        if op == "eq":
            return value == self.value
        if op == "is":
            return value is self.value or value == self.value
        if op == "in":
            return value in self.value
        raise ModelError(f"unknown op {op!r}")


@dataclass(frozen=True)
class Leaf:
    output_index: int


@dataclass(frozen=True)
class Branch:
    predicate: Predicate
    then: "Node"
    orelse: "Node"


Node = Union[Leaf, Branch]


@dataclass(frozen=True)
class PathStep:
    """One branch decision on an execution path: the predicate and the edge taken."""

    predicate: Predicate
    taken: bool


ExecutionPath = tuple[PathStep, ...]


@dataclass(frozen=True)
class Source:
    guideline_id: str
    chunk_id: str

    def __post_init__(self):
        if not self.guideline_id or not self.chunk_id:
            raise ModelError("source requires guideline_id and chunk_id")


@dataclass(frozen=True)
class TreeMeta:
    """Population descriptors carried on a tree, mirrored from its guideline."""

    disease_or_drug: str
    age_group: str
    race: str
    gender: str
    publication_date: date

    def __post_init__(self):
        if not isinstance(self.publication_date, date):
            raise ModelError("publication_date must be a date")


@dataclass(frozen=True)
class DecisionTree:
    """A validated-at-construction binary decision tree.

    outputs is the ordered label list that leaf indices point into;
    no_action_index marks the label meaning "no recommended action" when the
    tree has one.
    """

    id: str
    source: Source
    metadata: TreeMeta
    variables: tuple[VariableSpec, ...]
    outputs: tuple[str, ...]
    no_action_index: int | None
    root: Node

    def __post_init__(self):
        if not self.id or not isinstance(self.id, str):
            raise ModelError("tree id must be a non-empty string")
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ModelError("duplicate variable names")
        if not self.variables:
            raise ModelError("tree declares no variables")
        if not self.outputs or any(not isinstance(o, str) or not o for o in self.outputs):
            raise ModelError("outputs must be a non-empty list of non-empty labels")
        if self.no_action_index is not None and not (0 <= self.no_action_index < len(self.outputs)):
            raise ModelError(f"no_action_index {self.no_action_index} out of range")
        by_name = {v.name: v for v in self.variables}
        for node, _ in walk_nodes(self.root):
            if isinstance(node, Leaf):
                if not (0 <= node.output_index < len(self.outputs)):
                    raise ModelError(f"leaf output index {node.output_index} out of range")
            else:
                spec = by_name.get(node.predicate.var)
                if spec is None:
                    raise ModelError(f"predicate references undeclared variable {node.predicate.var!r}")
                node.predicate.validate_against(spec)

    @cached_property
    def by_name(self) -> dict[str, VariableSpec]:
        return {v.name: v for v in self.variables}

    def variable(self, name: str) -> VariableSpec:
        try:
            return self.by_name[name]
        except KeyError:
            raise ModelError(f"undeclared variable {name!r}") from None

    @cached_property
    def leaves(self) -> tuple[Leaf, ...]:
        return tuple(n for n, _ in walk_nodes(self.root) if isinstance(n, Leaf))

    @cached_property
    def predicate_vars(self) -> frozenset[str]:
        return frozenset(
            n.predicate.var for n, _ in walk_nodes(self.root) if isinstance(n, Branch)
        )


def walk_nodes(root: Node) -> Iterator[tuple[Node, str]]:
    """Depth-first (then before else) walk yielding (node, locator) pairs.

    Locators are dotted edge paths from the root: "root", "root.then",
    "root.then.else", ...
    """
    stack = [(root, "root")]
    while stack:
        node, loc = stack.pop()
        yield node, loc
        if isinstance(node, Branch):
            stack.append((node.orelse, loc + ".else"))
            stack.append((node.then, loc + ".then"))


def check_assignment(tree: DecisionTree, assignment: Assignment, *, complete: bool = False) -> None:
    """Raise ModelError unless every assigned value fits its variable.

    With complete=True additionally require every declared variable present;
    the error names the missing variables.
    """
    for name, value in assignment.items():
        spec = tree.variable(name)
        if not spec.admits(value):
            raise ModelError(f"value {value!r} does not fit variable {name!r} ({spec.kind})")
    if complete:
        missing = [v.name for v in tree.variables if v.name not in assignment]
        if missing:
            raise ModelError(f"incomplete assignment, missing: {', '.join(missing)}")


def merge_assignments(base: Assignment, overlay: Assignment) -> Assignment:
    """Union of two assignments; equal values may overlap, unequal ones conflict."""
    merged = dict(base)
    for name, value in overlay.items():
        if name in merged and merged[name] != value:
            raise MergeConflictError(name, merged[name], value)
        merged[name] = value
    return merged


def _value_key(v: Value) -> tuple:
    if isinstance(v, bool):
        return ("b", v)
    if _is_number(v):
        # 70 and 70.0 are the same value; float ordering keeps members sorted numerically
        return ("n", float(v))
    return ("s", v)


def _assignment_key(a: Assignment) -> tuple:
    return tuple(sorted((k, _value_key(v)) for k, v in a.items()))


class AbductionClass:
    """The set of complete hidden-variable assignments consistent with an
    observed outcome. Membership and equality are structural; iteration order
    is canonical (sorted) so downstream serialization is deterministic."""

    def __init__(self, members: Iterable[Assignment]):
        seen: dict[tuple, Assignment] = {}
        for m in members:
            seen.setdefault(_assignment_key(m), dict(m))
        self._members = tuple(seen[k] for k in sorted(seen))

    @property
    def members(self) -> tuple[Assignment, ...]:
        return self._members

    def __len__(self) -> int:
        return len(self._members)

    def __iter__(self) -> Iterator[Assignment]:
        return iter(self._members)

    def __contains__(self, assignment: Assignment) -> bool:
        key = _assignment_key(assignment)
        return any(_assignment_key(m) == key for m in self._members)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AbductionClass):
            return NotImplemented
        return [_assignment_key(m) for m in self._members] == [
            _assignment_key(m) for m in other._members
        ]

    def __repr__(self) -> str:
        return f"AbductionClass({list(self._members)!r})"
