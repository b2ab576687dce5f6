"""Per-variable admissible sets induced by a chain of branch decisions.

Numeric constraints compose to a single interval with open or closed
endpoints (threshold predicates cannot produce anything richer), plus an
optional pinned value from an equality test and a set of excluded points
from negated equalities. Boolean and categorical constraints are plain
subsets of the declared domain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .model import (
    BOOLEAN,
    CATEGORICAL,
    DecisionTree,
    ModelError,
    Predicate,
    Value,
    VariableSpec,
)


@dataclass(frozen=True)
class NumericConstraint:
    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False
    pinned: float | None = None
    excluded: tuple[float, ...] = ()
    contradictory: bool = False  # set when two pins disagree

    def interval_nonempty(self) -> bool:
        if self.lo < self.hi:
            return True
        return self.lo == self.hi and not self.lo_open and not self.hi_open

    def contains(self, x: float) -> bool:
        if self.contradictory:
            return False
        if self.pinned is not None and x != self.pinned:
            return False
        if x in self.excluded:
            return False
        if x < self.lo or (x == self.lo and self.lo_open):
            return False
        if x > self.hi or (x == self.hi and self.hi_open):
            return False
        return True

    def satisfiable(self) -> bool:
        if self.contradictory:
            return False
        if self.pinned is not None:
            return self.contains(self.pinned)
        if not self.interval_nonempty():
            return False
        if self.lo == self.hi:  # single closed point
            return self.lo not in self.excluded
        # a real interval minus finitely many points is never empty
        return True

    def describe(self) -> str:
        left = "(" if self.lo_open else "["
        right = ")" if self.hi_open else "]"
        s = f"{left}{self.lo}, {self.hi}{right}"
        if self.pinned is not None:
            s += f" pinned={self.pinned}"
        if self.excluded:
            s += f" excluding {sorted(self.excluded)}"
        return s


def _tighten_lower(c: NumericConstraint, bound: float, open_: bool) -> NumericConstraint:
    if bound > c.lo or (bound == c.lo and open_ and not c.lo_open):
        return replace(c, lo=bound, lo_open=open_)
    return c


def _tighten_upper(c: NumericConstraint, bound: float, open_: bool) -> NumericConstraint:
    if bound < c.hi or (bound == c.hi and open_ and not c.hi_open):
        return replace(c, hi=bound, hi_open=open_)
    return c


def _refine_numeric(c: NumericConstraint, op: str, v: float, taken: bool) -> NumericConstraint:
    if op == "lt":
        return _tighten_upper(c, v, True) if taken else _tighten_lower(c, v, False)
    if op == "le":
        return _tighten_upper(c, v, False) if taken else _tighten_lower(c, v, True)
    if op == "gt":
        return _tighten_lower(c, v, True) if taken else _tighten_upper(c, v, False)
    if op == "ge":
        return _tighten_lower(c, v, False) if taken else _tighten_upper(c, v, True)
    if op == "eq":
        if taken:
            if c.pinned is not None and c.pinned != v:
                return replace(c, contradictory=True)
            return replace(c, pinned=v)
        if v not in c.excluded:
            return replace(c, excluded=tuple(sorted(c.excluded + (v,))))
        return c
    raise ModelError(f"unknown numeric op {op!r}")


class ConstraintSet:
    """Immutable map from variable name to its admissible set."""

    def __init__(
        self,
        tree: DecisionTree,
        booleans: dict[str, frozenset[bool]] | None = None,
        categoricals: dict[str, frozenset[str]] | None = None,
        numerics: dict[str, NumericConstraint] | None = None,
    ):
        self._tree = tree
        if booleans is None:
            booleans, categoricals, numerics = {}, {}, {}
            for spec in tree.variables:
                if spec.kind == BOOLEAN:
                    booleans[spec.name] = frozenset((False, True))
                elif spec.kind == CATEGORICAL:
                    categoricals[spec.name] = frozenset(spec.values)
                else:
                    numerics[spec.name] = NumericConstraint(lo=spec.min, hi=spec.max)
        self._booleans = booleans
        self._categoricals = categoricals
        self._numerics = numerics

    @property
    def tree(self) -> DecisionTree:
        return self._tree

    def refine(self, predicate: Predicate, taken: bool) -> "ConstraintSet":
        name = predicate.var
        spec = self._tree.variable(name)
        if spec.kind == BOOLEAN:
            allowed = frozenset({predicate.value} if taken else {not predicate.value})
            new = dict(self._booleans)
            new[name] = self._booleans[name] & allowed
            return ConstraintSet(self._tree, new, self._categoricals, self._numerics)
        if spec.kind == CATEGORICAL:
            literal = predicate.value if predicate.op == "in" else frozenset({predicate.value})
            allowed = literal if taken else frozenset(spec.values) - literal
            new = dict(self._categoricals)
            new[name] = self._categoricals[name] & allowed
            return ConstraintSet(self._tree, self._booleans, new, self._numerics)
        new = dict(self._numerics)
        new[name] = _refine_numeric(self._numerics[name], predicate.op, predicate.value, taken)
        return ConstraintSet(self._tree, self._booleans, self._categoricals, new)

    def satisfiable(self) -> bool:
        return self.unsatisfiable_variable() is None

    def unsatisfiable_variable(self) -> str | None:
        """Name of some variable with an empty admissible set, else None."""
        for name, allowed in self._booleans.items():
            if not allowed:
                return name
        for name, allowed in self._categoricals.items():
            if not allowed:
                return name
        for name, c in self._numerics.items():
            if not c.satisfiable():
                return name
        return None

    def allows(self, name: str, value: Value) -> bool:
        spec = self._tree.variable(name)
        if spec.kind == BOOLEAN:
            return value in self._booleans[name]
        if spec.kind == CATEGORICAL:
            return value in self._categoricals[name]
        return self._numerics[name].contains(float(value))

    def boolean_choices(self, name: str) -> tuple[bool, ...]:
        return tuple(sorted(self._booleans[name]))

    def categorical_choices(self, name: str) -> tuple[str, ...]:
        # declared order keeps sampling deterministic
        spec = self._tree.variable(name)
        allowed = self._categoricals[name]
        return tuple(v for v in spec.values if v in allowed)

    def numeric(self, name: str) -> NumericConstraint:
        return self._numerics[name]

    def grid_choices(self, name: str) -> tuple[float, ...]:
        """Grid points of the variable that the constraint admits."""
        spec = self._tree.variable(name)
        c = self._numerics[name]
        return tuple(g for g in spec.grid if c.contains(g))

    def grid_satisfiable(self, name: str) -> bool:
        c = self._numerics[name]
        if c.pinned is not None:
            return c.contains(c.pinned)
        return bool(self.grid_choices(name))

    def choice_count(self, spec: VariableSpec) -> int:
        """How many distinct values the sampler can produce for spec."""
        if spec.kind == BOOLEAN:
            return len(self._booleans[spec.name])
        if spec.kind == CATEGORICAL:
            return len(self._categoricals[spec.name])
        c = self._numerics[spec.name]
        if c.pinned is not None:
            return 1 if c.contains(c.pinned) else 0
        n = len(self.grid_choices(spec.name))
        # midpoint fallback still yields one value for a satisfiable interval
        if n == 0 and c.satisfiable():
            return 1
        return n

    def describe(self, name: str) -> str:
        spec = self._tree.variable(name)
        if spec.kind == BOOLEAN:
            return "{" + ", ".join(str(b).lower() for b in sorted(self._booleans[name])) + "}"
        if spec.kind == CATEGORICAL:
            return "{" + ", ".join(sorted(self._categoricals[name])) + "}"
        return self._numerics[name].describe()
