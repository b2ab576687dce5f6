"""Tree execution: complete runs with path traces, partial runs over
incomplete assignments, abduction of hidden variables from an observed
outcome, and the consistency check the counterfactual verifier relies on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .constraints import ConstraintSet
from .model import (
    Assignment,
    Branch,
    AbductionClass,
    DecisionTree,
    ExecutionPath,
    Leaf,
    ModelError,
    PathStep,
    check_assignment,
    merge_assignments,
)


@dataclass(frozen=True)
class ExecutionResult:
    output_index: int
    label: str
    path: ExecutionPath


@dataclass(frozen=True)
class Decided:
    result: ExecutionResult


@dataclass(frozen=True)
class Undecided:
    """The assignment does not pin down a leaf.

    reachable holds every output index some completion can still produce;
    blocking holds the unassigned variables appearing in predicates on
    branches a completion can still reach.
    """

    reachable: frozenset[int]
    blocking: frozenset[str]


Residual = Union[Decided, Undecided]


def execute(tree: DecisionTree, assignment: Assignment) -> ExecutionResult:
    """Run a complete assignment to its leaf, recording every branch taken."""
    check_assignment(tree, assignment, complete=True)
    node = tree.root
    steps: list[PathStep] = []
    while isinstance(node, Branch):
        taken = node.predicate.evaluate(assignment[node.predicate.var])
        steps.append(PathStep(node.predicate, taken))
        node = node.then if taken else node.orelse
    return ExecutionResult(
        output_index=node.output_index,
        label=tree.outputs[node.output_index],
        path=tuple(steps),
    )


def partial_execute(tree: DecisionTree, assignment: Assignment) -> Residual:
    """Walk as far as the assignment decides; report the residual otherwise.

    The walk is Decided only when every predicate it actually encounters is
    resolvable. Otherwise the result enumerates the output indices reachable
    under some completion, pruning branches whose accumulated numeric
    intervals or value sets are unsatisfiable.
    """
    check_assignment(tree, assignment)
    node = tree.root
    steps: list[PathStep] = []
    while isinstance(node, Branch) and node.predicate.var in assignment:
        taken = node.predicate.evaluate(assignment[node.predicate.var])
        steps.append(PathStep(node.predicate, taken))
        node = node.then if taken else node.orelse
    if isinstance(node, Leaf):
        return Decided(
            ExecutionResult(
                output_index=node.output_index,
                label=tree.outputs[node.output_index],
                path=tuple(steps),
            )
        )

    reachable: set[int] = set()
    blocking: set[str] = set()

    def explore(n, cs: ConstraintSet) -> None:
        if isinstance(n, Leaf):
            reachable.add(n.output_index)
            return
        pred = n.predicate
        if pred.var in assignment:
            taken = pred.evaluate(assignment[pred.var])
            explore(n.then if taken else n.orelse, cs)
            return
        blocking.add(pred.var)
        for taken, child in ((True, n.then), (False, n.orelse)):
            refined = cs.refine(pred, taken)
            if refined.satisfiable():
                explore(child, refined)

    explore(node, ConstraintSet(tree))
    return Undecided(reachable=frozenset(reachable), blocking=frozenset(blocking))


def abduce(
    tree: DecisionTree,
    observed: Assignment,
    hidden_names: frozenset[str] | set[str],
    y_obs: str,
) -> AbductionClass:
    """All hidden completions (grid values for numerics, full domains
    otherwise) under which the tree still produces y_obs.

    Candidates are pruned with partial_execute: a partial hidden choice is
    abandoned as soon as y_obs becomes unreachable, and accepted wholesale
    (crossed with the remaining domains) as soon as the outcome is decided.
    """
    hidden = set(hidden_names)
    overlap = hidden & set(observed)
    if overlap:
        raise ModelError(f"observed and hidden overlap: {sorted(overlap)}")
    for name in hidden:
        tree.variable(name)
    check_assignment(tree, observed)
    target = {i for i, label in enumerate(tree.outputs) if label == y_obs}
    if not target:
        raise ModelError(f"y_obs {y_obs!r} is not among the tree outputs")

    order = [v for v in tree.variables if v.name in hidden]
    members: list[Assignment] = []

    def expand(partial: Assignment, remaining: list) -> None:
        """Every completion of `partial` over `remaining` is a member."""
        if not remaining:
            members.append(dict(partial))
            return
        spec, rest = remaining[0], remaining[1:]
        for value in spec.domain_values():
            partial[spec.name] = value
            expand(partial, rest)
        del partial[spec.name]

    def search(partial: Assignment, remaining: list) -> None:
        residual = partial_execute(tree, merge_assignments(observed, partial))
        if isinstance(residual, Decided):
            if residual.result.output_index in target:
                expand(partial, remaining)
            return
        if not (residual.reachable & target):
            return
        if not remaining:
            stuck = sorted(residual.blocking - hidden - set(observed))
            raise ModelError(
                "tree consults variables outside observed and hidden: "
                + ", ".join(stuck)
            )
        spec, rest = remaining[0], remaining[1:]
        for value in spec.domain_values():
            partial[spec.name] = value
            search(partial, rest)
        del partial[spec.name]

    search({}, order)
    return AbductionClass(members)


def check_consistency(
    tree: DecisionTree,
    observed: Assignment,
    hidden: Assignment,
    y_obs: str,
) -> bool:
    """Does executing observed merged with hidden reproduce y_obs?"""
    merged = merge_assignments(observed, hidden)
    return execute(tree, merged).label == y_obs
