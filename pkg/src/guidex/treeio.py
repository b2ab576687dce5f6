"""Tree document I/O: strict parsing, canonical serialization, validation
findings, and leaf-path enumeration with per-path admissible sets.

The on-disk document is JSON with schema_version 1 and a fixed field order.
Serialization is canonical: serializing a parsed canonical document
reproduces it byte for byte, and unknown fields are rejected on the way in.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date

from . import canon
from .constraints import ConstraintSet
from .model import (
    BOOLEAN,
    CATEGORICAL,
    NUMERIC,
    Branch,
    DecisionTree,
    Leaf,
    ModelError,
    Node,
    PathStep,
    Predicate,
    Source,
    TreeMeta,
    VariableSpec,
)

SCHEMA_VERSION = 1

ERROR = "error"
WARNING = "warning"

DEAD_BRANCH = "dead_branch"
UNUSED_VARIABLE = "unused_variable"
DUPLICATE_OUTPUT_LABEL = "duplicate_output_label"
NO_ACTION_UNSET = "no_action_unset"
UNREACHABLE_OUTPUT = "unreachable_output"
GRID_UNSATISFIABLE = "grid_unsatisfiable"


class TreeFormatError(ValueError):
    """A document failed to parse."""


class TreeSyntaxError(TreeFormatError):
    def __init__(self, msg: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(f"syntax error at line {line} column {column}: {msg}")


class TreeSchemaError(TreeFormatError):
    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}")


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    code: str
    message: str
    locator: str


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    findings: tuple[Finding, ...]

    def errors(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == ERROR)

    def warnings(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == WARNING)


@dataclass(frozen=True)
class PathSpec:
    """One root-to-leaf path: its dense id, the branch decisions along it,
    the leaf's output index, and the admissible set the decisions induce."""

    path_id: int
    steps: tuple[PathStep, ...]
    leaf_output_index: int
    constraints: ConstraintSet
    leaf_locator: str

    def satisfiable(self) -> bool:
        return self.constraints.satisfiable()


# ---------------------------------------------------------------------------
# parsing

def _expect_obj(v, path: str, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    if not isinstance(v, dict):
        raise TreeSchemaError(path, f"expected object, got {type(v).__name__}")
    for k in required:
        if k not in v:
            raise TreeSchemaError(path, f"missing required field {k!r}")
    unknown = sorted(set(v) - set(required) - set(optional))
    if unknown:
        raise TreeSchemaError(path, f"unknown field {unknown[0]!r}")
    return v

def _expect_str(v, path: str) -> str:
    if not isinstance(v, str):
        raise TreeSchemaError(path, f"expected string, got {type(v).__name__}")
    return v

def _expect_number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TreeSchemaError(path, f"expected number, got {type(v).__name__}")
    return float(v)

def _expect_int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise TreeSchemaError(path, f"expected integer, got {type(v).__name__}")
    return v

def _expect_list(v, path: str) -> list:
    if not isinstance(v, list):
        raise TreeSchemaError(path, f"expected array, got {type(v).__name__}")
    return v


def _parse_variable(obj, path: str) -> VariableSpec:
    base = _expect_obj(obj, path, ("name", "kind"), ("values", "unit", "min", "max", "grid"))
    name = _expect_str(base["name"], path + ".name")
    kind = _expect_str(base["kind"], path + ".kind")
    if kind == BOOLEAN:
        _expect_obj(obj, path, ("name", "kind"))
        return VariableSpec(name=name, kind=kind)
    if kind == CATEGORICAL:
        _expect_obj(obj, path, ("name", "kind", "values"))
        values = tuple(
            _expect_str(v, f"{path}.values[{i}]")
            for i, v in enumerate(_expect_list(base["values"], path + ".values"))
        )
        return VariableSpec(name=name, kind=kind, values=values)
    if kind == NUMERIC:
        _expect_obj(obj, path, ("name", "kind", "min", "max", "grid"), ("unit",))
        unit = None
        if "unit" in base:
            unit = _expect_str(base["unit"], path + ".unit")
        grid = tuple(
            _expect_number(g, f"{path}.grid[{i}]")
            for i, g in enumerate(_expect_list(base["grid"], path + ".grid"))
        )
        return VariableSpec(
            name=name,
            kind=kind,
            unit=unit,
            min=_expect_number(base["min"], path + ".min"),
            max=_expect_number(base["max"], path + ".max"),
            grid=grid,
        )
    raise TreeSchemaError(path + ".kind", f"unknown kind {kind!r}")


def _parse_predicate(obj, path: str) -> Predicate:
    p = _expect_obj(obj, path, ("var", "op", "value"))
    var = _expect_str(p["var"], path + ".var")
    op = _expect_str(p["op"], path + ".op")
    raw = p["value"]
    value: object
    if op == "in":
        value = frozenset(
            _expect_str(v, f"{path}.value[{i}]")
            for i, v in enumerate(_expect_list(raw, path + ".value"))
        )
    elif op == "is":
        if not isinstance(raw, bool):
            raise TreeSchemaError(path + ".value", "expected boolean")
        value = raw
    elif isinstance(raw, bool):
        raise TreeSchemaError(path + ".value", "boolean literal only valid for op 'is'")
    elif isinstance(raw, (int, float)):
        value = float(raw)
    elif isinstance(raw, str):
        value = raw
    else:
        raise TreeSchemaError(path + ".value", f"unsupported literal type {type(raw).__name__}")
    return Predicate(var=var, op=op, value=value)


def _parse_node(obj, path: str) -> Node:
    node = _expect_obj(obj, path, (), ("leaf", "if", "then", "else"))
    if "leaf" in node:
        _expect_obj(obj, path, ("leaf",))
        return Leaf(output_index=_expect_int(node["leaf"], path + ".leaf"))
    if "if" in node:
        _expect_obj(obj, path, ("if", "then", "else"))
        return Branch(
            predicate=_parse_predicate(node["if"], path + ".if"),
            then=_parse_node(node["then"], path + ".then"),
            orelse=_parse_node(node["else"], path + ".else"),
        )
    raise TreeSchemaError(path, "node must have either 'leaf' or 'if'/'then'/'else'")


def parse_tree(text: str) -> DecisionTree:
    """Parse a schema_version-1 document. Raises TreeSyntaxError with the
    position for malformed JSON, TreeSchemaError with the field path for
    schema violations, and ModelError for domain invariant violations."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise TreeSyntaxError(e.msg, e.lineno, e.colno) from None
    top = _expect_obj(
        doc,
        "$",
        ("schema_version", "id", "source", "metadata", "variables", "outputs",
         "no_action_index", "root"),
    )
    version = _expect_int(top["schema_version"], "$.schema_version")
    if version != SCHEMA_VERSION:
        raise TreeSchemaError("$.schema_version", f"unsupported version {version}")
    src = _expect_obj(top["source"], "$.source", ("guideline_id", "chunk_id"))
    meta = _expect_obj(
        top["metadata"],
        "$.metadata",
        ("disease_or_drug", "age_group", "race", "gender", "publication_date"),
    )
    raw_date = _expect_str(meta["publication_date"], "$.metadata.publication_date")
    try:
        pub = date.fromisoformat(raw_date)
    except ValueError:
        raise TreeSchemaError("$.metadata.publication_date", f"not an ISO date: {raw_date!r}") from None
    variables = tuple(
        _parse_variable(v, f"$.variables[{i}]")
        for i, v in enumerate(_expect_list(top["variables"], "$.variables"))
    )
    outputs = tuple(
        _expect_str(o, f"$.outputs[{i}]")
        for i, o in enumerate(_expect_list(top["outputs"], "$.outputs"))
    )
    nai = top["no_action_index"]
    if nai is not None:
        nai = _expect_int(nai, "$.no_action_index")
    return DecisionTree(
        id=_expect_str(top["id"], "$.id"),
        source=Source(
            guideline_id=_expect_str(src["guideline_id"], "$.source.guideline_id"),
            chunk_id=_expect_str(src["chunk_id"], "$.source.chunk_id"),
        ),
        metadata=TreeMeta(
            disease_or_drug=_expect_str(meta["disease_or_drug"], "$.metadata.disease_or_drug"),
            age_group=_expect_str(meta["age_group"], "$.metadata.age_group"),
            race=_expect_str(meta["race"], "$.metadata.race"),
            gender=_expect_str(meta["gender"], "$.metadata.gender"),
            publication_date=pub,
        ),
        variables=variables,
        outputs=outputs,
        no_action_index=nai,
        root=_parse_node(top["root"], "$.root"),
    )


# ---------------------------------------------------------------------------
# serialization

def _variable_obj(spec: VariableSpec) -> dict:
    if spec.kind == BOOLEAN:
        return {"name": spec.name, "kind": spec.kind}
    if spec.kind == CATEGORICAL:
        return {"name": spec.name, "kind": spec.kind, "values": list(spec.values)}
    obj: dict = {"name": spec.name, "kind": spec.kind}
    if spec.unit is not None:
        obj["unit"] = spec.unit
    obj.update({"min": spec.min, "max": spec.max, "grid": list(spec.grid)})
    return obj


def predicate_obj(p: Predicate) -> dict:
    value = sorted(p.value) if isinstance(p.value, frozenset) else p.value
    return {"var": p.var, "op": p.op, "value": value}


def _node_obj(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.output_index}
    return {
        "if": predicate_obj(node.predicate),
        "then": _node_obj(node.then),
        "else": _node_obj(node.orelse),
    }


def tree_to_obj(tree: DecisionTree) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "id": tree.id,
        "source": {
            "guideline_id": tree.source.guideline_id,
            "chunk_id": tree.source.chunk_id,
        },
        "metadata": {
            "disease_or_drug": tree.metadata.disease_or_drug,
            "age_group": tree.metadata.age_group,
            "race": tree.metadata.race,
            "gender": tree.metadata.gender,
            "publication_date": tree.metadata.publication_date.isoformat(),
        },
        "variables": [_variable_obj(v) for v in tree.variables],
        "outputs": list(tree.outputs),
        "no_action_index": tree.no_action_index,
        "root": _node_obj(tree.root),
    }


def serialize_tree(tree: DecisionTree) -> str:
    """Canonical document text; serialize(parse(d)) == d for canonical d."""
    return canon.dumps(tree_to_obj(tree))


# ---------------------------------------------------------------------------
# paths and validation

def enumerate_paths(tree: DecisionTree) -> tuple[PathSpec, ...]:
    """Every root-to-leaf path, depth-first with then before else.

    path_id is the dense enumeration index starting at 0; constraints carry
    the admissible set of every variable after the path's decisions.
    """
    paths: list[PathSpec] = []

    def go(node: Node, steps: tuple[PathStep, ...], cs: ConstraintSet, loc: str) -> None:
        if isinstance(node, Leaf):
            paths.append(
                PathSpec(
                    path_id=len(paths),
                    steps=steps,
                    leaf_output_index=node.output_index,
                    constraints=cs,
                    leaf_locator=loc,
                )
            )
            return
        go(node.then, steps + (PathStep(node.predicate, True),),
           cs.refine(node.predicate, True), loc + ".then")
        go(node.orelse, steps + (PathStep(node.predicate, False),),
           cs.refine(node.predicate, False), loc + ".else")

    go(tree.root, (), ConstraintSet(tree), "root")
    return tuple(paths)


def path_constraints(tree: DecisionTree, path_id: int) -> ConstraintSet:
    paths = enumerate_paths(tree)
    if not (0 <= path_id < len(paths)):
        raise ModelError(f"unknown path_id {path_id} (tree has {len(paths)} paths)")
    return paths[path_id].constraints


def validate_tree(tree: DecisionTree) -> ValidationReport:
    """Quality findings beyond construction-time well-formedness.

    Errors: dead branches (interval/set satisfiability, not grid
    membership), declared-but-unused variables, duplicate output labels.
    Warnings: null no_action_index, output labels no satisfiable path
    reaches, and satisfiable paths whose numeric interval contains no grid
    point (the sampler falls back to interval midpoints there).
    """
    findings: list[Finding] = []
    paths = enumerate_paths(tree)

    for p in paths:
        bad = p.constraints.unsatisfiable_variable()
        if bad is not None:
            findings.append(
                Finding(
                    ERROR,
                    DEAD_BRANCH,
                    f"path {p.path_id} is unsatisfiable: {bad!r} admits "
                    f"{p.constraints.describe(bad)}",
                    p.leaf_locator,
                )
            )

    used = tree.predicate_vars
    for spec in tree.variables:
        if spec.name not in used:
            findings.append(
                Finding(ERROR, UNUSED_VARIABLE,
                        f"variable {spec.name!r} appears in no predicate", spec.name)
            )

    seen: dict[str, int] = {}
    for i, label in enumerate(tree.outputs):
        if label in seen:
            findings.append(
                Finding(ERROR, DUPLICATE_OUTPUT_LABEL,
                        f"output {i} duplicates output {seen[label]} ({label!r})",
                        f"outputs[{i}]")
            )
        else:
            seen[label] = i

    if tree.no_action_index is None:
        findings.append(
            Finding(WARNING, NO_ACTION_UNSET,
                    "no_action_index is null; balance and no-action statistics are disabled",
                    "no_action_index")
        )

    live = {p.leaf_output_index for p in paths if p.satisfiable()}
    for i in range(len(tree.outputs)):
        if i not in live:
            findings.append(
                Finding(WARNING, UNREACHABLE_OUTPUT,
                        f"no satisfiable path reaches output {i} ({tree.outputs[i]!r})",
                        f"outputs[{i}]")
            )

    for p in paths:
        if not p.satisfiable():
            continue
        for spec in tree.variables:
            if spec.kind == NUMERIC and not p.constraints.grid_satisfiable(spec.name):
                findings.append(
                    Finding(WARNING, GRID_UNSATISFIABLE,
                            f"path {p.path_id}: interval {p.constraints.describe(spec.name)} "
                            f"for {spec.name!r} contains no grid point",
                            p.leaf_locator)
                )

    ok = not any(f.severity == ERROR for f in findings)
    return ValidationReport(ok=ok, findings=tuple(findings))
