"""Response parsing and verifiable rewards.

Factual responses must be `<think>...</think><answer>...</answer>`;
counterfactual responses insert `<hidden>name=value(; name=value)*</hidden>`
between them. Total reward is -1 for a malformed response, otherwise the 0/1
correctness signal: exact normalized label match for factual answers, and
for counterfactual answers the conjunction of hidden-state match,
consistency of the claimed hidden state with the observed outcome, and the
final answer match.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Protocol, Sequence, Union

from .counterfactual import CounterfactualInstance
from .executor import check_consistency
from .factual import FactualInstance
from .model import (
    BOOLEAN,
    NUMERIC,
    Assignment,
    DecisionTree,
    MergeConflictError,
    ModelError,
    merge_assignments,
)

FACTUAL = "factual"
COUNTERFACTUAL = "counterfactual"

STRICT = "strict"
EQUIVALENCE = "equivalence"

MISSING_BLOCK = "missing_block"
BAD_ORDER = "bad_order"
EMPTY_ANSWER = "empty_answer"
BAD_HIDDEN_SYNTAX = "bad_hidden_syntax"

_HIDDEN_NAME_RE = re.compile(r"[a-z][a-z0-9_]*\Z")

_REL_TOL = 1e-9
_ABS_TOL = 1e-12


@dataclass(frozen=True)
class ParsedResponse:
    format_ok: bool
    format_error: str | None = None
    think_text: str | None = None
    answer_text: str | None = None
    hidden_claims: dict[str, str] | None = None  # raw strings, typed at scoring time


@dataclass(frozen=True)
class RewardBreakdown:
    """total is -1, 0 or 1; format is -1 on grammar violations else 0. The
    three factor fields are None whenever they were not evaluated."""

    total: int
    format: int
    answer: int | None = None
    hidden_match: bool | None = None
    consistency: bool | None = None
    format_error: str | None = None


def _format_failure(code: str) -> ParsedResponse:
    return ParsedResponse(format_ok=False, format_error=code)


def parse_response(text: str, kind: str) -> ParsedResponse:
    """Parse one model response against the grammar for its instance kind.
    Surrounding whitespace is ignored; anything else outside the expected
    blocks, duplicated blocks, or misordered blocks fail the format."""
    if kind == FACTUAL:
        tags = ("think", "answer")
    elif kind == COUNTERFACTUAL:
        tags = ("think", "hidden", "answer")
    else:
        raise ValueError(f"unknown instance kind {kind!r}")

    contents: dict[str, str] = {}
    pos = 0
    for tag in tags:
        open_tag, close_tag = f"<{tag}>", f"</{tag}>"
        start = text.find(open_tag, pos)
        if start < 0:
            code = BAD_ORDER if text.find(open_tag) >= 0 else MISSING_BLOCK
            return _format_failure(code)
        if text[pos:start].strip():
            return _format_failure(BAD_ORDER)
        end = text.find(close_tag, start + len(open_tag))
        if end < 0:
            return _format_failure(MISSING_BLOCK)
        contents[tag] = text[start + len(open_tag):end]
        pos = end + len(close_tag)
    if text[pos:].strip():
        return _format_failure(BAD_ORDER)

    claims: dict[str, str] | None = None
    if "hidden" in contents:
        claims = {}
        for part in contents["hidden"].split(";"):
            part = part.strip()
            if not part:
                return _format_failure(BAD_HIDDEN_SYNTAX)
            name, sep, value = part.partition("=")
            name, value = name.strip(), value.strip()
            if not sep or not value or not _HIDDEN_NAME_RE.match(name) or name in claims:
                return _format_failure(BAD_HIDDEN_SYNTAX)
            claims[name] = value

    answer = contents["answer"]
    if not answer.strip():
        return _format_failure(EMPTY_ANSWER)

    return ParsedResponse(
        format_ok=True,
        think_text=contents["think"],
        answer_text=answer,
        hidden_claims=claims,
    )


def normalize_label(label: str) -> str:
    return re.sub(r"\s+", " ", label).strip().casefold()


def _format_breakdown(parsed: ParsedResponse) -> RewardBreakdown:
    return RewardBreakdown(total=-1, format=-1, format_error=parsed.format_error)


def factual_reward(parsed: ParsedResponse, instance: FactualInstance) -> RewardBreakdown:
    if not parsed.format_ok:
        return _format_breakdown(parsed)
    answer = int(normalize_label(parsed.answer_text) == normalize_label(instance.label))
    return RewardBreakdown(total=answer, format=0, answer=answer)


def _coerce_claims(tree: DecisionTree, raw: dict[str, str]) -> Assignment | None:
    typed: Assignment = {}
    for name, value in raw.items():
        try:
            spec = tree.variable(name)
        except ModelError:
            return None
        if spec.kind == BOOLEAN:
            low = value.casefold()
            if low not in ("true", "false"):
                return None
            typed[name] = low == "true"
        elif spec.kind == NUMERIC:
            try:
                typed[name] = float(value)
            except ValueError:
                return None
            if not math.isfinite(typed[name]):
                return None
        else:
            typed[name] = value
    return typed


def _values_match(a, b) -> bool:
    if isinstance(a, bool) or isinstance(b, bool):
        return a is b or a == b
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=_REL_TOL, abs_tol=_ABS_TOL)
    return a == b


def _assignments_match(a: Assignment, b: Assignment) -> bool:
    return set(a) == set(b) and all(_values_match(a[k], b[k]) for k in a)


def counterfactual_reward(
    parsed: ParsedResponse,
    instance: CounterfactualInstance,
    tree: DecisionTree,
    mode: str = STRICT,
) -> RewardBreakdown:
    """Strict mode credits only the gold hidden state; equivalence mode
    credits any member of the abduction class. An undeclared, missing,
    duplicate-free-but-wrong-shaped or unparseable hidden claim scores
    hidden_match=false and consistency=false rather than a format error."""
    if mode not in (STRICT, EQUIVALENCE):
        raise ValueError(f"unknown mode {mode!r}")
    if not parsed.format_ok:
        return _format_breakdown(parsed)

    typed = _coerce_claims(tree, parsed.hidden_claims or {})
    hidden_match = False
    consistency = False
    if typed is not None and set(typed) == set(instance.hidden_names):
        if mode == STRICT:
            hidden_match = _assignments_match(typed, instance.hidden_values)
        else:
            hidden_match = any(
                _assignments_match(typed, member) for member in instance.abduction_class
            )
        try:
            context = merge_assignments(
                instance.observed, {instance.intervention.var: instance.intervention.original}
            )
            consistency = check_consistency(tree, context, typed, instance.y_obs)
        except (ModelError, MergeConflictError):
            consistency = False

    answer = int(normalize_label(parsed.answer_text) == normalize_label(instance.y_cf))
    total = int(hidden_match and consistency and bool(answer))
    return RewardBreakdown(
        total=total,
        format=0,
        answer=answer,
        hidden_match=hidden_match,
        consistency=consistency,
    )


# ---------------------------------------------------------------------------
# batch scoring

@dataclass(frozen=True)
class StoredInstance:
    kind: str  # "factual" | "counterfactual"
    instance: Union[FactualInstance, CounterfactualInstance]
    tree: DecisionTree


class InstanceLookup(Protocol):
    def get(self, instance_id: str) -> StoredInstance | None: ...


@dataclass(frozen=True)
class ScoredResponse:
    instance_id: str
    breakdown: RewardBreakdown | None
    error: str | None  # "unknown_instance" when the id is not in the store


UNKNOWN_INSTANCE = "unknown_instance"


def score_response(store: InstanceLookup, instance_id: str, response: str, mode: str = STRICT) -> ScoredResponse:
    entry = store.get(instance_id)
    if entry is None:
        return ScoredResponse(instance_id=instance_id, breakdown=None, error=UNKNOWN_INSTANCE)
    parsed = parse_response(response, entry.kind)
    if entry.kind == FACTUAL:
        breakdown = factual_reward(parsed, entry.instance)
    else:
        breakdown = counterfactual_reward(parsed, entry.instance, entry.tree, mode)
    # format failures surface through format=-1, not the error field; the
    # wire contract reserves error for unresolvable requests
    return ScoredResponse(instance_id=instance_id, breakdown=breakdown, error=None)


def score_batch(
    store: InstanceLookup,
    responses: Sequence[tuple[str, str]],
    mode: str = STRICT,
) -> list[ScoredResponse]:
    """Score (instance_id, response_text) pairs in order; unknown ids come
    back as error entries rather than raising."""
    if mode not in (STRICT, EQUIVALENCE):
        raise ValueError(f"unknown mode {mode!r}")
    return [score_response(store, iid, text, mode) for iid, text in responses]
