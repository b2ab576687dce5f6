"""LLM-backed steps: recommendation extraction, tree drafting with one
repair round, and rationale verbalization.

Backends are pluggable behind a one-method protocol. The fixture backend
replays canned responses keyed by a sha256 of the request, which makes every
LLM-dependent pipeline stage reproducible and testable offline; the HTTP
backend talks to an OpenAI-style chat-completions endpoint with bounded
retries.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from string import Template
from typing import Protocol, Union

from importlib import resources

from . import canon
from .counterfactual import CounterfactualInstance
from .factual import FactualInstance
from .model import DecisionTree, ModelError, Source, TreeMeta
from .treeio import TreeFormatError, parse_tree, validate_tree

logger = logging.getLogger(__name__)

DEFAULT_PARAMS = {"temperature": 0.0, "max_tokens": 2048}

ENV_BASE_URL = "GUIDEX_LLM_BASE_URL"
ENV_API_KEY = "GUIDEX_LLM_API_KEY"
ENV_MODEL = "GUIDEX_LLM_MODEL"

_MAX_RETRIES = 3
_BACKOFF_BASE = 1.0
_BACKOFF_FACTOR = 2.0


class BackendError(RuntimeError):
    """The backend could not produce a response."""


class FixtureMissingError(BackendError):
    pass


class ResponseParseError(RuntimeError):
    """The model reply stayed unparseable after the repair round."""


class DraftRejectedError(RuntimeError):
    """Tree drafting failed after the repair round; reason says why."""

    def __init__(self, candidate_action: str, reason: str):
        self.reason = reason
        super().__init__(f"draft for {candidate_action!r} rejected: {reason}")


class ExtractionBackend(Protocol):
    def complete(self, messages: list[dict], params: dict) -> str: ...


def request_digest(messages: list[dict], params: dict) -> str:
    body = {
        "messages": [{"role": m["role"], "content": m["content"]} for m in messages],
        "params": {k: params[k] for k in sorted(params)},
    }
    return canon.sha256_obj(body)


class FixtureBackend:
    """Replays fixtures/<sha256-of-request>.txt; a missing file is an error,
    never a silent fallback."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)

    def complete(self, messages: list[dict], params: dict) -> str:
        digest = request_digest(messages, params)
        path = self.fixture_dir / f"{digest}.txt"
        if not path.is_file():
            head = messages[-1]["content"][:80].replace("\n", " ")
            raise FixtureMissingError(
                f"no fixture {path.name} under {self.fixture_dir} (request starts {head!r})"
            )
        return path.read_text(encoding="utf-8")


class HttpChatBackend:
    """OpenAI-style chat-completions client with bounded concurrency and
    exponential backoff on transient failures."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        max_in_flight: int = 4,
        session=None,
        sleep=time.sleep,
    ):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "")
        if not self.base_url or not self.model:
            raise BackendError(
                f"http backend needs {ENV_BASE_URL} and {ENV_MODEL} (or explicit arguments)"
            )
        if session is None:
            import requests

            session = requests.Session()
        self._session = session
        self._sleep = sleep
        self._gate = threading.Semaphore(max_in_flight)

    def complete(self, messages: list[dict], params: dict) -> str:
        payload = {"model": self.model, "messages": messages, **params}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        url = f"{self.base_url}/chat/completions"
        last = "no attempt made"
        with self._gate:
            for attempt in range(_MAX_RETRIES + 1):
                if attempt:
                    self._sleep(_BACKOFF_BASE * _BACKOFF_FACTOR ** (attempt - 1))
                try:
                    resp = self._session.post(url, json=payload, headers=headers, timeout=120)
                except Exception as e:  # connection-level failure, retryable
                    last = f"transport error: {e}"
                    continue
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError) as e:
                        raise BackendError(f"malformed completion body: {e}") from None
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"status {resp.status_code}"
                    continue
                raise BackendError(f"completion request failed with status {resp.status_code}")
        raise BackendError(f"completion request failed after retries ({last})")


def make_backend(fixture_dir: str | Path | None) -> ExtractionBackend:
    if fixture_dir is not None:
        return FixtureBackend(fixture_dir)
    return HttpChatBackend()


def load_prompt(name: str) -> str:
    return (
        resources.files("guidex").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")
    )


def _strip_code_fence(text: str) -> str:
    body = text.strip()
    if body.startswith("```"):
        lines = body.splitlines()
        if lines and lines[-1].strip().startswith("```"):
            body = "\n".join(lines[1:-1])
        else:
            body = "\n".join(lines[1:])
    return body.strip()


# ---------------------------------------------------------------------------
# recommendation extraction

@dataclass(frozen=True)
class RecommendationCandidate:
    population: str
    condition: str
    action: str
    exceptions: str | None
    evidence_grade: str | None
    chunk_id: str

    def __post_init__(self):
        if not self.condition.strip() or not self.action.strip():
            raise ModelError("candidate needs a non-empty condition and action")


@dataclass(frozen=True)
class ExtractStats:
    raw: int   # entries the model produced
    kept: int  # entries surviving the condition-action test and dedup


def _parse_candidate_array(text: str) -> list[dict]:
    body = _strip_code_fence(text)
    parsed = json.loads(body)  # json.JSONDecodeError escapes to the caller
    if not isinstance(parsed, list):
        raise json.JSONDecodeError("expected a JSON array", body, 0)
    for entry in parsed:
        if not isinstance(entry, dict):
            raise json.JSONDecodeError("expected objects inside the array", body, 0)
    return parsed


def _norm_text(s: str) -> str:
    return " ".join(s.split()).casefold()


def extract_recommendations(chunk, backend: ExtractionBackend, params: dict | None = None):
    kept, _ = extract_recommendations_with_stats(chunk, backend, params)
    return kept


def extract_recommendations_with_stats(
    chunk, backend: ExtractionBackend, params: dict | None = None
) -> tuple[list[RecommendationCandidate], ExtractStats]:
    """Ask the backend for condition-action rules in one chunk. Entries with
    no concrete condition or action are dropped; within-chunk near-duplicates
    (same normalized population+condition+action) keep only the first."""
    params = dict(DEFAULT_PARAMS if params is None else params)
    prompt = Template(load_prompt("extract_recommendations_v1")).substitute(
        chunk_id=chunk.chunk_id, chunk_text=chunk.text
    )
    messages = [{"role": "user", "content": prompt}]
    text = backend.complete(messages, params)
    try:
        entries = _parse_candidate_array(text)
    except json.JSONDecodeError as first_error:
        repair = Template(load_prompt("repair_json_v1")).substitute(error=str(first_error))
        messages = messages + [
            {"role": "assistant", "content": text},
            {"role": "user", "content": repair},
        ]
        text = backend.complete(messages, params)
        try:
            entries = _parse_candidate_array(text)
        except json.JSONDecodeError as second_error:
            raise ResponseParseError(
                f"chunk {chunk.chunk_id}: unparseable after repair ({second_error})"
            ) from None

    kept: list[RecommendationCandidate] = []
    seen: set[tuple[str, str, str]] = set()
    for entry in entries:
        population = str(entry.get("population") or "")
        condition = str(entry.get("condition") or "")
        action = str(entry.get("action") or "")
        if not condition.strip() or not action.strip():
            continue  # fails the condition-action test
        key = (_norm_text(population), _norm_text(condition), _norm_text(action))
        if key in seen:
            continue
        seen.add(key)
        exceptions = entry.get("exceptions")
        grade = entry.get("evidence_grade")
        kept.append(
            RecommendationCandidate(
                population=population,
                condition=condition,
                action=action,
                exceptions=str(exceptions) if exceptions else None,
                evidence_grade=str(grade) if grade else None,
                chunk_id=chunk.chunk_id,
            )
        )
    return kept, ExtractStats(raw=len(entries), kept=len(kept))


# ---------------------------------------------------------------------------
# tree drafting

def candidate_to_obj(candidate: RecommendationCandidate) -> dict:
    return {
        "population": candidate.population,
        "condition": candidate.condition,
        "action": candidate.action,
        "exceptions": candidate.exceptions,
        "evidence_grade": candidate.evidence_grade,
        "chunk_id": candidate.chunk_id,
    }


def _meta_obj(metadata: TreeMeta) -> dict:
    return {
        "disease_or_drug": metadata.disease_or_drug,
        "age_group": metadata.age_group,
        "race": metadata.race,
        "gender": metadata.gender,
        "publication_date": metadata.publication_date.isoformat(),
    }


def _check_draft(text: str, tree_id: str, source: Source) -> tuple[DecisionTree | None, str]:
    """Parse and validate one draft reply; returns (tree, "") or (None, why)."""
    try:
        tree = parse_tree(_strip_code_fence(text))
    except (TreeFormatError, ModelError) as e:
        return None, str(e)
    if tree.id != tree_id:
        return None, f"document id {tree.id!r} differs from the requested {tree_id!r}"
    if tree.source != source:
        return None, "document source does not match the chunk it came from"
    report = validate_tree(tree)
    if not report.ok:
        lines = [f"{f.severity} {f.code} at {f.locator}: {f.message}" for f in report.findings]
        return None, "; ".join(lines)
    return tree, ""


def draft_tree(
    candidate: RecommendationCandidate,
    backend: ExtractionBackend,
    tree_id: str,
    source: Source,
    metadata: TreeMeta,
    params: dict | None = None,
) -> DecisionTree:
    """Draft an executable tree for one candidate. A draft that fails to
    parse or validate gets one repair round with the findings embedded;
    failing again raises DraftRejectedError with the reason."""
    params = dict(DEFAULT_PARAMS if params is None else params)
    prompt = Template(load_prompt("draft_tree_v1")).substitute(
        candidate_json=json.dumps(candidate_to_obj(candidate), indent=1),
        tree_id=tree_id,
        guideline_id=source.guideline_id,
        chunk_id=source.chunk_id,
        metadata_json=canon.dumps(_meta_obj(metadata)),
    )
    messages = [{"role": "user", "content": prompt}]
    text = backend.complete(messages, params)
    tree, why = _check_draft(text, tree_id, source)
    if tree is not None:
        return tree
    logger.info("draft %s rejected (%s); trying repair", tree_id, why)
    repair = Template(load_prompt("repair_tree_v1")).substitute(errors=why)
    messages = messages + [
        {"role": "assistant", "content": text},
        {"role": "user", "content": repair},
    ]
    text = backend.complete(messages, params)
    tree, why = _check_draft(text, tree_id, source)
    if tree is not None:
        return tree
    raise DraftRejectedError(candidate.action, why)


# ---------------------------------------------------------------------------
# rationale verbalization

def _describe_assignment(assignment: dict) -> str:
    return "; ".join(f"{k} = {_plain(v)}" for k, v in assignment.items())


def _plain(v) -> str:
    if isinstance(v, bool):
        return "yes" if v else "no"
    if isinstance(v, float) and v == int(v):
        return str(int(v))
    return str(v)


def _describe_steps(instance: FactualInstance) -> str:
    parts = []
    for step in instance.path:
        p = step.predicate
        value = sorted(p.value) if isinstance(p.value, frozenset) else _plain(p.value)
        holds = "holds" if step.taken else "does not hold"
        parts.append(f"{p.var} {p.op} {value} {holds}")
    return "; ".join(parts) if parts else "none"


def verbalize_rationale(
    instance: Union[FactualInstance, CounterfactualInstance],
    tree: DecisionTree,
    backend: ExtractionBackend,
    params: dict | None = None,
) -> str:
    params = dict(DEFAULT_PARAMS if params is None else params)
    if isinstance(instance, FactualInstance):
        prompt = Template(load_prompt("rationale_factual_v1")).substitute(
            assignment=_describe_assignment(instance.assignment),
            steps=_describe_steps(instance),
            label=instance.label,
        )
    else:
        iv = instance.intervention
        prompt = Template(load_prompt("rationale_counterfactual_v1")).substitute(
            observed=_describe_assignment(instance.observed),
            hidden_names=", ".join(instance.hidden_names),
            y_obs=instance.y_obs,
            intervention=f"{iv.var}: {_plain(iv.original)} -> {_plain(iv.new)}",
            y_cf=instance.y_cf,
        )
    text = backend.complete([{"role": "user", "content": prompt}], params).strip()
    if not text:
        raise BackendError(f"empty rationale for {instance.instance_id}")
    return text
