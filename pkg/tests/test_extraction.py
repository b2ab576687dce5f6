import json

import pytest

from guidex.corpus import Chunk
from guidex.extraction import (
    BackendError,
    DraftRejectedError,
    FixtureBackend,
    FixtureMissingError,
    HttpChatBackend,
    RecommendationCandidate,
    ResponseParseError,
    draft_tree,
    extract_recommendations,
    extract_recommendations_with_stats,
    request_digest,
    verbalize_rationale,
)
from guidex.factual import FactualConfig, generate_factual_set
from guidex.model import ModelError
from guidex.treeio import serialize_tree, tree_to_obj


class ScriptedBackend:
    """Returns queued replies in order and records every request."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def complete(self, messages, params):
        self.requests.append((messages, params))
        if not self.replies:
            raise AssertionError("backend queried more times than scripted")
        return self.replies.pop(0)


CHUNK = Chunk(chunk_id="g-x#0", text="some guideline text", word_count=3, overflow=False)


def _entry(population="adults", condition="ldl high", action="start statin", **kw):
    return {"population": population, "condition": condition, "action": action, **kw}


def test_extract_parses_and_keeps_candidates():
    reply = json.dumps([_entry(), _entry(condition="ldl very high", evidence_grade="A")])
    backend = ScriptedBackend([reply])
    kept, stats = extract_recommendations_with_stats(CHUNK, backend)
    assert (stats.raw, stats.kept) == (2, 2)
    assert all(isinstance(c, RecommendationCandidate) for c in kept)
    assert kept[0].chunk_id == "g-x#0"
    assert kept[1].evidence_grade == "A"
    # the prompt names the chunk so fixtures can key on it
    assert "g-x#0" in backend.requests[0][0][0]["content"]


def test_extract_drops_actionless_entries():
    reply = json.dumps([
        _entry(),
        {"population": "adults", "condition": "context only", "action": ""},
        {"population": "adults", "condition": "", "action": "do something"},
    ])
    kept, stats = extract_recommendations_with_stats(CHUNK, ScriptedBackend([reply]))
    assert (stats.raw, stats.kept) == (3, 1)


def test_extract_dedups_within_chunk():
    reply = json.dumps([
        _entry(),
        _entry(population="Adults", condition="LDL  high", action="START statin"),
        _entry(action="different action"),
    ])
    kept = extract_recommendations(CHUNK, ScriptedBackend([reply]))
    assert len(kept) == 2
    assert kept[0].action == "start statin"


def test_extract_code_fence_tolerated():
    reply = "```json\n" + json.dumps([_entry()]) + "\n```"
    assert len(extract_recommendations(CHUNK, ScriptedBackend([reply]))) == 1


def test_extract_repair_round():
    good = json.dumps([_entry()])
    backend = ScriptedBackend(["this is not json", good])
    kept = extract_recommendations(CHUNK, backend)
    assert len(kept) == 1
    assert len(backend.requests) == 2
    # repair request keeps the history: prompt, bad reply, repair note
    repair_messages = backend.requests[1][0]
    assert [m["role"] for m in repair_messages] == ["user", "assistant", "user"]
    assert repair_messages[1]["content"] == "this is not json"


def test_extract_unparseable_after_repair():
    backend = ScriptedBackend(["junk", "{\"still\": \"not an array\"}"])
    with pytest.raises(ResponseParseError):
        extract_recommendations(CHUNK, backend)


def test_candidate_requires_condition_and_action():
    with pytest.raises(ModelError):
        RecommendationCandidate(
            population="adults", condition=" ", action="x",
            exceptions=None, evidence_grade=None, chunk_id="c#0",
        )


def _draft_args(statin_tree):
    cand = RecommendationCandidate(
        population="adults over 50",
        condition="elevated ldl",
        action="start a statin",
        exceptions=None,
        evidence_grade=None,
        chunk_id=statin_tree.source.chunk_id,
    )
    return cand, statin_tree.id, statin_tree.source, statin_tree.metadata


def test_draft_tree_first_try(statin_tree):
    cand, tree_id, source, meta = _draft_args(statin_tree)
    backend = ScriptedBackend([serialize_tree(statin_tree)])
    tree = draft_tree(cand, backend, tree_id, source, meta)
    assert tree == statin_tree
    prompt = backend.requests[0][0][0]["content"]
    assert f'use exactly "{tree_id}"' in prompt


def test_draft_tree_repair_round(statin_tree):
    cand, tree_id, source, meta = _draft_args(statin_tree)
    # first draft declares an unused variable: a validation error
    obj = tree_to_obj(statin_tree)
    obj["variables"].append({"name": "smoker", "kind": "boolean"})
    bad = json.dumps(obj)
    backend = ScriptedBackend([bad, serialize_tree(statin_tree)])
    tree = draft_tree(cand, backend, tree_id, source, meta)
    assert tree == statin_tree
    assert len(backend.requests) == 2
    repair_note = backend.requests[1][0][2]["content"]
    assert "unused_variable" in repair_note and "smoker" in repair_note


def test_draft_tree_rejects_after_two_failures(statin_tree):
    cand, tree_id, source, meta = _draft_args(statin_tree)
    backend = ScriptedBackend(["not a tree at all", "still prose"])
    with pytest.raises(DraftRejectedError):
        draft_tree(cand, backend, tree_id, source, meta)


def test_draft_tree_rejects_wrong_id(statin_tree):
    cand, _, source, meta = _draft_args(statin_tree)
    backend = ScriptedBackend([serialize_tree(statin_tree), serialize_tree(statin_tree)])
    with pytest.raises(DraftRejectedError, match="t-other"):
        draft_tree(cand, backend, "t-other", source, meta)


def test_verbalize_rationale(statin_tree):
    instance = generate_factual_set(statin_tree, FactualConfig(seed=1, per_path=1))[0]
    backend = ScriptedBackend(["Because age is at least 50 the guideline applies."])
    text = verbalize_rationale(instance, statin_tree, backend)
    assert text.startswith("Because")
    prompt = backend.requests[0][0][0]["content"]
    assert "age" in prompt

    with pytest.raises(BackendError):
        verbalize_rationale(instance, statin_tree, ScriptedBackend(["   "]))


def test_verbalize_counterfactual_prompt_names_steps(statin_tree):
    from guidex.counterfactual import CfConfig, generate_counterfactual_set

    pool = generate_factual_set(statin_tree, FactualConfig(seed=1, per_path=1))
    inst = generate_counterfactual_set(statin_tree, pool, CfConfig(seed=1, per_tree=1))[0]
    backend = ScriptedBackend(["abduction: x. intervention: y. prediction: z."])
    text = verbalize_rationale(inst, statin_tree, backend)
    for step in ("abduction", "intervention", "prediction"):
        assert step in text
        assert step in backend.requests[0][0][0]["content"]


# ---------------------------------------------------------------------------
# backends

def test_request_digest_stable_under_param_order():
    msgs = [{"role": "user", "content": "hello"}]
    a = request_digest(msgs, {"temperature": 0.0, "max_tokens": 10})
    b = request_digest(msgs, {"max_tokens": 10, "temperature": 0.0})
    assert a == b
    assert len(a) == 64 and set(a) <= set("0123456789abcdef")
    assert a != request_digest(msgs, {"temperature": 0.5, "max_tokens": 10})
    assert a != request_digest([{"role": "user", "content": "other"}], {"temperature": 0.0, "max_tokens": 10})


def test_fixture_backend_replays(tmp_path):
    msgs = [{"role": "user", "content": "prompt text"}]
    params = {"temperature": 0.0}
    digest = request_digest(msgs, params)
    (tmp_path / f"{digest}.txt").write_text("canned reply", encoding="utf-8")
    backend = FixtureBackend(tmp_path)
    assert backend.complete(msgs, params) == "canned reply"
    with pytest.raises(FixtureMissingError):
        backend.complete([{"role": "user", "content": "unseen"}], params)


class FakeResponse:
    def __init__(self, status_code, body=None):
        self.status_code = status_code
        self._body = body

    def json(self):
        if self._body is None:
            raise ValueError("no body")
        return self._body


class FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _ok(content="hi"):
    return FakeResponse(200, {"choices": [{"message": {"content": content}}]})


def _http_backend(session, sleeps):
    return HttpChatBackend(
        base_url="http://llm.test/v1",
        api_key="k",
        model="m",
        session=session,
        sleep=sleeps.append,
    )


def test_http_backend_success():
    session = FakeSession([_ok("reply")])
    sleeps = []
    backend = _http_backend(session, sleeps)
    assert backend.complete([{"role": "user", "content": "q"}], {"temperature": 0.0}) == "reply"
    assert sleeps == []
    call = session.calls[0]
    assert call["url"] == "http://llm.test/v1/chat/completions"
    assert call["json"]["model"] == "m"
    assert call["headers"]["Authorization"] == "Bearer k"


def test_http_backend_retries_transient_then_succeeds():
    session = FakeSession([FakeResponse(500), FakeResponse(429), _ok()])
    sleeps = []
    backend = _http_backend(session, sleeps)
    assert backend.complete([{"role": "user", "content": "q"}], {}) == "hi"
    assert sleeps == [1.0, 2.0]  # exponential backoff, base 1s, factor 2


def test_http_backend_gives_up_after_retries():
    session = FakeSession([FakeResponse(500)] * 4)
    sleeps = []
    backend = _http_backend(session, sleeps)
    with pytest.raises(BackendError, match="after retries"):
        backend.complete([{"role": "user", "content": "q"}], {})
    assert sleeps == [1.0, 2.0, 4.0]
    assert len(session.calls) == 4


def test_http_backend_client_error_is_fatal():
    session = FakeSession([FakeResponse(400)])
    sleeps = []
    backend = _http_backend(session, sleeps)
    with pytest.raises(BackendError, match="400"):
        backend.complete([{"role": "user", "content": "q"}], {})
    assert sleeps == [] and len(session.calls) == 1


def test_http_backend_retries_transport_errors():
    session = FakeSession([ConnectionError("refused"), _ok()])
    sleeps = []
    backend = _http_backend(session, sleeps)
    assert backend.complete([{"role": "user", "content": "q"}], {}) == "hi"
    assert sleeps == [1.0]


def test_http_backend_requires_configuration(monkeypatch):
    for var in ("GUIDEX_LLM_BASE_URL", "GUIDEX_LLM_API_KEY", "GUIDEX_LLM_MODEL"):
        monkeypatch.delenv(var, raising=False)
    with pytest.raises(BackendError):
        HttpChatBackend(session=object(), sleep=lambda s: None)
