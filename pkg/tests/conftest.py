import datetime as dt
from pathlib import Path

import pytest

from guidex.model import (
    Branch,
    DecisionTree,
    Leaf,
    Predicate,
    Source,
    TreeMeta,
    VariableSpec,
)

FIXTURES_DIR = Path(__file__).resolve().parent.parent / "fixtures"

# One pass/fail line per acceptance criterion, printed by the terminal
# summary hook below regardless of output capture.
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_acceptance(criterion: int, title: str, ok: bool, detail: str) -> None:
    ACCEPTANCE_RESULTS[criterion] = (ok, f"{title}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"acceptance criterion {criterion} ({title}): {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_line("")
    terminalreporter.write_line("acceptance criteria:")
    for criterion in sorted(ACCEPTANCE_RESULTS):
        ok, line = ACCEPTANCE_RESULTS[criterion]
        terminalreporter.write_line(f"  {criterion}. {line}")


def make_statin_tree() -> DecisionTree:
    """Three variables, five paths, a dedicated no-action leaf; the worked
    example most tests lean on."""
    return DecisionTree(
        id="t-statin",
        source=Source(guideline_id="g-statin", chunk_id="g-statin#0"),
        metadata=TreeMeta(
            disease_or_drug="hyperlipidemia",
            age_group="adult",
            race="all",
            gender="all",
            publication_date=dt.date(2019, 3, 1),
        ),
        variables=(
            VariableSpec("age", "numeric", unit="years", min=18.0, max=100.0, grid=(40.0, 55.0, 70.0)),
            VariableSpec("diabetes", "boolean"),
            VariableSpec("ldl", "numeric", unit="mg/dL", min=0.0, max=400.0, grid=(80.0, 130.0, 200.0)),
        ),
        outputs=("high-intensity statin", "moderate-intensity statin", "no-action"),
        no_action_index=2,
        root=Branch(
            Predicate("age", "ge", 50.0),
            then=Branch(
                Predicate("ldl", "ge", 190.0),
                then=Leaf(0),
                orelse=Branch(Predicate("diabetes", "is", True), then=Leaf(1), orelse=Leaf(2)),
            ),
            orelse=Branch(Predicate("diabetes", "is", True), then=Leaf(1), orelse=Leaf(2)),
        ),
    )


@pytest.fixture
def statin_tree() -> DecisionTree:
    return make_statin_tree()


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES_DIR


def golden_pipeline_config(out_dir, **overrides):
    """The configuration the checked-in golden manifest was built with."""
    from guidex.pipeline import PipelineConfig

    kwargs = dict(
        corpus_dir=str(FIXTURES_DIR / "corpus"),
        out_dir=str(out_dir),
        seed=7,
        fixture_dir=str(FIXTURES_DIR / "llm"),
        soft_limit=200,
        max_chunks=4,
        per_path=2,
        no_action_cap=0.5,
        hidden_count=1,
        identifiable_only=True,
        per_tree=16,
        redact_gold=False,
        questions=False,
    )
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)


@pytest.fixture(scope="session")
def golden_out(tmp_path_factory) -> Path:
    """One fixture-corpus pipeline run shared by service and report tests."""
    from guidex.pipeline import run_pipeline

    out = tmp_path_factory.mktemp("golden-run") / "out"
    run_pipeline(golden_pipeline_config(out))
    return out


@pytest.fixture(scope="session")
def reward_store(golden_out):
    from guidex.store import InstanceStore

    return InstanceStore.load(
        golden_out / "trees",
        golden_out / "factual.jsonl",
        golden_out / "counterfactual.jsonl",
    )
