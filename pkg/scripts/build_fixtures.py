"""Regenerate the LLM fixture files and the golden manifest.

Runs the real pipeline against an authoring backend: every request is
answered from the authored content below and the reply is also written to
fixtures/llm/<request-digest>.txt. A second run replaying only those files
must then produce byte-identical outputs; its manifest becomes the golden.

Usage: python scripts/build_fixtures.py
"""

from __future__ import annotations

import datetime as dt
import filecmp
import json
import re
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from guidex import canon
from guidex.extraction import request_digest
from guidex.model import Branch, DecisionTree, Leaf, Predicate, Source, TreeMeta, VariableSpec
from guidex.pipeline import PipelineConfig, run_pipeline
from guidex.treeio import serialize_tree

CORPUS = REPO / "fixtures" / "corpus"
LLM = REPO / "fixtures" / "llm"
GOLDEN = REPO / "fixtures" / "golden"

GOLDEN_CONFIG = dict(seed=7, soft_limit=200, max_chunks=4, per_path=2,
                     no_action_cap=0.5, hidden_count=1, identifiable_only=True,
                     per_tree=16, redact_gold=False, questions=False)


# ---------------------------------------------------------------------------
# authored extraction replies, one JSON array per chunk

CAND_STATIN_MAIN = {
    "population": "adults aged 50 years or older, and younger adults with diabetes",
    "condition": "LDL cholesterol 190 mg/dL or higher, or diabetes mellitus with LDL below 190",
    "action": "initiate high-intensity statin therapy when LDL is 190 or higher, otherwise moderate-intensity statin therapy when diabetes is present",
    "exceptions": None,
    "evidence_grade": "A",
}
CAND_STATIN_SWITCH = {
    "population": "adults already on statin therapy",
    "condition": "LDL cholesterol remains 100 mg/dL or higher on repeat testing",
    "action": "switch statin-intolerant patients to ezetimibe; tolerant patients continue their current statin",
    "exceptions": "tolerant patients with LDL below 100 mg/dL need no change",
    "evidence_grade": None,
}
CAND_HTN = {
    "population": "adults without known cardiovascular disease",
    "condition": "systolic pressure 140 mm Hg or higher, diastolic 90 or higher, or systolic 130 to 139",
    "action": "start antihypertensive drug therapy at or above the drug thresholds; recommend structured lifestyle counseling in the 130 to 139 systolic band",
    "exceptions": None,
    "evidence_grade": "B",
}
CAND_FLU = {
    "population": "children aged 6 months and older",
    "condition": "annual influenza season",
    "action": "administer inactivated influenza vaccine; defer infants under 6 months; refer children with severe egg allergy to an allergy specialist",
    "exceptions": "infants younger than 6 months",
    "evidence_grade": None,
}
CAND_DM_MAIN = {
    "population": "asymptomatic adults",
    "condition": "age 45 or older, prior abnormal glucose result, or body mass index 25 or higher under age 45",
    "action": "order hemoglobin A1c screening",
    "exceptions": None,
    "evidence_grade": "B",
}
CAND_DM_SHARED = {
    "population": "adults with limited life expectancy or competing illness",
    "condition": "benefit of early detection is limited",
    "action": "",
    "exceptions": None,
    "evidence_grade": None,
}
CAND_DM_ASSAY = {
    "population": "adults with borderline assay results",
    "condition": "borderline hemoglobin A1c assay",
    "action": "interpret the assay per the laboratory appendix",
    "exceptions": None,
    "evidence_grade": None,
}

EXTRACT_REPLIES = {
    "g-statin-2019#0": [CAND_STATIN_MAIN, dict(CAND_STATIN_MAIN), CAND_STATIN_SWITCH],
    "g-htn-2020#0": [CAND_HTN],
    "g-flu-2022#0": [CAND_FLU],
    "g-dm-screen-2021#0": [CAND_DM_MAIN, CAND_DM_SHARED, CAND_DM_ASSAY],
    "g-dm-screen-2021#1": [],
}


# ---------------------------------------------------------------------------
# authored tree documents

META = {
    "g-statin-2019": TreeMeta("hyperlipidemia", "adult", "all", "all", dt.date(2019, 3, 1)),
    "g-htn-2020": TreeMeta("hypertension", "adult", "all", "all", dt.date(2020, 6, 15)),
    "g-flu-2022": TreeMeta("influenza vaccination", "pediatric", "all", "all", dt.date(2022, 9, 1)),
    "g-dm-screen-2021": TreeMeta("type 2 diabetes screening", "adult", "all", "all", dt.date(2021, 1, 10)),
}


def _src(gid: str, k: int = 0) -> Source:
    return Source(guideline_id=gid, chunk_id=f"{gid}#{k}")


def t1_statin() -> DecisionTree:
    return DecisionTree(
        id="g-statin-2019-c0-r0",
        source=_src("g-statin-2019"),
        metadata=META["g-statin-2019"],
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


def t2_statin_switch() -> DecisionTree:
    return DecisionTree(
        id="g-statin-2019-c0-r1",
        source=_src("g-statin-2019"),
        metadata=META["g-statin-2019"],
        variables=(
            VariableSpec("ldl", "numeric", unit="mg/dL", min=0.0, max=400.0, grid=(70.0, 100.0, 160.0)),
            VariableSpec("statin_tolerance", "categorical", values=("tolerant", "intolerant")),
        ),
        outputs=("continue current statin", "switch to ezetimibe", "no-action"),
        no_action_index=2,
        root=Branch(
            Predicate("ldl", "ge", 100.0),
            then=Branch(
                Predicate("statin_tolerance", "eq", "intolerant"),
                then=Leaf(1),
                orelse=Leaf(0),
            ),
            orelse=Leaf(2),
        ),
    )


def t3_htn_valid() -> DecisionTree:
    return DecisionTree(
        id="g-htn-2020-c0-r0",
        source=_src("g-htn-2020"),
        metadata=META["g-htn-2020"],
        variables=(
            VariableSpec("bp_dia", "numeric", unit="mmHg", min=40.0, max=150.0, grid=(80.0, 88.0, 95.0)),
            VariableSpec("bp_sys", "numeric", unit="mmHg", min=70.0, max=250.0, grid=(125.0, 135.0, 150.0)),
        ),
        outputs=("start antihypertensive drug therapy", "lifestyle counseling", "no-action"),
        no_action_index=2,
        root=Branch(
            Predicate("bp_sys", "ge", 140.0),
            then=Leaf(0),
            orelse=Branch(
                Predicate("bp_dia", "ge", 90.0),
                then=Leaf(0),
                orelse=Branch(Predicate("bp_sys", "ge", 130.0), then=Leaf(1), orelse=Leaf(2)),
            ),
        ),
    )


def t3_htn_dead_branch() -> DecisionTree:
    # first draft: the then-side re-tests bp_sys < 130 under bp_sys >= 140
    return DecisionTree(
        id="g-htn-2020-c0-r0",
        source=_src("g-htn-2020"),
        metadata=META["g-htn-2020"],
        variables=(
            VariableSpec("bp_dia", "numeric", unit="mmHg", min=40.0, max=150.0, grid=(80.0, 88.0, 95.0)),
            VariableSpec("bp_sys", "numeric", unit="mmHg", min=70.0, max=250.0, grid=(125.0, 135.0, 150.0)),
        ),
        outputs=("start antihypertensive drug therapy", "lifestyle counseling", "no-action"),
        no_action_index=2,
        root=Branch(
            Predicate("bp_sys", "ge", 140.0),
            then=Branch(Predicate("bp_sys", "lt", 130.0), then=Leaf(1), orelse=Leaf(0)),
            orelse=Branch(
                Predicate("bp_dia", "ge", 90.0),
                then=Leaf(0),
                orelse=Branch(Predicate("bp_sys", "ge", 130.0), then=Leaf(1), orelse=Leaf(2)),
            ),
        ),
    )


def t4_flu() -> DecisionTree:
    return DecisionTree(
        id="g-flu-2022-c0-r0",
        source=_src("g-flu-2022"),
        metadata=META["g-flu-2022"],
        variables=(
            VariableSpec("age_months", "numeric", unit="months", min=0.0, max=216.0, grid=(3.0, 9.0, 24.0)),
            VariableSpec("egg_allergy_severe", "boolean"),
        ),
        outputs=("administer inactivated influenza vaccine", "defer vaccination",
                 "refer to allergy specialist"),
        no_action_index=None,
        root=Branch(
            Predicate("age_months", "lt", 6.0),
            then=Leaf(1),
            orelse=Branch(Predicate("egg_allergy_severe", "is", True), then=Leaf(2), orelse=Leaf(0)),
        ),
    )


def t5_dm() -> DecisionTree:
    return DecisionTree(
        id="g-dm-screen-2021-c0-r0",
        source=_src("g-dm-screen-2021"),
        metadata=META["g-dm-screen-2021"],
        variables=(
            VariableSpec("age", "numeric", unit="years", min=18.0, max=100.0, grid=(35.0, 45.0, 60.0)),
            VariableSpec("bmi", "numeric", unit="kg/m2", min=15.0, max=60.0, grid=(22.0, 27.0, 32.0)),
            VariableSpec("prior_abnormal_glucose", "boolean"),
        ),
        outputs=("order hemoglobin A1c screening", "no-action"),
        no_action_index=1,
        root=Branch(
            Predicate("prior_abnormal_glucose", "is", True),
            then=Leaf(0),
            orelse=Branch(
                Predicate("age", "ge", 45.0),
                then=Leaf(0),
                orelse=Branch(Predicate("bmi", "ge", 25.0), then=Leaf(0), orelse=Leaf(1)),
            ),
        ),
    )


def dm_assay_unused_var() -> DecisionTree:
    # repair round still broken: declares age but never tests it
    return DecisionTree(
        id="g-dm-screen-2021-c0-r1",
        source=_src("g-dm-screen-2021"),
        metadata=META["g-dm-screen-2021"],
        variables=(
            VariableSpec("age", "numeric", unit="years", min=18.0, max=100.0, grid=(40.0, 60.0)),
            VariableSpec("assay_result", "categorical", values=("normal", "borderline", "abnormal")),
        ),
        outputs=("interpret per laboratory appendix", "no-action"),
        no_action_index=1,
        root=Branch(
            Predicate("assay_result", "eq", "borderline"), then=Leaf(0), orelse=Leaf(1)
        ),
    )


DM_ASSAY_PROSE = (
    "This recommendation points to the laboratory appendix instead of stating "
    "a testable condition-action rule, so no decision tree can be drafted from "
    "it as written."
)

DRAFT_REPLIES = {
    ("g-statin-2019-c0-r0", 1): serialize_tree(t1_statin()),
    ("g-statin-2019-c0-r1", 1): serialize_tree(t2_statin_switch()),
    ("g-htn-2020-c0-r0", 1): serialize_tree(t3_htn_dead_branch()),
    ("g-htn-2020-c0-r0", 2): serialize_tree(t3_htn_valid()),
    ("g-flu-2022-c0-r0", 1): serialize_tree(t4_flu()),
    ("g-dm-screen-2021-c0-r0", 1): serialize_tree(t5_dm()),
    ("g-dm-screen-2021-c0-r1", 1): DM_ASSAY_PROSE,
    ("g-dm-screen-2021-c0-r1", 2): serialize_tree(dm_assay_unused_var()),
}

_CHUNK_RE = re.compile(r"^Chunk id: (\S+)$", re.MULTILINE)
_TREE_ID_RE = re.compile(r'use exactly "([^"]+)"')


class AuthoringBackend:
    """Answers pipeline requests from the authored tables and records every
    reply under fixtures/llm/<request-digest>.txt."""

    def __init__(self, fixture_dir: Path):
        self.fixture_dir = fixture_dir
        self.written: list[str] = []

    def complete(self, messages: list[dict], params: dict) -> str:
        text = self._answer(messages)
        digest = request_digest(messages, params)
        path = self.fixture_dir / f"{digest}.txt"
        path.write_text(text, encoding="utf-8")
        self.written.append(path.name)
        return text

    def _answer(self, messages: list[dict]) -> str:
        first = messages[0]["content"]
        round_no = 1 if len(messages) == 1 else 2
        chunk = _CHUNK_RE.search(first)
        if chunk and round_no == 1:
            return json.dumps(EXTRACT_REPLIES[chunk.group(1)], indent=1)
        tree_id = _TREE_ID_RE.search(first)
        if tree_id:
            return DRAFT_REPLIES[(tree_id.group(1), round_no)]
        raise AssertionError(f"unexpected request: {first[:100]!r}")


def run(corpus: Path, out: Path, fixture_dir: Path | None, backend=None) -> dict:
    cfg = PipelineConfig(
        corpus_dir=str(corpus),
        out_dir=str(out),
        fixture_dir=None if fixture_dir is None else str(fixture_dir),
        **GOLDEN_CONFIG,
    )
    return run_pipeline(cfg, backend=backend)


def same_tree(a: Path, b: Path) -> bool:
    a_files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    b_files = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    if a_files != b_files:
        return False
    return all(
        rel.name == "manifest.json" or filecmp.cmp(a / rel, b / rel, shallow=False)
        for rel in a_files
    )


def main() -> int:
    if LLM.exists():
        shutil.rmtree(LLM)
    LLM.mkdir(parents=True)
    GOLDEN.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as td:
        authored_out = Path(td) / "authored"
        replay_out = Path(td) / "replay"
        backend = AuthoringBackend(LLM)
        run(CORPUS, authored_out, None, backend=backend)
        print(f"authored {len(backend.written)} fixture files")

        manifest = run(CORPUS, replay_out, LLM)
        if not same_tree(authored_out, replay_out):
            print("ERROR: replay run differs from authoring run", file=sys.stderr)
            return 1

        (GOLDEN / "manifest.json").write_text(canon.dumps(manifest), encoding="utf-8")
        print("golden manifest counts:")
        for key, value in manifest["counts"].items():
            print(f"  {key}: {value}")
        for rej in manifest["draft_rejections"]:
            print(f"  rejected {rej['tree_id']}: {rej['reason'][:70]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
