"""Command line surface: subcommands, exit codes, output shapes."""

import io
import json

import pytest

from guidex.cli import BACKEND, OK, USAGE, VALIDATION, main
from guidex.factual import decode_factual_record
from guidex.counterfactual import decode_counterfactual_record
from guidex.treeio import serialize_tree


@pytest.fixture
def tree_file(statin_tree, tmp_path):
    path = tmp_path / "statin.json"
    path.write_text(serialize_tree(statin_tree), encoding="utf-8")
    return path


def _lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


# ---------------------------------------------------------------- exit codes


def test_no_command_is_usage_error(capsys):
    assert main([]) == USAGE
    capsys.readouterr()


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == USAGE
    capsys.readouterr()


def test_missing_tree_file_is_validation_error(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "absent.json")]) == VALIDATION
    assert "error:" in capsys.readouterr().err


def test_malformed_tree_file_is_validation_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    assert main(["validate", str(bad)]) == VALIDATION
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------- validate


def test_validate_clean_tree(tree_file, capsys):
    assert main(["validate", str(tree_file)]) == OK
    out = capsys.readouterr().out
    assert "ok: 0 errors" in out


def test_validate_defective_tree(statin_tree, tmp_path, capsys):
    import dataclasses

    from guidex.model import BOOLEAN, VariableSpec

    extra = VariableSpec(name="smoker", kind=BOOLEAN)
    broken = dataclasses.replace(statin_tree, variables=statin_tree.variables + (extra,))
    path = tmp_path / "broken.json"
    path.write_text(serialize_tree(broken), encoding="utf-8")
    assert main(["validate", str(path)]) == VALIDATION
    out = capsys.readouterr().out
    assert "unused_variable" in out
    assert "invalid:" in out


# ---------------------------------------------------------------- paths/exec


def test_paths_lists_every_leaf(tree_file, capsys):
    assert main(["paths", str(tree_file)]) == OK
    objs = _lines(capsys.readouterr().out)
    assert [o["path_id"] for o in objs] == [0, 1, 2, 3, 4]
    assert objs[0]["label"] == "high-intensity statin"
    assert all(o["satisfiable"] for o in objs)
    assert objs[0]["constraints"]["ldl"] == "[190.0, 400.0]"


def test_paths_to_file(tree_file, tmp_path):
    out = tmp_path / "paths.jsonl"
    assert main(["paths", str(tree_file), "--out", str(out)]) == OK
    assert len(_lines(out.read_text(encoding="utf-8"))) == 5


def test_exec_full_assignment(tree_file, capsys):
    code = main(
        ["exec", str(tree_file), "--assign", "age=70",
         "--assign", "ldl=200", "--assign", "diabetes=false"]
    )
    assert code == OK
    obj = json.loads(capsys.readouterr().out)
    assert obj["label"] == "high-intensity statin"
    assert [s["taken"] for s in obj["path"]] == [True, True]


def test_exec_incomplete_assignment_fails(tree_file, capsys):
    assert main(["exec", str(tree_file), "--assign", "age=70"]) == VALIDATION
    assert "error:" in capsys.readouterr().err


def test_exec_partial_residual(tree_file, capsys):
    code = main(
        ["exec", str(tree_file), "--partial", "--assign", "age=70", "--assign", "ldl=130"]
    )
    assert code == OK
    obj = json.loads(capsys.readouterr().out)
    assert obj == {"blocking": ["diabetes"], "decided": False, "reachable": [1, 2]}


def test_exec_partial_decided(tree_file, capsys):
    code = main(
        ["exec", str(tree_file), "--partial", "--assign", "age=70", "--assign", "ldl=200"]
    )
    assert code == OK
    obj = json.loads(capsys.readouterr().out)
    assert obj["decided"] is True and obj["label"] == "high-intensity statin"


@pytest.mark.parametrize(
    "pair",
    ["diabetes=7", "age=old", "noequals", "ghost=1"],
)
def test_exec_bad_assignment_values(tree_file, capsys, pair):
    assert main(["exec", str(tree_file), "--assign", pair]) == VALIDATION
    assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------- sampling


def test_sample_factual_roundtrips(tree_file, tmp_path):
    out = tmp_path / "factual.jsonl"
    code = main(
        ["sample-factual", str(tree_file), "--per-path", "2", "--seed", "3", "--out", str(out)]
    )
    assert code == OK
    records = _lines(out.read_text(encoding="utf-8"))
    assert records
    for record in records:
        inst = decode_factual_record(record)
        assert inst.tree_id == "t-statin"
        assert inst.question_text is None


def test_sample_factual_questions_flag(tree_file, capsys):
    assert main(["sample-factual", str(tree_file), "--questions"]) == OK
    records = _lines(capsys.readouterr().out)
    assert all(r["question_text"] for r in records)


def test_sample_cf_roundtrips(tree_file, tmp_path):
    factual = tmp_path / "factual.jsonl"
    assert main(["sample-factual", str(tree_file), "--out", str(factual)]) == OK
    out = tmp_path / "cf.jsonl"
    code = main(
        ["sample-cf", str(tree_file), "--factual", str(factual), "--out", str(out)]
    )
    assert code == OK
    records = _lines(out.read_text(encoding="utf-8"))
    assert records
    for record in records:
        inst = decode_counterfactual_record(record)
        assert inst.y_obs != inst.y_cf


def test_sample_cf_redacts_gold(tree_file, tmp_path, capsys):
    factual = tmp_path / "factual.jsonl"
    assert main(["sample-factual", str(tree_file), "--out", str(factual)]) == OK
    code = main(
        ["sample-cf", str(tree_file), "--factual", str(factual), "--redact-gold"]
    )
    assert code == OK
    for record in _lines(capsys.readouterr().out):
        assert "hidden_values" not in record
        assert "abduction_class" not in record


def test_sample_cf_empty_pool_fails(tree_file, tmp_path, capsys):
    factual = tmp_path / "factual.jsonl"
    factual.write_text("", encoding="utf-8")
    code = main(["sample-cf", str(tree_file), "--factual", str(factual)])
    assert code == VALIDATION
    assert "no factual instances" in capsys.readouterr().err


# ---------------------------------------------------------------- verify/serve


def test_verify_scores_response_file(golden_out, reward_store, tmp_path, capsys):
    iid = min(i for i in reward_store.instance_ids() if reward_store.get(i).kind == "factual")
    label = reward_store.get(iid).instance.label
    responses = tmp_path / "responses.jsonl"
    responses.write_text(
        json.dumps({"instance_id": iid,
                    "response": f"<think>t</think><answer>{label}</answer>"}) + "\n"
        + json.dumps({"instance_id": "ghost",
                      "response": "<think>t</think><answer>x</answer>"}) + "\n",
        encoding="utf-8",
    )
    code = main(
        ["verify",
         "--trees", str(golden_out / "trees"),
         "--factual", str(golden_out / "factual.jsonl"),
         "--cf", str(golden_out / "counterfactual.jsonl"),
         "--responses", str(responses)]
    )
    assert code == OK
    replies = _lines(capsys.readouterr().out)
    assert replies[0]["reward"] == 1 and replies[0]["error"] is None
    assert replies[1]["error"] == "unknown_instance"


def test_serve_stdio_round_trip(golden_out, reward_store, monkeypatch, capsys):
    iid = min(i for i in reward_store.instance_ids() if reward_store.get(i).kind == "factual")
    label = reward_store.get(iid).instance.label
    request = json.dumps(
        {"instance_id": iid, "response": f"<think>t</think><answer>{label}</answer>"}
    )
    monkeypatch.setattr("sys.stdin", io.StringIO(request + "\n"))
    code = main(
        ["serve", "--stdio",
         "--trees", str(golden_out / "trees"),
         "--factual", str(golden_out / "factual.jsonl"),
         "--cf", str(golden_out / "counterfactual.jsonl")]
    )
    assert code == OK
    reply, = _lines(capsys.readouterr().out)
    assert reply["instance_id"] == iid and reply["reward"] == 1


# ---------------------------------------------------------------- corpus/extract/run


def test_curate_writes_chunks(fixtures_dir, tmp_path, capsys):
    out = tmp_path / "curated"
    code = main(
        ["curate", str(fixtures_dir / "corpus"),
         "--soft-limit", "200", "--max-chunks", "4", "--out", str(out)]
    )
    assert code == OK
    assert "kept 4/5 guidelines" in capsys.readouterr().out
    assert len(_lines((out / "metadata.jsonl").read_text(encoding="utf-8"))) == 4
    chunks = _lines((out / "chunks.jsonl").read_text(encoding="utf-8"))
    assert len(chunks) == 5
    assert all({"chunk_id", "guideline_id", "word_count", "overflow", "text"} <= set(c)
               for c in chunks)


def test_curate_stdout_summary(fixtures_dir, capsys):
    code = main(["curate", str(fixtures_dir / "corpus"), "--soft-limit", "200"])
    assert code == OK
    objs = _lines(capsys.readouterr().out)
    assert len(objs) == 5
    assert all("chunk_id" in o for o in objs)


def test_extract_from_fixtures(fixtures_dir, capsys):
    code = main(
        ["extract", "--corpus", str(fixtures_dir / "corpus"),
         "--fixtures", str(fixtures_dir / "llm"),
         "--soft-limit", "200", "--max-chunks", "4"]
    )
    assert code == OK
    objs = _lines(capsys.readouterr().out)
    # 8 raw candidates in the fixtures, 6 survive the keep rules
    assert len(objs) == 6
    assert all(o["action"] for o in objs)


def test_extract_without_backend_config_fails(fixtures_dir, monkeypatch, capsys):
    for var in ("GUIDEX_LLM_BASE_URL", "GUIDEX_LLM_API_KEY", "GUIDEX_LLM_MODEL"):
        monkeypatch.delenv(var, raising=False)
    code = main(["extract", "--corpus", str(fixtures_dir / "corpus")])
    assert code == BACKEND
    assert "backend error:" in capsys.readouterr().err


def test_run_command_end_to_end(fixtures_dir, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(
        ["run", "--corpus", str(fixtures_dir / "corpus"),
         "--out", str(out),
         "--fixtures", str(fixtures_dir / "llm"),
         "--soft-limit", "200", "--max-chunks", "4", "--seed", "7"]
    )
    assert code == OK
    printed = capsys.readouterr().out
    assert "validated_trees: 5" in printed
    assert "manifest.json" in printed
    assert (out / "manifest.json").exists()
