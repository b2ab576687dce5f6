import pytest

from guidex.counterfactual import CfConfig, generate_counterfactual_set
from guidex.executor import abduce
from guidex.factual import FactualConfig, generate_factual_set
from guidex.model import AbductionClass
from guidex.counterfactual import CounterfactualInstance, Intervention
from guidex.verifier import (
    BAD_HIDDEN_SYNTAX,
    BAD_ORDER,
    COUNTERFACTUAL,
    EMPTY_ANSWER,
    EQUIVALENCE,
    FACTUAL,
    MISSING_BLOCK,
    STRICT,
    counterfactual_reward,
    factual_reward,
    normalize_label,
    parse_response,
)


def test_parse_factual_ok():
    p = parse_response("<think>t</think><answer>no-action</answer>", FACTUAL)
    assert p.format_ok
    assert p.think_text == "t"
    assert p.answer_text == "no-action"
    assert p.hidden_claims is None


def test_parse_counterfactual_ok():
    p = parse_response(
        "<think>t</think><hidden>diabetes=true</hidden><answer>high-intensity statin</answer>",
        COUNTERFACTUAL,
    )
    assert p.format_ok
    assert p.hidden_claims == {"diabetes": "true"}


def test_parse_multiple_hidden_claims():
    p = parse_response(
        "<think>t</think><hidden>a=1; b=true ; c=x</hidden><answer>y</answer>",
        COUNTERFACTUAL,
    )
    assert p.hidden_claims == {"a": "1", "b": "true", "c": "x"}


def test_parse_surrounding_whitespace_ok():
    p = parse_response("  \n<think>t</think><answer>x</answer>\n ", FACTUAL)
    assert p.format_ok


@pytest.mark.parametrize(
    "text,kind,code",
    [
        ("<answer>x</answer>", FACTUAL, MISSING_BLOCK),
        ("<think>t</think>", FACTUAL, MISSING_BLOCK),
        ("<think>t</think><answer>x", FACTUAL, MISSING_BLOCK),
        ("<answer>x</answer><think>t</think>", FACTUAL, BAD_ORDER),
        ("<think>t</think>noise<answer>x</answer>", FACTUAL, BAD_ORDER),
        ("<think>t</think><answer>x</answer>junk", FACTUAL, BAD_ORDER),
        ("<think>t</think><answer>  </answer>", FACTUAL, EMPTY_ANSWER),
        ("<think>t</think><hidden></hidden><answer>x</answer>", COUNTERFACTUAL, BAD_HIDDEN_SYNTAX),
        ("<think>t</think><hidden>a=</hidden><answer>x</answer>", COUNTERFACTUAL, BAD_HIDDEN_SYNTAX),
        ("<think>t</think><hidden>=5</hidden><answer>x</answer>", COUNTERFACTUAL, BAD_HIDDEN_SYNTAX),
        ("<think>t</think><hidden>a=1; a=2</hidden><answer>x</answer>", COUNTERFACTUAL, BAD_HIDDEN_SYNTAX),
        ("<think>t</think><hidden>Bad=1</hidden><answer>x</answer>", COUNTERFACTUAL, BAD_HIDDEN_SYNTAX),
        ("<think>t</think><answer>x</answer>", COUNTERFACTUAL, MISSING_BLOCK),
    ],
)
def test_parse_failures(text, kind, code):
    p = parse_response(text, kind)
    assert not p.format_ok
    assert p.format_error == code


def test_parse_rejects_unknown_kind():
    with pytest.raises(ValueError):
        parse_response("<think>t</think><answer>x</answer>", "oracle")


def test_normalize_label():
    assert normalize_label("  High-Intensity   Statin ") == "high-intensity statin"
    assert normalize_label("no-action") == "no-action"
    assert normalize_label("") == ""


@pytest.fixture
def factual_instance(statin_tree):
    pool = generate_factual_set(statin_tree, FactualConfig(seed=3, per_path=1))
    return next(i for i in pool if i.label == "high-intensity statin")


def test_factual_reward_cases(factual_instance):
    right = parse_response("<think>t</think><answer>High-Intensity   Statin</answer>", FACTUAL)
    rb = factual_reward(right, factual_instance)
    assert (rb.total, rb.format, rb.answer) == (1, 0, 1)

    wrong = parse_response("<think>t</think><answer>surgery</answer>", FACTUAL)
    rb = factual_reward(wrong, factual_instance)
    assert (rb.total, rb.format, rb.answer) == (0, 0, 0)

    invalid = parse_response("<answer>high-intensity statin</answer>", FACTUAL)
    rb = factual_reward(invalid, factual_instance)
    assert (rb.total, rb.format) == (-1, -1)
    assert rb.answer is None and rb.format_error == MISSING_BLOCK


@pytest.fixture
def cf_diabetes(statin_tree):
    """Instance with gold hidden {diabetes: true}, y_obs moderate, y_cf high."""
    cls = abduce(
        statin_tree, {"age": 70.0, "ldl": 130.0}, {"diabetes"}, "moderate-intensity statin"
    )
    assert cls == AbductionClass([{"diabetes": True}])
    return CounterfactualInstance(
        instance_id="t-statin:cf:a:0",
        tree_id="t-statin",
        observed={"age": 70.0},
        hidden_names=("diabetes",),
        hidden_values={"diabetes": True},
        intervention=Intervention(var="ldl", original=130.0, new=200.0),
        y_obs="moderate-intensity statin",
        y_cf="high-intensity statin",
        abduction_class=cls,
    )


def _cf(text):
    return parse_response(text, COUNTERFACTUAL)


def test_counterfactual_reward_all_factors(statin_tree, cf_diabetes):
    good = _cf("<think>t</think><hidden>diabetes=true</hidden><answer>high-intensity statin</answer>")
    rb = counterfactual_reward(good, cf_diabetes, statin_tree, STRICT)
    assert (rb.total, rb.format, rb.answer, rb.hidden_match, rb.consistency) == (1, 0, 1, True, True)


def test_counterfactual_reward_wrong_hidden(statin_tree, cf_diabetes):
    # diabetes=false fails the match and replays to no-action, not y_obs
    bad = _cf("<think>t</think><hidden>diabetes=false</hidden><answer>high-intensity statin</answer>")
    rb = counterfactual_reward(bad, cf_diabetes, statin_tree, STRICT)
    assert rb.total == 0
    assert rb.hidden_match is False and rb.consistency is False and rb.answer == 1


def test_counterfactual_reward_wrong_answer(statin_tree, cf_diabetes):
    bad = _cf("<think>t</think><hidden>diabetes=true</hidden><answer>no-action</answer>")
    rb = counterfactual_reward(bad, cf_diabetes, statin_tree, STRICT)
    assert rb.total == 0
    assert rb.hidden_match is True and rb.consistency is True and rb.answer == 0


def test_counterfactual_reward_format_short_circuits(statin_tree, cf_diabetes):
    invalid = _cf("<think>t</think><answer>high-intensity statin</answer>")
    rb = counterfactual_reward(invalid, cf_diabetes, statin_tree, STRICT)
    assert (rb.total, rb.format) == (-1, -1)
    assert rb.hidden_match is None and rb.consistency is None


def test_counterfactual_undeclared_hidden_not_format_error(statin_tree, cf_diabetes):
    odd = _cf("<think>t</think><hidden>mystery=4</hidden><answer>high-intensity statin</answer>")
    rb = counterfactual_reward(odd, cf_diabetes, statin_tree, STRICT)
    assert rb.format == 0
    assert rb.total == 0
    assert rb.hidden_match is False and rb.consistency is False


def test_counterfactual_wrong_hidden_set_scores_zero(statin_tree, cf_diabetes):
    # claiming the intervention variable instead of the hidden one
    odd = _cf("<think>t</think><hidden>ldl=130</hidden><answer>high-intensity statin</answer>")
    rb = counterfactual_reward(odd, cf_diabetes, statin_tree, STRICT)
    assert rb.hidden_match is False and rb.consistency is False and rb.total == 0


def test_counterfactual_numeric_tolerance(statin_tree, cf_class_of_two):
    close = _cf("<think>t</think><hidden>ldl=80.00000000000001</hidden><answer>moderate-intensity statin</answer>")
    rb = counterfactual_reward(close, cf_class_of_two, statin_tree, STRICT)
    assert rb.hidden_match is True and rb.consistency is True and rb.total == 1
    off = _cf("<think>t</think><hidden>ldl=80.1</hidden><answer>moderate-intensity statin</answer>")
    rb = counterfactual_reward(off, cf_class_of_two, statin_tree, STRICT)
    assert rb.hidden_match is False
    assert rb.consistency is True  # 80.1 still replays to no-action


def test_counterfactual_unparseable_hidden_value(statin_tree, cf_diabetes):
    odd = _cf("<think>t</think><hidden>diabetes=maybe</hidden><answer>high-intensity statin</answer>")
    rb = counterfactual_reward(odd, cf_diabetes, statin_tree, STRICT)
    assert rb.hidden_match is False and rb.consistency is False


@pytest.fixture
def cf_class_of_two(statin_tree):
    """Hidden ldl with y_obs no-action: class {{ldl:80},{ldl:130}}, gold 80."""
    cls = abduce(statin_tree, {"age": 70.0, "diabetes": False}, {"ldl"}, "no-action")
    assert len(cls) == 2
    return CounterfactualInstance(
        instance_id="t-statin:cf:c:0",
        tree_id="t-statin",
        observed={"age": 70.0},
        hidden_names=("ldl",),
        hidden_values={"ldl": 80.0},
        intervention=Intervention(var="diabetes", original=False, new=True),
        y_obs="no-action",
        y_cf="moderate-intensity statin",
        abduction_class=cls,
    )


def test_mode_split_on_class_of_two(statin_tree, cf_class_of_two):
    non_gold = _cf("<think>t</think><hidden>ldl=130</hidden><answer>moderate-intensity statin</answer>")
    strict = counterfactual_reward(non_gold, cf_class_of_two, statin_tree, STRICT)
    loose = counterfactual_reward(non_gold, cf_class_of_two, statin_tree, EQUIVALENCE)
    assert strict.total == 0 and strict.hidden_match is False
    assert loose.total == 1 and loose.hidden_match is True
    assert strict.consistency is True and loose.consistency is True


def test_mode_dominance_pointwise(statin_tree, cf_class_of_two, cf_diabetes):
    texts = [
        "<think>t</think><hidden>ldl=130</hidden><answer>moderate-intensity statin</answer>",
        "<think>t</think><hidden>ldl=80</hidden><answer>moderate-intensity statin</answer>",
        "<think>t</think><hidden>ldl=200</hidden><answer>moderate-intensity statin</answer>",
        "<think>t</think><hidden>diabetes=true</hidden><answer>wrong</answer>",
        "<answer>x</answer>",
    ]
    for inst in (cf_class_of_two, cf_diabetes):
        for text in texts:
            p = _cf(text)
            s = counterfactual_reward(p, inst, statin_tree, STRICT).total
            e = counterfactual_reward(p, inst, statin_tree, EQUIVALENCE).total
            assert e >= s


def test_counterfactual_rejects_unknown_mode(statin_tree, cf_diabetes):
    with pytest.raises(ValueError):
        counterfactual_reward(_cf("<think>a</think><hidden>diabetes=true</hidden><answer>x</answer>"), cf_diabetes, statin_tree, "lenient")


def test_generated_instances_score_perfectly(statin_tree):
    # the gold transcript for any emitted instance earns total=1 in both modes
    pool = generate_factual_set(statin_tree, FactualConfig(seed=11, per_path=2))
    for inst in generate_counterfactual_set(statin_tree, pool, CfConfig(seed=11, per_tree=8)):
        claims = "; ".join(
            f"{k}={str(v).lower() if isinstance(v, bool) else v}"
            for k, v in inst.hidden_values.items()
        )
        text = f"<think>derive</think><hidden>{claims}</hidden><answer>{inst.y_cf}</answer>"
        for mode in (STRICT, EQUIVALENCE):
            rb = counterfactual_reward(_cf(text), inst, statin_tree, mode)
            assert rb.total == 1, (inst.instance_id, mode, rb)
