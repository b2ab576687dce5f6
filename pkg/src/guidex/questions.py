"""Deterministic question text for QA instances. No model involved, so
filled-in questions never perturb byte-level reproducibility."""

from __future__ import annotations

from .counterfactual import CounterfactualInstance
from .factual import FactualInstance
from .model import DecisionTree, Value


def _show(tree: DecisionTree, name: str, value: Value) -> str:
    spec = tree.variable(name)
    if isinstance(value, bool):
        return f"{name}: {'yes' if value else 'no'}"
    if spec.kind == "numeric":
        shown = int(value) if float(value) == int(value) else value
        return f"{name}: {shown} {spec.unit}" if spec.unit else f"{name}: {shown}"
    return f"{name}: {value}"


def render_factual_question(instance: FactualInstance, tree: DecisionTree) -> str:
    facts = "; ".join(_show(tree, k, v) for k, v in instance.assignment.items())
    options = ", ".join(tree.outputs)
    return (
        f"Patient presentation ({tree.metadata.disease_or_drug}): {facts}. "
        f"Which recommendation applies? Choose exactly one of: {options}."
    )


def render_counterfactual_question(instance: CounterfactualInstance, tree: DecisionTree) -> str:
    facts = "; ".join(_show(tree, k, v) for k, v in instance.observed.items())
    unknown = ", ".join(instance.hidden_names)
    iv = instance.intervention
    new = _show(tree, iv.var, iv.new)
    options = ", ".join(tree.outputs)
    return (
        f"Patient presentation ({tree.metadata.disease_or_drug}): {facts}. "
        f"The value of {unknown} was not recorded, but the guideline recommendation "
        f"was: {instance.y_obs}. Now suppose {new} instead. "
        f"First infer the unrecorded value from the observed recommendation, then "
        f"determine the recommendation under the change. "
        f"Choose exactly one of: {options}."
    )
