"""Executable decision trees for clinical guideline QA and reward checking.

The library turns guideline text into typed decision trees, samples factual
and counterfactual question instances from them, and scores free-form model
responses against the tree semantics."""

from .model import (
    Assignment,
    Branch,
    DecisionTree,
    Leaf,
    MergeConflictError,
    ModelError,
    Predicate,
    Source,
    TreeMeta,
    VariableSpec,
)
from .constraints import ConstraintSet
from .treeio import (
    Finding,
    PathSpec,
    TreeFormatError,
    TreeSchemaError,
    TreeSyntaxError,
    ValidationReport,
    enumerate_paths,
    parse_tree,
    path_constraints,
    serialize_tree,
    validate_tree,
)
from .executor import Decided, Undecided, abduce, check_consistency, execute, partial_execute
from .factual import FactualConfig, FactualInstance, generate_factual_set
from .counterfactual import (
    CfConfig,
    CounterfactualInstance,
    generate_counterfactual_set,
    identifiability,
    partition_variables,
    propose_intervention,
    validate_counterfactual_instance,
)
from .verifier import (
    EQUIVALENCE,
    STRICT,
    RewardBreakdown,
    counterfactual_reward,
    factual_reward,
    parse_response,
    score_batch,
    score_response,
)
from .corpus import GuidelineMeta, Chunk, chunk_document, dedup_guidelines, load_corpus
from .pipeline import PipelineConfig, PipelineError, run_pipeline
from .store import InstanceStore

__version__ = "0.1.0"

__all__ = [
    "Assignment",
    "Branch",
    "CfConfig",
    "Chunk",
    "ConstraintSet",
    "CounterfactualInstance",
    "Decided",
    "DecisionTree",
    "EQUIVALENCE",
    "FactualConfig",
    "FactualInstance",
    "Finding",
    "GuidelineMeta",
    "InstanceStore",
    "Leaf",
    "MergeConflictError",
    "ModelError",
    "PathSpec",
    "PipelineConfig",
    "PipelineError",
    "Predicate",
    "RewardBreakdown",
    "STRICT",
    "Source",
    "TreeFormatError",
    "TreeMeta",
    "TreeSchemaError",
    "TreeSyntaxError",
    "Undecided",
    "ValidationReport",
    "VariableSpec",
    "abduce",
    "check_consistency",
    "chunk_document",
    "counterfactual_reward",
    "dedup_guidelines",
    "enumerate_paths",
    "execute",
    "factual_reward",
    "generate_counterfactual_set",
    "identifiability",
    "generate_factual_set",
    "load_corpus",
    "parse_response",
    "parse_tree",
    "partial_execute",
    "partition_variables",
    "path_constraints",
    "propose_intervention",
    "run_pipeline",
    "score_batch",
    "score_response",
    "serialize_tree",
    "validate_counterfactual_instance",
    "validate_tree",
]
