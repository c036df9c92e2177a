"""Scheduling engine and deterministic simulator for heterogeneous
multi-model workflow DAGs."""

from .config import AblationFlags, RunConfig, ScoreWeights, default_config
from .costs import CostBreakdown, CostModel
from .executor import RunRecord, ScheduledTask, partition_shards, run
from .model import (
    DeviceSpec,
    DeviceTopology,
    ModelProfile,
    Query,
    Stage,
    StageRole,
    WorkflowDag,
    WorkflowInstance,
    annotate_topology,
    ready_set,
    validate_dag,
)
from .planner import FrontierProblem, FrontierSolution, build_problem, solve_frontier
from .policies import POLICY_NAMES, make_policy
from .state import ExecutionState

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "CostBreakdown",
    "CostModel",
    "DeviceSpec",
    "DeviceTopology",
    "ExecutionState",
    "FrontierProblem",
    "FrontierSolution",
    "ModelProfile",
    "POLICY_NAMES",
    "Query",
    "RunConfig",
    "RunRecord",
    "ScheduledTask",
    "ScoreWeights",
    "Stage",
    "StageRole",
    "WorkflowDag",
    "WorkflowInstance",
    "annotate_topology",
    "build_problem",
    "default_config",
    "make_policy",
    "partition_shards",
    "ready_set",
    "run",
    "solve_frontier",
    "validate_dag",
]
