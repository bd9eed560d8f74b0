"""Desk-scale training simulator over enumerable synthetic tasks."""

from .policy import TabularPolicy, objective_gradient, objective_value, rollout_group, softmax
from .tasks import (
    DEFAULT_INITIAL_LOGITS,
    SyntheticTask,
    TrajectoryLabel,
    TrajectoryTemplate,
    default_initial_logits,
    default_task,
    mock_judge_spec_for,
)
from .train import (
    FaithfulnessReport,
    TraceStep,
    TrainingTrace,
    faithfulness_eval,
    sample_trajectories,
    train,
)

__all__ = [
    "DEFAULT_INITIAL_LOGITS",
    "FaithfulnessReport",
    "SyntheticTask",
    "TabularPolicy",
    "TraceStep",
    "TrainingTrace",
    "TrajectoryLabel",
    "TrajectoryTemplate",
    "default_initial_logits",
    "default_task",
    "faithfulness_eval",
    "mock_judge_spec_for",
    "objective_gradient",
    "objective_value",
    "rollout_group",
    "sample_trajectories",
    "softmax",
    "train",
]
