"""Training loop for the tabular sandbox, plus the faithfulness evaluation.

Each step samples a group per task from the current (old) policy, scores
it through the reward path, normalizes advantages within the group, and
ascends the closed-form surrogate gradient. The old policy is refreshed
every step (single inner epoch), and the reference policy for the KL term
is the initial one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..engine import RewardConfig, SurrogateConfig, combine, group_advantages, rubric_reward
from ..errors import (
    DivergenceDetected,
    InvariantViolation,
    JudgeUnavailable,
    UnparseableVerdict,
)
from ..judge.gateway import JudgeGateway
from ..records import Trajectory, _Record
from ..verifier import VerifierConfig, answer_reward
from .policy import TabularPolicy, objective_gradient, rollout_group
from .tasks import SyntheticTask, TrajectoryLabel


@dataclass(frozen=True)
class TraceStep(_Record):
    """One training step's telemetry.

    answer_reward, rubric_reward, and response_length are means over the
    step's sampled rollouts (pre-update behavior); faithful_mass is the
    post-update probability on faithful templates, so the last entry
    describes the final policy.
    """

    step: int
    answer_reward: float
    rubric_reward: float
    response_length: float
    faithful_mass: float


@dataclass(frozen=True)
class TrainingTrace:
    steps: tuple[TraceStep, ...]

    def __post_init__(self) -> None:
        for i, record in enumerate(self.steps):
            if record.step != i:
                raise InvariantViolation("TrainingTrace", f"step {record.step} at position {i}")

    def __len__(self) -> int:
        return len(self.steps)

    def series(self, name: str) -> list[float]:
        return [getattr(s, name) for s in self.steps]

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.steps:
                fh.write(record.to_json_line())
                fh.write("\n")

    @classmethod
    def read_jsonl(cls, path) -> "TrainingTrace":
        steps = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    steps.append(TraceStep.from_json_line(line))
        return cls(steps=tuple(steps))


def _verdicts_from_gateway(
    gateway: JudgeGateway, task: SyntheticTask, template_index: int
) -> tuple[bool, ...]:
    template = task.templates[template_index]
    trajectory = template.as_trajectory(task.task_id)
    return gateway.score_against_rubrics(trajectory, task.rubric_set()).verdicts


def train(
    tasks: Sequence[SyntheticTask],
    reward_cfg: RewardConfig,
    surrogate_cfg: SurrogateConfig,
    steps: int,
    learning_rate: float,
    seed: int,
    group_size: int = 8,
    temperature: float = 1.0,
    initial_policy: Optional[TabularPolicy] = None,
    gateway: Optional[JudgeGateway] = None,
    verifier_cfg: Optional[VerifierConfig] = None,
) -> tuple[TrainingTrace, TabularPolicy]:
    """Gradient-ascent on the clipped surrogate over synthetic tasks.

    Verdicts come from the judge gateway when one is supplied, otherwise
    from the templates' ground truth (identical for a truth-keyed mock).
    Rewards always flow through the real verifier and reward engine.
    """
    if steps < 1:
        raise InvariantViolation("TrainingTrace", "steps must be >= 1")
    if not tasks:
        raise InvariantViolation("TrainingTrace", "needs >= 1 task")
    policy = (
        initial_policy.copy()
        if initial_policy is not None
        else TabularPolicy.from_tasks(tasks, temperature=temperature)
    )
    reference = policy.copy()
    rng = np.random.default_rng(seed)
    vcfg = verifier_cfg or VerifierConfig()

    # Rewards and verdicts are pure per template; compute each once.
    answer_cache: dict[tuple[str, int], float] = {}
    verdict_cache: dict[tuple[str, int], tuple[bool, ...]] = {}

    def template_rewards(task: SyntheticTask, index: int) -> tuple[float, float]:
        key = (task.task_id, index)
        if key not in answer_cache:
            template = task.templates[index]
            answer_cache[key] = answer_reward(
                template.as_trajectory(task.task_id), task.gold_answer, task.answer_kind, vcfg
            )
            verdict_cache[key] = (
                _verdicts_from_gateway(gateway, task, index)
                if gateway is not None
                else template.verdicts
            )
        verdicts = verdict_cache[key]
        return answer_cache[key], rubric_reward(verdicts)

    faithful = {t.task_id: t.indices_with_label(TrajectoryLabel.FAITHFUL_CORRECT) for t in tasks}
    trace: list[TraceStep] = []
    for step in range(steps):
        old = policy.copy()
        answer_sum = rubric_sum = length_sum = 0.0
        n_samples = 0
        for task in tasks:
            sampled, _ = rollout_group(old, task, group_size, rng)
            combined: list[float] = []
            for index in sampled:
                ans, rub = template_rewards(task, int(index))
                combined.append(combine(ans, rub, reward_cfg))
                answer_sum += ans
                rubric_sum += rub
                length_sum += task.templates[int(index)].token_count
                n_samples += 1
            group = group_advantages(combined, reward_cfg, problem_id=task.task_id)
            grad = objective_gradient(
                logits=policy.logits_of(task.task_id),
                old_logits=old.logits_of(task.task_id),
                ref_logits=reference.logits_of(task.task_id),
                sampled=[int(i) for i in sampled],
                advantages=group.advantages,
                temperature=policy.temperature,
                cfg=surrogate_cfg,
            )
            policy.update(task.task_id, learning_rate * grad)
        if not policy.is_finite():
            raise DivergenceDetected(f"non-finite logits at step {step}")
        trace.append(
            TraceStep(
                step=step,
                answer_reward=answer_sum / n_samples,
                rubric_reward=rubric_sum / n_samples,
                response_length=length_sum / n_samples,
                faithful_mass=float(
                    np.mean([policy.mass_on(t.task_id, faithful[t.task_id]) for t in tasks])
                ),
            )
        )
    return TrainingTrace(steps=tuple(trace)), policy


def sample_trajectories(
    policy: TabularPolicy,
    task: SyntheticTask,
    n: int,
    rng: np.random.Generator,
) -> list[Trajectory]:
    """Draw a trajectory corpus from the policy for offline evaluation."""
    indices = policy.sample(task.task_id, n, rng)
    return [
        task.templates[int(i)].as_trajectory(
            task.task_id, trajectory_id=f"{task.task_id}:s{k}:{task.templates[int(i)].template_id}"
        )
        for k, i in enumerate(indices)
    ]


@dataclass(frozen=True)
class FaithfulnessReport:
    """Outcome of judging a corpus for reasoning/answer consistency."""

    inconsistency_rate: float
    n_evaluated: int
    n_flagged: int
    n_failures: int


def faithfulness_eval(
    trajectories: Sequence[Trajectory],
    gateway: JudgeGateway,
) -> FaithfulnessReport:
    """Fraction of trajectories the judge flags as inconsistent.

    Per-item judge failures are tallied, not fatal; the rate is over the
    successfully judged remainder. If every call fails there is nothing to
    report and the last failure propagates.
    """
    if not trajectories:
        raise InvariantViolation("FaithfulnessReport", "corpus must be non-empty")
    flagged = 0
    evaluated = 0
    failures = 0
    last_error: Optional[Exception] = None
    for trajectory in trajectories:
        try:
            consistent = gateway.check_faithfulness(trajectory)
        except (JudgeUnavailable, UnparseableVerdict) as exc:
            failures += 1
            last_error = exc
            continue
        evaluated += 1
        if not consistent:
            flagged += 1
    if evaluated == 0:
        assert last_error is not None
        raise last_error
    return FaithfulnessReport(
        inconsistency_rate=flagged / evaluated,
        n_evaluated=evaluated,
        n_flagged=flagged,
        n_failures=failures,
    )
