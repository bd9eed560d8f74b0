"""Synthetic tasks with an enumerable trajectory space.

Each task enumerates template trajectories labeled faithful_correct,
shortcut_correct, or incorrect, with ground-truth per-criterion verdicts.
Because the space is tiny (<= 64 templates), expected rewards and optima
are computable by brute force, which is the oracle for every derived
quantity in the sandbox tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ..errors import InvariantViolation
from ..judge.mock import MockJudgeSpec
from ..records import AnswerKind, RubricCriterion, RubricSet, Trajectory
from ..verifier import VerifierConfig, answer_reward

MAX_TEMPLATES = 64


class TrajectoryLabel(str, Enum):
    FAITHFUL_CORRECT = "faithful_correct"
    SHORTCUT_CORRECT = "shortcut_correct"
    INCORRECT = "incorrect"


@dataclass(frozen=True)
class TrajectoryTemplate:
    """One enumerable trajectory with its ground-truth criterion verdicts."""

    template_id: str
    label: TrajectoryLabel
    raw_text: str
    verdicts: tuple[bool, ...]

    @property
    def token_count(self) -> int:
        """Whitespace token count; the sandbox's notion of response length."""
        return len(self.raw_text.split())

    def as_trajectory(self, task_id: str, trajectory_id: Optional[str] = None) -> Trajectory:
        return Trajectory.from_text(
            trajectory_id or f"{task_id}:{self.template_id}",
            task_id,
            self.raw_text,
        )


@dataclass(frozen=True)
class SyntheticTask:
    """A task whose whole trajectory space is written down.

    Labels are validated against the real verifier: both *_correct labels
    must actually verify against gold_answer, incorrect must not, faithful
    templates must pass every criterion, and shortcut templates must fail
    at least one. A shortcut is the premise of the whole exercise: same
    answer reward as a faithful solution, weaker reasoning.
    """

    task_id: str
    question_text: str
    gold_answer: str
    answer_kind: AnswerKind
    criteria: tuple[RubricCriterion, ...]
    templates: tuple[TrajectoryTemplate, ...]

    def __post_init__(self) -> None:
        if not (1 <= len(self.templates) <= MAX_TEMPLATES):
            raise InvariantViolation(
                "SyntheticTask", f"template count must be in [1, {MAX_TEMPLATES}]"
            )
        if not self.criteria:
            raise InvariantViolation("SyntheticTask", "criteria must be non-empty")
        for pos, criterion in enumerate(self.criteria, start=1):
            if criterion.index != pos:
                raise InvariantViolation("SyntheticTask", "criterion indices must be 1..m")
        labels = [t.label for t in self.templates]
        if TrajectoryLabel.FAITHFUL_CORRECT not in labels:
            raise InvariantViolation("SyntheticTask", "needs >= 1 faithful_correct template")
        if TrajectoryLabel.SHORTCUT_CORRECT not in labels:
            raise InvariantViolation("SyntheticTask", "needs >= 1 shortcut_correct template")
        seen_ids = set()
        cfg = VerifierConfig()
        for t in self.templates:
            if t.template_id in seen_ids:
                raise InvariantViolation("SyntheticTask", f"duplicate template {t.template_id!r}")
            seen_ids.add(t.template_id)
            if len(t.verdicts) != len(self.criteria):
                raise InvariantViolation(
                    "SyntheticTask",
                    f"template {t.template_id!r} has {len(t.verdicts)} verdicts "
                    f"for {len(self.criteria)} criteria",
                )
            reward = answer_reward(
                t.as_trajectory(self.task_id), self.gold_answer, self.answer_kind, cfg
            )
            if t.label is TrajectoryLabel.INCORRECT:
                if reward != 0.0:
                    raise InvariantViolation(
                        "SyntheticTask", f"incorrect template {t.template_id!r} verifies as correct"
                    )
            else:
                if reward != 1.0:
                    raise InvariantViolation(
                        "SyntheticTask", f"{t.label.value} template {t.template_id!r} fails verification"
                    )
            if t.label is TrajectoryLabel.FAITHFUL_CORRECT and not all(t.verdicts):
                raise InvariantViolation(
                    "SyntheticTask", f"faithful template {t.template_id!r} must pass all criteria"
                )
            if t.label is TrajectoryLabel.SHORTCUT_CORRECT and all(t.verdicts):
                raise InvariantViolation(
                    "SyntheticTask", f"shortcut template {t.template_id!r} must fail >= 1 criterion"
                )

    def rubric_set(self) -> RubricSet:
        """The task's criteria as a stored-rubric record (fixed timestamp:
        synthetic rubrics have no construction time)."""
        sources = tuple(
            t.template_id
            for t in self.templates
            if t.label is not TrajectoryLabel.INCORRECT
        )
        return RubricSet(
            problem_id=self.task_id,
            criteria=self.criteria,
            source_trajectory_ids=sources,
            created_at="1970-01-01T00:00:00+00:00",
        )

    def indices_with_label(self, label: TrajectoryLabel) -> tuple[int, ...]:
        return tuple(i for i, t in enumerate(self.templates) if t.label is label)

    def template_by_id(self, template_id: str) -> TrajectoryTemplate:
        for t in self.templates:
            if t.template_id == template_id:
                return t
        raise KeyError(template_id)


def mock_judge_spec_for(*tasks: SyntheticTask) -> MockJudgeSpec:
    """A judge rule table exactly matching the tasks' ground truth.

    Verdicts come from criterion-text containment, which the default task
    construction keeps aligned with the templates' ground-truth verdicts;
    inconsistency flags key off the shortcut templates' full texts.
    """
    markers = frozenset(
        t.raw_text
        for task in tasks
        for t in task.templates
        if t.label is TrajectoryLabel.SHORTCUT_CORRECT
    )
    return MockJudgeSpec(verdict_mode="contains", inconsistent_markers=markers)


def default_task() -> SyntheticTask:
    """A similar-triangles proportion problem with two faithful solutions,
    two shortcuts, and two failures.

    Criterion texts appear verbatim in exactly the templates whose ground
    truth satisfies them, so a containment-rule mock judge reproduces the
    ground-truth verdicts bit for bit.
    """
    criteria = (
        RubricCriterion(index=1, text="identifies the given side lengths from the figure"),
        RubricCriterion(index=2, text="sets up the proportion between corresponding sides"),
        RubricCriterion(index=3, text="solves the proportion for the unknown side"),
        RubricCriterion(index=4, text="checks the result against the answer choices"),
    )
    templates = (
        TrajectoryTemplate(
            template_id="faithful_a",
            label=TrajectoryLabel.FAITHFUL_CORRECT,
            raw_text=(
                "First the solution identifies the given side lengths from the figure, "
                "reading 6 and 9 on the smaller triangle.\n\n"
                "Next it sets up the proportion between corresponding sides, "
                "writing 6/9 = x/12 with matched orientation.\n\n"
                "It then solves the proportion for the unknown side, cross-multiplying "
                "to get 9x = 72 and x = 8.\n\n"
                "Finally it checks the result against the answer choices and finds the match.\n\n"
                "Final answer: B"
            ),
            verdicts=(True, True, True, True),
        ),
        TrajectoryTemplate(
            template_id="faithful_b",
            label=TrajectoryLabel.FAITHFUL_CORRECT,
            raw_text=(
                "The solution identifies the given side lengths from the figure before "
                "doing anything else.\n\n"
                "It sets up the proportion between corresponding sides, keeping the "
                "small triangle on the left throughout.\n\n"
                "It solves the proportion for the unknown side and simplifies the fraction.\n\n"
                "It checks the result against the answer choices one by one.\n\n"
                "Final answer: B"
            ),
            verdicts=(True, True, True, True),
        ),
        TrajectoryTemplate(
            template_id="shortcut_a",
            label=TrajectoryLabel.SHORTCUT_CORRECT,
            raw_text=(
                "Only one option matches the obvious scale of the figure.\n\n"
                "Final answer: B"
            ),
            verdicts=(False, False, False, False),
        ),
        TrajectoryTemplate(
            template_id="shortcut_b",
            label=TrajectoryLabel.SHORTCUT_CORRECT,
            raw_text=(
                "It identifies the given side lengths from the figure, then jumps "
                "straight to the closest-looking option without any computation.\n\n"
                "Final answer: B"
            ),
            verdicts=(True, False, False, False),
        ),
        TrajectoryTemplate(
            template_id="incorrect_a",
            label=TrajectoryLabel.INCORRECT,
            raw_text=(
                "The solution identifies the given side lengths from the figure.\n\n"
                "It sets up the proportion between corresponding sides but inverts "
                "one of the ratios halfway through.\n\n"
                "Final answer: C"
            ),
            verdicts=(True, True, False, False),
        ),
        TrajectoryTemplate(
            template_id="incorrect_b",
            label=TrajectoryLabel.INCORRECT,
            raw_text=(
                "The figure looks ambiguous from here, so the attempt stops without "
                "committing to any option."
            ),
            verdicts=(False, False, False, False),
        ),
    )
    return SyntheticTask(
        task_id="similar-triangles-1",
        question_text=(
            "The two triangles in the figure are similar. Given the labeled side "
            "lengths, what is the length of the unknown side?"
        ),
        gold_answer="B",
        answer_kind=AnswerKind.MULTIPLE_CHOICE,
        criteria=criteria,
        templates=templates,
    )


# Initial log-preferences by label: shortcuts start likeliest (the drift
# premise), faithful solutions are a minority, failures a small tail.
DEFAULT_INITIAL_LOGITS = {
    TrajectoryLabel.FAITHFUL_CORRECT: 0.0,
    TrajectoryLabel.SHORTCUT_CORRECT: 1.0,
    TrajectoryLabel.INCORRECT: -0.6,
}


def default_initial_logits(task: SyntheticTask) -> list[float]:
    return [DEFAULT_INITIAL_LOGITS[t.label] for t in task.templates]
