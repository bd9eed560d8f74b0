"""Domain records shared by every pipeline stage.

All types are frozen dataclasses validated at construction time and are
safe to share across threads. The canonical wire form is one JSON object
per line, UTF-8, with field names matching the dataclass fields exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence, Type, TypeVar

from .errors import InvariantViolation

# Canonical separator between reasoning steps inside a trajectory's raw text.
STEP_SEPARATOR = "\n\n"

# Tolerance for recomputed-arithmetic invariants on RewardRecord.
_ARITHMETIC_TOL = 1e-12

T = TypeVar("T", bound="_Record")


class AnswerKind(str, Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    FREE_FORM = "free_form"


def _require(ok: bool, record_type: str, invariant: str) -> None:
    if not ok:
        raise InvariantViolation(record_type, invariant)


def _require_finite(value: float, record_type: str, name: str) -> None:
    _require(
        isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value),
        record_type,
        f"{name} must be a finite number, got {value!r}",
    )


class _Record:
    """Mixin providing canonical dict/JSON-line serialization."""

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):  # type: ignore[arg-type]
            value = getattr(self, f.name)
            out[f.name] = _serialize_value(value)
        return out

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls: Type[T], data: dict[str, Any]) -> T:
        return _build(cls, data)

    @classmethod
    def from_json_line(cls: Type[T], line: str) -> T:
        data = json.loads(line)
        if not isinstance(data, dict):
            raise InvariantViolation(cls.__name__, "serialized record must be a JSON object")
        return cls.from_dict(data)


def _serialize_value(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, _Record):
        return value.to_dict()
    if isinstance(value, tuple):
        return [_serialize_value(v) for v in value]
    if isinstance(value, list):
        return [_serialize_value(v) for v in value]
    return value


def _build(cls: Type[T], data: dict[str, Any]) -> T:
    expected = {f.name for f in fields(cls)}  # type: ignore[arg-type]
    unknown = set(data) - expected
    if unknown:
        raise InvariantViolation(cls.__name__, f"unknown fields {sorted(unknown)}")
    missing = expected - set(data)
    if missing:
        raise InvariantViolation(cls.__name__, f"missing fields {sorted(missing)}")
    kwargs = dict(data)
    if cls is ProblemInstance:
        kwargs["answer_kind"] = AnswerKind(kwargs["answer_kind"])
    if cls is Trajectory:
        kwargs["steps"] = tuple(kwargs["steps"])
    if cls is RubricSet:
        kwargs["criteria"] = tuple(RubricCriterion.from_dict(c) for c in kwargs["criteria"])
        kwargs["source_trajectory_ids"] = tuple(kwargs["source_trajectory_ids"])
    if cls is RewardRecord:
        kwargs["verdicts"] = tuple(bool(v) for v in kwargs["verdicts"])
        kwargs["answer_reward"] = float(kwargs["answer_reward"])
        kwargs["combined_reward"] = float(kwargs["combined_reward"])
        kwargs["lambda_used"] = float(kwargs["lambda_used"])
        if kwargs["rubric_reward"] is not None:
            kwargs["rubric_reward"] = float(kwargs["rubric_reward"])
    if cls is AdvantageGroup:
        kwargs["rewards"] = tuple(float(r) for r in kwargs["rewards"])
        kwargs["advantages"] = tuple(float(a) for a in kwargs["advantages"])
    return cls(**kwargs)  # type: ignore[arg-type]


@dataclass(frozen=True)
class ProblemInstance(_Record):
    """One reasoning task: question, opaque visual reference, and gold answer.

    The visual reference is carried for provenance only; nothing in the
    pipeline ever fetches or decodes it, since judging is text-only.
    """

    problem_id: str
    question_text: str
    visual_ref: str
    gold_answer: str
    answer_kind: AnswerKind

    def __post_init__(self) -> None:
        _require(bool(self.problem_id), "ProblemInstance", "problem_id must be non-empty")
        _require(bool(self.gold_answer), "ProblemInstance", "gold_answer must be non-empty")
        if self.answer_kind is AnswerKind.MULTIPLE_CHOICE:
            _require(
                len(self.gold_answer) == 1 and "A" <= self.gold_answer <= "Z",
                "ProblemInstance",
                f"multiple_choice gold_answer must be a single letter A-Z, got {self.gold_answer!r}",
            )


@dataclass(frozen=True)
class Trajectory(_Record):
    """One sampled reasoning trace, split into ordered steps.

    Steps are delimited by STEP_SEPARATOR in the raw text; joining the
    steps with that separator must reconstruct raw_text exactly.
    """

    trajectory_id: str
    problem_id: str
    steps: tuple[str, ...]
    raw_text: str
    final_answer: Optional[str]

    def __post_init__(self) -> None:
        _require(bool(self.trajectory_id), "Trajectory", "trajectory_id must be non-empty")
        _require(bool(self.problem_id), "Trajectory", "problem_id must be non-empty")
        if self.raw_text:
            _require(len(self.steps) > 0, "Trajectory", "steps must be non-empty when raw_text is non-empty")
            _require(
                STEP_SEPARATOR.join(self.steps) == self.raw_text,
                "Trajectory",
                "joining steps with the step separator must reconstruct raw_text",
            )

    @classmethod
    def from_text(
        cls,
        trajectory_id: str,
        problem_id: str,
        raw_text: str,
        final_answer: Optional[str] = None,
    ) -> "Trajectory":
        steps = tuple(raw_text.split(STEP_SEPARATOR)) if raw_text else ()
        return cls(
            trajectory_id=trajectory_id,
            problem_id=problem_id,
            steps=steps,
            raw_text=raw_text,
            final_answer=final_answer,
        )


@dataclass(frozen=True)
class RubricCriterion(_Record):
    """A single natural-language reasoning checkpoint.

    Texts under three words are rejected: keyword fragments are too thin
    to encode an evaluable checkpoint.
    """

    index: int
    text: str

    def __post_init__(self) -> None:
        _require(self.index >= 1, "RubricCriterion", "index must be 1-based")
        _require(bool(self.text.strip()), "RubricCriterion", "text must be non-empty")
        _require(
            len(self.text.split()) >= 3,
            "RubricCriterion",
            f"text must have at least 3 words, got {self.text!r}",
        )


@dataclass(frozen=True)
class RubricSet(_Record):
    """Ordered checkpoints distilled from the correct trajectories of one problem."""

    problem_id: str
    criteria: tuple[RubricCriterion, ...]
    source_trajectory_ids: tuple[str, ...]
    created_at: str

    def __post_init__(self) -> None:
        _require(bool(self.problem_id), "RubricSet", "problem_id must be non-empty")
        _require(len(self.criteria) >= 1, "RubricSet", "criteria must be non-empty")
        for pos, criterion in enumerate(self.criteria, start=1):
            _require(
                criterion.index == pos,
                "RubricSet",
                f"criterion index {criterion.index} does not match position {pos}",
            )
        _require(
            len(self.source_trajectory_ids) >= 1,
            "RubricSet",
            "source_trajectory_ids must be non-empty",
        )

    def require_min_sources(self, min_sources: int) -> "RubricSet":
        _require(
            len(self.source_trajectory_ids) >= min_sources,
            "RubricSet",
            f"needs at least {min_sources} source trajectories, "
            f"got {len(self.source_trajectory_ids)}",
        )
        return self


@dataclass(frozen=True)
class RewardRecord(_Record):
    """Per-trajectory rewards: binary answer reward, rubric fraction, and their blend.

    combined_reward is lambda_used * answer_reward + (1 - lambda_used) *
    rubric_reward when a rubric reward is present, and answer_reward alone
    otherwise. Both identities are revalidated at construction.
    """

    trajectory_id: str
    answer_reward: float
    rubric_reward: Optional[float]
    verdicts: tuple[bool, ...]
    combined_reward: float
    lambda_used: float

    def __post_init__(self) -> None:
        _require(bool(self.trajectory_id), "RewardRecord", "trajectory_id must be non-empty")
        _require_finite(self.answer_reward, "RewardRecord", "answer_reward")
        _require_finite(self.combined_reward, "RewardRecord", "combined_reward")
        _require_finite(self.lambda_used, "RewardRecord", "lambda_used")
        _require(
            self.answer_reward in (0.0, 1.0),
            "RewardRecord",
            f"answer_reward must be 0 or 1, got {self.answer_reward}",
        )
        _require(
            0.0 <= self.lambda_used <= 1.0,
            "RewardRecord",
            f"lambda_used must be in [0,1], got {self.lambda_used}",
        )
        if self.rubric_reward is None:
            _require(
                abs(self.combined_reward - self.answer_reward) <= _ARITHMETIC_TOL,
                "RewardRecord",
                "combined_reward must equal answer_reward when rubric_reward is absent",
            )
        else:
            _require_finite(self.rubric_reward, "RewardRecord", "rubric_reward")
            _require(len(self.verdicts) > 0, "RewardRecord", "verdicts must be non-empty when rubric_reward is present")
            expected_rubric = sum(self.verdicts) / len(self.verdicts)
            _require(
                abs(self.rubric_reward - expected_rubric) <= _ARITHMETIC_TOL,
                "RewardRecord",
                f"rubric_reward {self.rubric_reward} must equal satisfied fraction {expected_rubric}",
            )
            expected_combined = (
                self.lambda_used * self.answer_reward + (1.0 - self.lambda_used) * self.rubric_reward
            )
            _require(
                abs(self.combined_reward - expected_combined) <= _ARITHMETIC_TOL,
                "RewardRecord",
                f"combined_reward {self.combined_reward} must equal weighted blend {expected_combined}",
            )
        _require(
            0.0 <= self.combined_reward <= 1.0,
            "RewardRecord",
            f"combined_reward must be in [0,1], got {self.combined_reward}",
        )


def validate_reward_record(record: RewardRecord) -> RewardRecord:
    """Re-run all RewardRecord invariants; returns the record if they hold."""
    RewardRecord(
        trajectory_id=record.trajectory_id,
        answer_reward=record.answer_reward,
        rubric_reward=record.rubric_reward,
        verdicts=record.verdicts,
        combined_reward=record.combined_reward,
        lambda_used=record.lambda_used,
    )
    return record


# Tolerance on the normalization invariants of an advantage group.
_NORMALIZATION_TOL = 1e-9


@dataclass(frozen=True)
class AdvantageGroup(_Record):
    """A group of rewards with their group-normalized advantages.

    Non-degenerate groups are z-scored: mean 0 and population standard
    deviation 1, both within 1e-9. Degenerate (zero-variance) groups carry
    exactly-zero advantages instead of blowing up the division.
    """

    problem_id: str
    rewards: tuple[float, ...]
    advantages: tuple[float, ...]
    degenerate: bool

    def __post_init__(self) -> None:
        g = len(self.rewards)
        _require(g >= 2, "AdvantageGroup", f"group size must be >= 2, got {g}")
        _require(
            len(self.advantages) == g,
            "AdvantageGroup",
            "rewards and advantages must have equal length",
        )
        for i, r in enumerate(self.rewards):
            _require_finite(r, "AdvantageGroup", f"rewards[{i}]")
        for i, a in enumerate(self.advantages):
            _require_finite(a, "AdvantageGroup", f"advantages[{i}]")
        if self.degenerate:
            _require(
                all(a == 0.0 for a in self.advantages),
                "AdvantageGroup",
                "degenerate group must have all-zero advantages",
            )
        else:
            mean = sum(self.advantages) / g
            _require(
                abs(mean) <= _NORMALIZATION_TOL,
                "AdvantageGroup",
                f"advantage mean must be 0 within {_NORMALIZATION_TOL}, got {mean}",
            )
            pop_std = math.sqrt(sum((a - mean) ** 2 for a in self.advantages) / g)
            _require(
                abs(pop_std - 1.0) <= _NORMALIZATION_TOL,
                "AdvantageGroup",
                f"advantage population std must be 1 within {_NORMALIZATION_TOL}, got {pop_std}",
            )


def write_jsonl(path: str | Path, records: Iterable[_Record]) -> int:
    """Write records as one JSON line each; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json_line())
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path: str | Path, record_type: Type[T]) -> Iterator[T]:
    """Yield records of the given type from a JSONL file, skipping blank lines."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield record_type.from_json_line(line)


def load_corpus(path: str | Path) -> list[ProblemInstance]:
    """Load a problem corpus, enforcing problem_id uniqueness."""
    problems = list(read_jsonl(path, ProblemInstance))
    seen: set[str] = set()
    for p in problems:
        if p.problem_id in seen:
            raise InvariantViolation("ProblemInstance", f"duplicate problem_id {p.problem_id!r} in corpus")
        seen.add(p.problem_id)
    return problems


def load_rollouts(path: str | Path) -> dict[str, list[Trajectory]]:
    """Load a rollout store grouped by problem_id, preserving file order."""
    grouped: dict[str, list[Trajectory]] = {}
    for t in read_jsonl(path, Trajectory):
        grouped.setdefault(t.problem_id, []).append(t)
    return grouped
