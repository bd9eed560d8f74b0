"""Deterministic judge for hermetic tests and offline runs.

The mock answers in the exact output grammar the real parsers accept, so
the render -> complete -> parse path is byte-identical to the remote one.
Behavior is a pure function of the rule table and the request slots; no
randomness, no network.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..errors import JudgeUnavailable
from .gateway import JudgeRequest
from .templates import TemplateId

# Criterion lines inside the rendered "criteria" slot: "N. text" / "N) text".
_CRITERION_LINE = re.compile(r"^\s*(\d+)[.)]\s*(.+)$")

# Solution blocks inside the rendered "trajectories" slot.
_SOLUTION_HEADER = re.compile(r"^Solution \d+:$")


@dataclass(frozen=True)
class MockJudgeSpec:
    """Rule table driving the mock.

    verdict_mode:
      - "table": verdict_table[problem_id][criterion_index], else default_verdict
      - "contains": criterion text appears (case-insensitive) in the trajectory
      - "all_true" / "all_false": constant verdicts
    Failure injection keys match the request's trajectory_id or problem_id.
    """

    verdict_mode: str = "all_true"
    verdict_table: Mapping[str, Mapping[int, bool]] = field(default_factory=dict)
    default_verdict: bool = False
    holistic_scores: Mapping[str, float] = field(default_factory=dict)
    default_holistic: float = 0.5
    criteria_table: Mapping[str, Sequence[str]] = field(default_factory=dict)
    inconsistent_ids: frozenset[str] = frozenset()
    inconsistent_markers: frozenset[str] = frozenset()
    unavailable_ids: frozenset[str] = frozenset()
    unparseable_ids: frozenset[str] = frozenset()
    always_unavailable: bool = False

    def __post_init__(self) -> None:
        allowed = {"table", "contains", "all_true", "all_false"}
        if self.verdict_mode not in allowed:
            raise ValueError(f"verdict_mode must be one of {sorted(allowed)}")

    @classmethod
    def from_json_file(cls, path: str | Path) -> "MockJudgeSpec":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            verdict_mode=data.get("verdict_mode", "all_true"),
            verdict_table={
                pid: {int(k): bool(v) for k, v in table.items()}
                for pid, table in data.get("verdict_table", {}).items()
            },
            default_verdict=bool(data.get("default_verdict", False)),
            holistic_scores={k: float(v) for k, v in data.get("holistic_scores", {}).items()},
            default_holistic=float(data.get("default_holistic", 0.5)),
            criteria_table={
                pid: list(texts) for pid, texts in data.get("criteria_table", {}).items()
            },
            inconsistent_ids=frozenset(data.get("inconsistent_ids", [])),
            inconsistent_markers=frozenset(data.get("inconsistent_markers", [])),
            unavailable_ids=frozenset(data.get("unavailable_ids", [])),
            unparseable_ids=frozenset(data.get("unparseable_ids", [])),
            always_unavailable=bool(data.get("always_unavailable", False)),
        )


class MockJudge:
    """Drop-in JudgeClient with zero network use."""

    def __init__(self, spec: MockJudgeSpec | None = None):
        self.spec = spec or MockJudgeSpec()

    def complete(self, request: JudgeRequest, prompt: str) -> str:
        spec = self.spec
        trajectory_id = str(request.slots.get("trajectory_id", ""))
        problem_id = str(request.slots.get("problem_id", ""))
        if spec.always_unavailable:
            raise JudgeUnavailable("mock judge configured as unavailable")
        if trajectory_id in spec.unavailable_ids or problem_id in spec.unavailable_ids:
            raise JudgeUnavailable(f"mock judge unavailable for {trajectory_id or problem_id}")
        if trajectory_id in spec.unparseable_ids or problem_id in spec.unparseable_ids:
            return "the committee was unable to reach a structured conclusion"
        if request.template_id is TemplateId.RUBRIC_SCORING:
            return self._score_rubrics(request, problem_id)
        if request.template_id is TemplateId.HOLISTIC_SCORING:
            score = spec.holistic_scores.get(problem_id, spec.default_holistic)
            return f"Score: {score}"
        if request.template_id is TemplateId.FAITHFULNESS_CHECK:
            return self._check_faithfulness(request, trajectory_id, problem_id)
        if request.template_id is TemplateId.RUBRIC_CONSTRUCTION:
            return self._construct(request, problem_id)
        raise JudgeUnavailable(f"mock judge has no rule for template {request.template_id}")

    def _score_rubrics(self, request: JudgeRequest, problem_id: str) -> str:
        criteria = _parse_criteria_slot(str(request.slots.get("criteria", "")))
        trajectory = str(request.slots.get("trajectory", "")).lower()
        lines = []
        for index, text in criteria:
            if self.spec.verdict_mode == "all_true":
                verdict = True
            elif self.spec.verdict_mode == "all_false":
                verdict = False
            elif self.spec.verdict_mode == "contains":
                verdict = text.lower() in trajectory
            else:
                verdict = self.spec.verdict_table.get(problem_id, {}).get(
                    index, self.spec.default_verdict
                )
            lines.append(f"{index}: {'YES' if verdict else 'NO'}")
        return "\n".join(lines)

    def _check_faithfulness(self, request: JudgeRequest, trajectory_id: str, problem_id: str) -> str:
        trajectory = str(request.slots.get("trajectory", ""))
        inconsistent = (
            trajectory_id in self.spec.inconsistent_ids
            or problem_id in self.spec.inconsistent_ids
            or any(marker in trajectory for marker in self.spec.inconsistent_markers)
        )
        return "INCONSISTENT" if inconsistent else "CONSISTENT"

    def _construct(self, request: JudgeRequest, problem_id: str) -> str:
        texts = self.spec.criteria_table.get(problem_id)
        if texts is None:
            # Derived fallback plays a compliant judge and honors the cap;
            # an explicit table is emitted verbatim (it may script misbehavior).
            max_criteria = int(str(request.slots.get("max_criteria", "10")))
            texts = _derive_criteria(str(request.slots.get("trajectories", "")))[:max_criteria]
        return "\n".join(f"{i}. {t}" for i, t in enumerate(texts, start=1))


def _parse_criteria_slot(rendered: str) -> list[tuple[int, str]]:
    out = []
    for line in rendered.splitlines():
        m = _CRITERION_LINE.match(line)
        if m:
            out.append((int(m.group(1)), m.group(2).strip()))
    return out


def _derive_criteria(trajectories_slot: str) -> list[str]:
    """Fallback construction rule: lines shared by every solution, in the
    first solution's order; if nothing is shared, the first solution's lines."""
    solutions: list[list[str]] = []
    current: list[str] | None = None
    for line in trajectories_slot.splitlines():
        if _SOLUTION_HEADER.match(line.strip()):
            current = []
            solutions.append(current)
        elif current is not None and line.strip():
            current.append(line.strip())
    if not solutions:
        return []
    shared = [
        line
        for line in solutions[0]
        if all(line in sol for sol in solutions[1:])
    ]
    return shared if shared else list(solutions[0])
