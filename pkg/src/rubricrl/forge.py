"""Aggregation pipeline: filter correct rollouts, gate on minimum support,
ask the judge to distill shared checkpoints, persist rubric sets, and
compute corpus statistics.

The pipeline is resumable (stored problems are never re-judged) and
tolerant of per-problem failures: one bad judge exchange never aborts the
corpus run, it lands in the failure report instead.
"""

from __future__ import annotations

import json
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .errors import (
    CriterionCountOutOfRange,
    InvariantViolation,
    JudgeUnavailable,
    UnparseableVerdict,
)
from .judge.gateway import JudgeGateway, JudgeRequest
from .judge.templates import TemplateId
from .records import (
    ProblemInstance,
    RubricCriterion,
    RubricSet,
    Trajectory,
    _Record,
)
from .verifier import VerifierConfig, answer_reward


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class AggregationConfig:
    """Gating and prompt-shaping knobs for rubric construction."""

    rollouts_per_problem: int = 8
    min_correct: int = 4
    max_trajectories_in_prompt: int = 8
    min_criteria: int = 1
    max_criteria: int = 10

    def __post_init__(self) -> None:
        if not (1 <= self.min_correct <= self.rollouts_per_problem):
            raise InvariantViolation(
                "AggregationConfig",
                f"min_correct must be in [1, rollouts_per_problem], got {self.min_correct}",
            )
        if self.min_criteria < 1 or self.min_criteria > self.max_criteria:
            raise InvariantViolation(
                "AggregationConfig", "need 1 <= min_criteria <= max_criteria"
            )
        if self.max_trajectories_in_prompt < 1:
            raise InvariantViolation(
                "AggregationConfig", "max_trajectories_in_prompt must be >= 1"
            )


@dataclass(frozen=True)
class RubricCorpusStats(_Record):
    """Corpus-level summary of a rubric store."""

    n_problems: int
    n_rubric_sets: int
    coverage: float
    avg_criteria: float
    avg_words_per_criterion: float
    max_words_per_criterion: int
    avg_words_per_set: float
    total_words: int

    def __post_init__(self) -> None:
        for name in ("n_problems", "n_rubric_sets", "max_words_per_criterion", "total_words"):
            if getattr(self, name) < 0:
                raise InvariantViolation("RubricCorpusStats", f"{name} must be >= 0")
        expected = self.n_rubric_sets / self.n_problems if self.n_problems else 0.0
        if self.coverage != expected:
            raise InvariantViolation(
                "RubricCorpusStats",
                f"coverage {self.coverage} != n_rubric_sets/n_problems {expected}",
            )


@dataclass(frozen=True)
class ProblemFailure:
    problem_id: str
    reason: str


@dataclass
class AggregationReport:
    """Per-problem outcome tally for one aggregation run."""

    built: list[str] = field(default_factory=list)
    resumed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failures: list[ProblemFailure] = field(default_factory=list)


class RubricStore:
    """Line-delimited RubricSet store with a byte-offset index.

    Layout: <dir>/rubrics.jsonl holds one record per line; <dir>/index.jsonl
    appends {"problem_id", "offset"} entries so lookups seek straight to the
    line. Writes are serialized by a lock (single-writer); reads are
    lock-free on an immutable-once-written file.
    """

    DATA_FILE = "rubrics.jsonl"
    INDEX_FILE = "index.jsonl"

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.data_path = self.directory / self.DATA_FILE
        self.index_path = self.directory / self.INDEX_FILE
        self._lock = threading.Lock()
        self._offsets: dict[str, int] = {}
        if self.index_path.exists():
            self._load_index()
        elif self.data_path.exists():
            self.rebuild_index()

    def _load_index(self) -> None:
        with open(self.index_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entry = json.loads(line)
                    self._offsets[entry["problem_id"]] = int(entry["offset"])

    def rebuild_index(self) -> None:
        """Recreate the index by scanning the data file."""
        self._offsets.clear()
        if self.data_path.exists():
            with open(self.data_path, "rb") as fh:
                offset = fh.tell()
                for raw in fh:
                    line = raw.decode("utf-8").strip()
                    if line:
                        record = RubricSet.from_json_line(line)
                        self._offsets[record.problem_id] = offset
                    offset = fh.tell()
        with open(self.index_path, "w", encoding="utf-8") as fh:
            for problem_id, offset in self._offsets.items():
                fh.write(json.dumps({"problem_id": problem_id, "offset": offset}))
                fh.write("\n")

    def __contains__(self, problem_id: str) -> bool:
        return problem_id in self._offsets

    def __len__(self) -> int:
        return len(self._offsets)

    def problem_ids(self) -> list[str]:
        return list(self._offsets)

    def get(self, problem_id: str) -> Optional[RubricSet]:
        offset = self._offsets.get(problem_id)
        if offset is None:
            return None
        with open(self.data_path, "rb") as fh:
            fh.seek(offset)
            line = fh.readline().decode("utf-8")
        return RubricSet.from_json_line(line)

    def __iter__(self):
        if not self.data_path.exists():
            return
        with open(self.data_path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield RubricSet.from_json_line(line)

    def append(self, rubric_set: RubricSet) -> None:
        with self._lock:
            if rubric_set.problem_id in self._offsets:
                raise InvariantViolation(
                    "RubricSet", f"store already holds a set for {rubric_set.problem_id!r}"
                )
            payload = (rubric_set.to_json_line() + "\n").encode("utf-8")
            with open(self.data_path, "ab") as fh:
                offset = fh.tell()
                fh.write(payload)
            with open(self.index_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"problem_id": rubric_set.problem_id, "offset": offset}))
                fh.write("\n")
            self._offsets[rubric_set.problem_id] = offset


# Construction ---------------------------------------------------------------

# Criterion list grammar: a line starting "N." or "N)" opens criterion N;
# numbering must be 1..m consecutive; other non-blank lines append to the
# open criterion.
_CRITERION_START = re.compile(r"^\s*(\d+)[.)]\s+(.*\S)\s*$")


def parse_criteria_list(text: str) -> list[str]:
    items: list[str] = []
    for line in text.splitlines():
        m = _CRITERION_START.match(line)
        if m:
            number = int(m.group(1))
            if number != len(items) + 1:
                raise UnparseableVerdict(
                    f"criterion numbering expected {len(items) + 1}, got {number}"
                )
            items.append(m.group(2))
        elif items and line.strip():
            items[-1] = f"{items[-1]} {line.strip()}"
    return items


def select_correct_subset(
    problem: ProblemInstance,
    rollouts: Sequence[Trajectory],
    verifier_cfg: Optional[VerifierConfig] = None,
) -> list[Trajectory]:
    """Keep exactly the rollouts whose final answer verifies, in input order."""
    for t in rollouts:
        if t.problem_id != problem.problem_id:
            raise InvariantViolation(
                "Trajectory",
                f"rollout {t.trajectory_id} references {t.problem_id!r}, "
                f"not {problem.problem_id!r}",
            )
    return [
        t
        for t in rollouts
        if answer_reward(t, problem.gold_answer, problem.answer_kind, verifier_cfg) == 1.0
    ]


def render_trajectories_for_prompt(trajectories: Sequence[Trajectory]) -> str:
    blocks = []
    for i, t in enumerate(trajectories, start=1):
        body = "\n".join(t.steps)
        blocks.append(f"Solution {i}:\n{body}")
    return "\n\n".join(blocks)


def build_rubrics(
    problem: ProblemInstance,
    correct: Sequence[Trajectory],
    cfg: AggregationConfig,
    gateway: JudgeGateway,
    now: Callable[[], str] = utc_now_iso,
) -> Optional[RubricSet]:
    """Distill one rubric set from a problem's correct rollouts.

    Returns None (skipped) when support is below min_correct: with too few
    correct trajectories there is nothing reliable to aggregate.
    """
    if len(correct) < cfg.min_correct:
        return None
    in_prompt = list(correct)[: cfg.max_trajectories_in_prompt]
    request = JudgeRequest(
        template_id=TemplateId.RUBRIC_CONSTRUCTION,
        slots={
            "question": problem.question_text,
            "trajectories": render_trajectories_for_prompt(in_prompt),
            "min_criteria": str(cfg.min_criteria),
            "max_criteria": str(cfg.max_criteria),
            "problem_id": problem.problem_id,
        },
        max_output_tokens=64 * cfg.max_criteria + 128,
        temperature=0.0,
    )
    texts, _ = gateway.request_with_parse(request, parse_criteria_list)
    if not (cfg.min_criteria <= len(texts) <= cfg.max_criteria):
        raise CriterionCountOutOfRange(
            f"judge produced {len(texts)} criteria, "
            f"outside [{cfg.min_criteria}, {cfg.max_criteria}]"
        )
    criteria = tuple(
        RubricCriterion(index=i, text=t) for i, t in enumerate(texts, start=1)
    )
    # Sources record the full correct subset, even when the prompt was capped:
    # they are the evidence pool the gate was applied to.
    return RubricSet(
        problem_id=problem.problem_id,
        criteria=criteria,
        source_trajectory_ids=tuple(t.trajectory_id for t in correct),
        created_at=now(),
    ).require_min_sources(cfg.min_correct)


def run_aggregation(
    corpus: Sequence[ProblemInstance],
    rollouts_by_problem: Mapping[str, Sequence[Trajectory]],
    cfg: AggregationConfig,
    gateway: JudgeGateway,
    store: RubricStore,
    verifier_cfg: Optional[VerifierConfig] = None,
    now: Callable[[], str] = utc_now_iso,
    max_workers: int = 1,
) -> tuple[RubricCorpusStats, AggregationReport]:
    """Aggregate rubrics for a whole corpus into the store.

    Judge calls may run concurrently, but results are written in corpus
    order so two runs over identical inputs produce byte-identical stores.
    Problems already present in the store are not re-judged.
    """
    report = AggregationReport()

    def produce(problem: ProblemInstance) -> tuple[str, Optional[RubricSet], Optional[str]]:
        rollouts = rollouts_by_problem.get(problem.problem_id)
        if rollouts is None:
            return problem.problem_id, None, "no_rollouts"
        try:
            correct = select_correct_subset(problem, rollouts, verifier_cfg)
            built = build_rubrics(problem, correct, cfg, gateway, now)
        except JudgeUnavailable as exc:
            return problem.problem_id, None, f"judge_unavailable: {exc}"
        except UnparseableVerdict as exc:
            return problem.problem_id, None, f"unparseable: {exc}"
        except CriterionCountOutOfRange as exc:
            return problem.problem_id, None, f"criterion_count: {exc}"
        except InvariantViolation as exc:
            return problem.problem_id, None, f"invalid_rubric: {exc}"
        return problem.problem_id, built, None

    pending = [p for p in corpus if p.problem_id not in store]
    report.resumed = [p.problem_id for p in corpus if p.problem_id in store]

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(produce, pending))
    else:
        results = [produce(p) for p in pending]

    for problem_id, rubric_set, failure in results:
        if failure is not None:
            report.failures.append(ProblemFailure(problem_id=problem_id, reason=failure))
        elif rubric_set is None:
            report.skipped.append(problem_id)
        else:
            store.append(rubric_set)
            report.built.append(problem_id)

    return compute_stats(store, len(corpus)), report


def compute_stats(store: RubricStore, corpus_size: int) -> RubricCorpusStats:
    """Word/criterion statistics over the stored rubric sets.

    Words are whitespace tokens. Averages are over stored sets only; an
    empty store reports zeros.
    """
    n_sets = 0
    n_criteria = 0
    total_words = 0
    max_words = 0
    for rubric_set in store:
        n_sets += 1
        for criterion in rubric_set.criteria:
            words = len(criterion.text.split())
            n_criteria += 1
            total_words += words
            max_words = max(max_words, words)
    if corpus_size < n_sets:
        raise InvariantViolation(
            "RubricCorpusStats", f"corpus size {corpus_size} < stored sets {n_sets}"
        )
    return RubricCorpusStats(
        n_problems=corpus_size,
        n_rubric_sets=n_sets,
        coverage=(n_sets / corpus_size) if corpus_size else 0.0,
        avg_criteria=(n_criteria / n_sets) if n_sets else 0.0,
        avg_words_per_criterion=(total_words / n_criteria) if n_criteria else 0.0,
        max_words_per_criterion=max_words,
        avg_words_per_set=(total_words / n_sets) if n_sets else 0.0,
        total_words=total_words,
    )
