"""Selection, gating, criterion parsing, persistence, and corpus stats."""

import pytest

from rubricrl.errors import (
    CriterionCountOutOfRange,
    InvariantViolation,
    UnparseableVerdict,
)
from rubricrl.forge import (
    AggregationConfig,
    RubricStore,
    build_rubrics,
    compute_stats,
    parse_criteria_list,
    run_aggregation,
    select_correct_subset,
)
from rubricrl.judge import JudgeGateway, MockJudge, MockJudgeSpec
from rubricrl.records import (
    AnswerKind,
    ProblemInstance,
    RubricCriterion,
    RubricSet,
    Trajectory,
)

FIXED_NOW = lambda: "2024-01-01T00:00:00+00:00"  # noqa: E731


def problem(pid="p1", gold="B"):
    return ProblemInstance(
        problem_id=pid,
        question_text="Which line has the steepest slope?",
        visual_ref=f"{pid}.png",
        gold_answer=gold,
        answer_kind=AnswerKind.MULTIPLE_CHOICE,
    )


def rollout(pid, tid, answer, steps=("reads the chart carefully", "compares the slopes")):
    text = "\n\n".join([*steps, f"Final answer: {answer}"])
    return Trajectory.from_text(tid, pid, text)


def make_rollouts(pid, answers):
    return [rollout(pid, f"{pid}-t{i}", a) for i, a in enumerate(answers)]


def gateway(spec=None, max_retries=0):
    return JudgeGateway(MockJudge(spec or MockJudgeSpec()), max_retries=max_retries)


class TestSelectCorrectSubset:
    def test_keeps_only_verified_in_order(self):
        p = problem()
        rollouts = make_rollouts("p1", ["B", "C", "B", "A", "B", "B", "D", "B"])
        correct = select_correct_subset(p, rollouts)
        assert [t.trajectory_id for t in correct] == [
            "p1-t0",
            "p1-t2",
            "p1-t4",
            "p1-t5",
            "p1-t7",
        ]

    def test_none_correct(self):
        p = problem()
        assert select_correct_subset(p, make_rollouts("p1", ["A", "C"])) == []

    def test_all_correct(self):
        p = problem()
        rollouts = make_rollouts("p1", ["B"] * 8)
        assert len(select_correct_subset(p, rollouts)) == 8

    def test_foreign_rollout_rejected(self):
        p = problem()
        with pytest.raises(InvariantViolation):
            select_correct_subset(p, make_rollouts("p2", ["B"]))

    def test_invariant_to_incorrect_rollout_order(self):
        p = problem()
        correct = [rollout("p1", f"c{i}", "B") for i in range(4)]
        wrong1 = [rollout("p1", f"w{i}", "A") for i in range(3)]
        a = select_correct_subset(p, wrong1 + correct)
        b = select_correct_subset(p, correct + list(reversed(wrong1)))
        assert [t.trajectory_id for t in a] == [t.trajectory_id for t in b]


class TestParseCriteriaList:
    def test_numbered_dot_and_paren(self):
        text = "1. identifies the axes first\n2) compares slope magnitudes\n"
        assert parse_criteria_list(text) == [
            "identifies the axes first",
            "compares slope magnitudes",
        ]

    def test_continuation_lines_append(self):
        text = "1. identifies the axes\nand their scales\n2. compares slopes"
        assert parse_criteria_list(text) == [
            "identifies the axes and their scales",
            "compares slopes",
        ]

    def test_preamble_ignored(self):
        text = "Here are the checkpoints:\n1. reads the chart carefully"
        assert parse_criteria_list(text) == ["reads the chart carefully"]

    def test_numbering_jump_rejected(self):
        with pytest.raises(UnparseableVerdict):
            parse_criteria_list("1. fine first item\n3. skipped a number")

    def test_no_items(self):
        assert parse_criteria_list("no list at all here") == []


class TestBuildRubrics:
    def test_below_gate_skipped(self):
        p = problem()
        correct = [rollout("p1", f"t{i}", "B") for i in range(3)]
        assert build_rubrics(p, correct, AggregationConfig(min_correct=4), gateway()) is None

    def test_mock_criteria_table(self):
        p = problem()
        correct = [rollout("p1", f"t{i}", "B") for i in range(5)]
        spec = MockJudgeSpec(
            criteria_table={
                "p1": [
                    "identifies both axes",
                    "compares the slopes",
                    "states the steeper line",
                ]
            }
        )
        rs = build_rubrics(p, correct, AggregationConfig(), gateway(spec), now=FIXED_NOW)
        assert rs is not None
        assert [c.text for c in rs.criteria] == [
            "identifies both axes",
            "compares the slopes",
            "states the steeper line",
        ]
        assert rs.source_trajectory_ids == tuple(f"t{i}" for i in range(5))
        assert rs.created_at == FIXED_NOW()

    def test_shared_step_fallback(self):
        p = problem()
        shared = ("reads the chart carefully", "compares the slopes")
        correct = [rollout("p1", f"t{i}", "B", steps=shared) for i in range(4)]
        rs = build_rubrics(p, correct, AggregationConfig(), gateway(), now=FIXED_NOW)
        assert rs is not None
        texts = [c.text for c in rs.criteria]
        assert texts[0] == "reads the chart carefully"
        assert texts[1] == "compares the slopes"

    def test_zero_criteria_out_of_range(self):
        p = problem()
        correct = [rollout("p1", f"t{i}", "B") for i in range(4)]
        spec = MockJudgeSpec(criteria_table={"p1": []})
        with pytest.raises(CriterionCountOutOfRange):
            build_rubrics(p, correct, AggregationConfig(), gateway(spec), now=FIXED_NOW)

    def test_too_many_criteria_out_of_range(self):
        p = problem()
        correct = [rollout("p1", f"t{i}", "B") for i in range(4)]
        spec = MockJudgeSpec(
            criteria_table={"p1": [f"checkpoint number {i} holds" for i in range(12)]}
        )
        with pytest.raises(CriterionCountOutOfRange):
            build_rubrics(
                p, correct, AggregationConfig(max_criteria=10), gateway(spec), now=FIXED_NOW
            )

    def test_prompt_cap_keeps_full_source_list(self):
        p = problem()
        correct = [rollout("p1", f"t{i}", "B") for i in range(8)]
        cfg = AggregationConfig(max_trajectories_in_prompt=2)
        rs = build_rubrics(p, correct, cfg, gateway(), now=FIXED_NOW)
        assert rs is not None
        assert len(rs.source_trajectory_ids) == 8

    def test_config_invariants(self):
        with pytest.raises(InvariantViolation):
            AggregationConfig(min_correct=0)
        with pytest.raises(InvariantViolation):
            AggregationConfig(min_correct=9, rollouts_per_problem=8)
        with pytest.raises(InvariantViolation):
            AggregationConfig(min_criteria=5, max_criteria=3)


class TestRubricStore:
    def make_set(self, pid):
        return RubricSet(
            problem_id=pid,
            criteria=(RubricCriterion(index=1, text="reads the chart carefully"),),
            source_trajectory_ids=("t1", "t2", "t3", "t4"),
            created_at=FIXED_NOW(),
        )

    def test_append_get(self, tmp_path):
        store = RubricStore(tmp_path / "rubrics")
        store.append(self.make_set("p1"))
        store.append(self.make_set("p2"))
        assert len(store) == 2
        assert store.get("p1").problem_id == "p1"
        assert store.get("p3") is None
        assert "p2" in store

    def test_duplicate_append_rejected(self, tmp_path):
        store = RubricStore(tmp_path / "rubrics")
        store.append(self.make_set("p1"))
        with pytest.raises(InvariantViolation):
            store.append(self.make_set("p1"))

    def test_reopen_uses_index(self, tmp_path):
        store = RubricStore(tmp_path / "rubrics")
        store.append(self.make_set("p1"))
        reopened = RubricStore(tmp_path / "rubrics")
        assert reopened.get("p1") == store.get("p1")

    def test_index_rebuild_after_deletion(self, tmp_path):
        store = RubricStore(tmp_path / "rubrics")
        store.append(self.make_set("p1"))
        store.append(self.make_set("p2"))
        store.index_path.unlink()
        rebuilt = RubricStore(tmp_path / "rubrics")
        assert rebuilt.get("p2") == store.get("p2")
        assert len(rebuilt) == 2


def small_world(n_problems=10, n_correct_by_problem=None):
    """Corpus where problem i has a chosen number of correct rollouts out of 8."""
    problems = [problem(f"p{i}") for i in range(n_problems)]
    rollouts = {}
    for i, p in enumerate(problems):
        k = n_correct_by_problem[i] if n_correct_by_problem else 8
        answers = ["B"] * k + ["A"] * (8 - k)
        rollouts[p.problem_id] = make_rollouts(p.problem_id, answers)
    return problems, rollouts


class TestRunAggregation:
    def test_coverage_counts_qualifying_problems(self, tmp_path):
        counts = [8, 8, 8, 4, 4, 5, 6, 3, 2, 0]  # 7 of 10 meet min_correct=4
        problems, rollouts = small_world(10, counts)
        store = RubricStore(tmp_path / "rubrics")
        stats, report = run_aggregation(
            problems, rollouts, AggregationConfig(), gateway(), store, now=FIXED_NOW
        )
        assert stats.n_rubric_sets == 7
        assert stats.coverage == pytest.approx(0.7)
        assert len(report.built) == 7
        assert sorted(report.skipped) == ["p7", "p8", "p9"]
        assert report.failures == []

    def test_gating_invariant_holds_for_every_stored_set(self, tmp_path):
        counts = [8, 7, 6, 5, 4, 4, 4, 4, 8, 8]
        problems, rollouts = small_world(10, counts)
        store = RubricStore(tmp_path / "rubrics")
        cfg = AggregationConfig(min_correct=4)
        run_aggregation(problems, rollouts, cfg, gateway(), store, now=FIXED_NOW)
        for rubric_set in store:
            assert len(rubric_set.source_trajectory_ids) >= cfg.min_correct

    def test_resumable_and_byte_identical(self, tmp_path):
        problems, rollouts = small_world(6)
        store_a = RubricStore(tmp_path / "a")
        run_aggregation(problems, rollouts, AggregationConfig(), gateway(), store_a, now=FIXED_NOW)
        first_bytes = store_a.data_path.read_bytes()

        # Second run over the same store: everything resumed, nothing re-judged.
        calls = []

        class SpyingJudge(MockJudge):
            def complete(self, request, prompt):
                calls.append(request.template_id)
                return super().complete(request, prompt)

        _, report = run_aggregation(
            problems,
            rollouts,
            AggregationConfig(),
            JudgeGateway(SpyingJudge(), max_retries=0),
            store_a,
            now=FIXED_NOW,
        )
        assert calls == []
        assert len(report.resumed) == 6
        assert store_a.data_path.read_bytes() == first_bytes

        # Fresh store, same inputs: byte-identical data file.
        store_b = RubricStore(tmp_path / "b")
        run_aggregation(problems, rollouts, AggregationConfig(), gateway(), store_b, now=FIXED_NOW)
        assert store_b.data_path.read_bytes() == first_bytes

    def test_partial_failures_do_not_abort(self, tmp_path):
        problems, rollouts = small_world(4)
        spec = MockJudgeSpec(unavailable_ids=frozenset({"p1"}))
        store = RubricStore(tmp_path / "rubrics")
        stats, report = run_aggregation(
            problems, rollouts, AggregationConfig(), gateway(spec), store, now=FIXED_NOW
        )
        assert [f.problem_id for f in report.failures] == ["p1"]
        assert "judge_unavailable" in report.failures[0].reason
        assert stats.n_rubric_sets == 3

    def test_short_criterion_text_becomes_failure(self, tmp_path):
        problems, rollouts = small_world(2)
        spec = MockJudgeSpec(criteria_table={"p0": ["too short"]})
        store = RubricStore(tmp_path / "rubrics")
        _, report = run_aggregation(
            problems, rollouts, AggregationConfig(), gateway(spec), store, now=FIXED_NOW
        )
        assert [f.problem_id for f in report.failures] == ["p0"]
        assert "invalid_rubric" in report.failures[0].reason

    def test_missing_rollouts_reported(self, tmp_path):
        problems, _ = small_world(2)
        store = RubricStore(tmp_path / "rubrics")
        _, report = run_aggregation(
            problems, {}, AggregationConfig(), gateway(), store, now=FIXED_NOW
        )
        assert {f.reason for f in report.failures} == {"no_rollouts"}

    def test_empty_corpus(self, tmp_path):
        store = RubricStore(tmp_path / "rubrics")
        stats, _ = run_aggregation([], {}, AggregationConfig(), gateway(), store, now=FIXED_NOW)
        assert stats.n_problems == 0
        assert stats.coverage == 0.0

    def test_concurrent_run_matches_serial_bytes(self, tmp_path):
        problems, rollouts = small_world(12)
        serial = RubricStore(tmp_path / "serial")
        run_aggregation(
            problems, rollouts, AggregationConfig(), gateway(), serial, now=FIXED_NOW
        )
        threaded = RubricStore(tmp_path / "threaded")
        run_aggregation(
            problems,
            rollouts,
            AggregationConfig(),
            gateway(),
            threaded,
            now=FIXED_NOW,
            max_workers=4,
        )
        assert threaded.data_path.read_bytes() == serial.data_path.read_bytes()


class TestComputeStats:
    def store_with_word_counts(self, tmp_path, sets):
        """sets: list of lists of word counts, one inner list per rubric set."""
        store = RubricStore(tmp_path / "rubrics")
        for i, counts in enumerate(sets):
            criteria = tuple(
                RubricCriterion(index=j, text=" ".join(["word"] * c))
                for j, c in enumerate(counts, start=1)
            )
            store.append(
                RubricSet(
                    problem_id=f"p{i}",
                    criteria=criteria,
                    source_trajectory_ids=("t1", "t2", "t3", "t4"),
                    created_at=FIXED_NOW(),
                )
            )
        return store

    def test_word_averages_are_criteria_weighted(self, tmp_path):
        store = self.store_with_word_counts(tmp_path, [[4, 6], [10]])
        stats = compute_stats(store, corpus_size=2)
        assert stats.avg_words_per_criterion == pytest.approx(20 / 3)
        assert stats.avg_words_per_set == pytest.approx(10.0)
        assert stats.max_words_per_criterion == 10
        assert stats.total_words == 20

    def test_single_set_avg_criteria(self, tmp_path):
        store = self.store_with_word_counts(tmp_path, [[3, 3, 3]])
        stats = compute_stats(store, corpus_size=1)
        assert stats.avg_criteria == 3.0

    def test_empty_store(self, tmp_path):
        store = RubricStore(tmp_path / "rubrics")
        stats = compute_stats(store, corpus_size=5)
        assert stats.coverage == 0.0
        assert stats.avg_criteria == 0.0
        assert stats.avg_words_per_criterion == 0.0
        assert stats.max_words_per_criterion == 0

    def test_corpus_smaller_than_store_rejected(self, tmp_path):
        store = self.store_with_word_counts(tmp_path, [[3], [3]])
        with pytest.raises(InvariantViolation):
            compute_stats(store, corpus_size=1)

    def test_coverage_identity_exact(self, tmp_path):
        store = self.store_with_word_counts(tmp_path, [[3], [4], [5]])
        stats = compute_stats(store, corpus_size=7)
        assert stats.coverage == stats.n_rubric_sets / stats.n_problems
