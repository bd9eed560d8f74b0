"""CLI surface: aggregation, stats, sandbox runs/plots, serve wiring, reload."""

import json
from pathlib import Path

import pytest
from click.testing import CliRunner
from testkit import FIXED_TS, RUBRIC_IDS, write_inputs, write_judge_toml

from rubricrl.cli import main
from rubricrl.forge import RubricStore


@pytest.fixture()
def runner():
    return CliRunner()


def parse_kv(output):
    pairs = {}
    for line in output.splitlines():
        parts = line.split("\t")
        if len(parts) == 2:
            pairs[parts[0]] = parts[1]
    return pairs


def aggregate_args(root, extra=()):
    return [
        "aggregate",
        "--corpus", str(root / "corpus.jsonl"),
        "--rollouts", str(root / "rollouts.jsonl"),
        "--out", str(root / "rubrics"),
        "--judge", str(root / "judge.toml"),
        "--fixed-timestamp", FIXED_TS,
        *extra,
    ]


class TestAggregateCommand:
    def test_builds_store_and_reports(self, runner, tmp_path):
        write_inputs(tmp_path)
        write_judge_toml(tmp_path)
        result = runner.invoke(main, aggregate_args(tmp_path))
        assert result.exit_code == 0, result.output
        pairs = parse_kv(result.output)
        assert pairs["built"] == "5"
        assert pairs["skipped"] == "1"
        assert pairs["failed"] == "0"
        assert pairs["n_rubric_sets"] == "5"
        assert float(pairs["coverage"]) == 5 / 6
        store = RubricStore(tmp_path / "rubrics")
        assert sorted(store.problem_ids()) == sorted(RUBRIC_IDS)
        assert store.get("p0").created_at == FIXED_TS

    def test_second_run_resumes_and_preserves_bytes(self, runner, tmp_path):
        write_inputs(tmp_path)
        write_judge_toml(tmp_path)
        assert runner.invoke(main, aggregate_args(tmp_path)).exit_code == 0
        before = (tmp_path / "rubrics" / "rubrics.jsonl").read_bytes()
        result = runner.invoke(main, aggregate_args(tmp_path))
        assert result.exit_code == 0
        pairs = parse_kv(result.output)
        assert pairs["built"] == "0"
        assert pairs["resumed"] == "5"
        assert (tmp_path / "rubrics" / "rubrics.jsonl").read_bytes() == before

    def test_per_problem_failures_listed(self, runner, tmp_path):
        write_inputs(tmp_path)
        # No criteria rule for p2: the mock falls back to deriving criteria
        # from shared lines, but an unavailable injection fails it outright.
        write_judge_toml(
            tmp_path,
            rules={
                "verdict_mode": "contains",
                "criteria_table": {
                    pid: [f"works the problem {pid} carefully"] for pid in RUBRIC_IDS if pid != "p2"
                },
                "unavailable_ids": ["p2"],
            },
        )
        result = runner.invoke(main, aggregate_args(tmp_path))
        assert result.exit_code == 0
        assert "failure\tp2\tjudge_unavailable" in result.output
        store = RubricStore(tmp_path / "rubrics")
        assert "p2" not in store


class TestStatsCommand:
    def test_matches_store_contents(self, runner, tmp_path):
        write_inputs(tmp_path)
        write_judge_toml(tmp_path)
        assert runner.invoke(main, aggregate_args(tmp_path)).exit_code == 0
        result = runner.invoke(
            main,
            [
                "stats",
                "--rubrics", str(tmp_path / "rubrics"),
                "--corpus", str(tmp_path / "corpus.jsonl"),
            ],
        )
        assert result.exit_code == 0, result.output
        pairs = parse_kv(result.output)
        assert pairs["n_problems"] == "6"
        assert pairs["n_rubric_sets"] == "5"
        assert float(pairs["avg_criteria"]) == 4.0


class TestSandboxCommands:
    def test_run_writes_trace(self, runner, tmp_path):
        out = tmp_path / "trace.jsonl"
        result = runner.invoke(
            main,
            ["sandbox", "run", "--lambda", "0.5", "--steps", "6", "--seed", "1",
             "--out", str(out)],
        )
        assert result.exit_code == 0, result.output
        lines = out.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 6
        first = json.loads(lines[0])
        assert set(first) == {"step", "answer_reward", "rubric_reward", "response_length", "faithful_mass"}
        pairs = parse_kv(result.output)
        assert pairs["steps"] == "6"
        assert 0.0 <= float(pairs["final_faithful_mass"]) <= 1.0

    def test_run_is_deterministic(self, runner, tmp_path):
        args = ["sandbox", "run", "--steps", "8", "--seed", "3"]
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert runner.invoke(main, args + ["--out", str(a)]).exit_code == 0
        assert runner.invoke(main, args + ["--out", str(b)]).exit_code == 0
        assert a.read_bytes() == b.read_bytes()

    def test_compare_emits_summary_and_figures(self, runner, tmp_path):
        out_dir = tmp_path / "sweep"
        result = runner.invoke(
            main,
            ["sandbox", "compare", "--lambdas", "1.0,0.5", "--seeds", "2",
             "--steps", "5", "--out-dir", str(out_dir)],
        )
        assert result.exit_code == 0, result.output
        summary = (out_dir / "summary.tsv").read_text(encoding="utf-8").splitlines()
        assert summary[0].split("\t") == [
            "lambda", "seed", "final_faithful_mass", "final_answer_reward",
            "answer_reward_variance_last20",
        ]
        assert len(summary) == 1 + 4  # 2 lambdas x 2 seeds
        for seed in (0, 1):
            svg = out_dir / f"compare_seed{seed}.svg"
            assert svg.exists()
            assert svg.read_text(encoding="utf-8").lstrip().startswith("<?xml")
            for lam in ("1", "0.5"):
                assert (out_dir / f"trace_lambda{lam}_seed{seed}.jsonl").exists()
        assert summary[0] in result.output

    def test_plot_single_trace(self, runner, tmp_path):
        trace = tmp_path / "t.jsonl"
        assert runner.invoke(
            main, ["sandbox", "run", "--steps", "5", "--seed", "2", "--out", str(trace)]
        ).exit_code == 0
        out = tmp_path / "t.svg"
        result = runner.invoke(main, ["sandbox", "plot", str(trace), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert out.exists()
        assert out.read_text(encoding="utf-8").lstrip().startswith("<?xml")

    def test_plot_overlay_with_labels(self, runner, tmp_path):
        traces = []
        for k, lam in enumerate(("1.0", "0.5")):
            path = tmp_path / f"t{k}.jsonl"
            assert runner.invoke(
                main,
                ["sandbox", "run", "--lambda", lam, "--steps", "5", "--seed", "2",
                 "--out", str(path)],
            ).exit_code == 0
            traces.append(str(path))
        out = tmp_path / "overlay.svg"
        result = runner.invoke(
            main,
            ["sandbox", "plot", *traces, "--out", str(out),
             "--label", "outcome-only", "--label", "blended"],
        )
        assert result.exit_code == 0, result.output
        assert out.exists()

    def test_plot_label_count_mismatch_rejected(self, runner, tmp_path):
        trace = tmp_path / "t.jsonl"
        assert runner.invoke(
            main, ["sandbox", "run", "--steps", "5", "--seed", "2", "--out", str(trace)]
        ).exit_code == 0
        result = runner.invoke(
            main,
            ["sandbox", "plot", str(trace), "--out", str(tmp_path / "x.svg"),
             "--label", "a", "--label", "b"],
        )
        assert result.exit_code != 0


class TestServeCommand:
    def test_builds_app_and_passes_port(self, runner, tmp_path, monkeypatch):
        from testkit import build_corpus_dir

        build_corpus_dir(tmp_path)
        (tmp_path / "cfg.toml").write_text(
            """
[service]
port = 9321

[paths]
corpus = 'corpus.jsonl'
rubric_dir = 'rubrics'

[judge]
mode = "mock"
""",
            encoding="utf-8",
        )
        captured = {}

        def fake_run(app, **kwargs):
            captured["app"] = app
            captured.update(kwargs)

        monkeypatch.setattr("uvicorn.run", fake_run)
        result = runner.invoke(main, ["serve", "--config", str(tmp_path / "cfg.toml")])
        assert result.exit_code == 0, result.output
        assert captured["port"] == 9321
        assert captured["host"] == "127.0.0.1"
        assert captured["app"].state.service.config.port == 9321


class TestReloadCommand:
    def _fake_post(self, monkeypatch, status_code=200):
        calls = {}

        class FakeResponse:
            def __init__(self):
                self.status_code = status_code
                self.text = '{"reloaded": true}'

        def fake_post(url, headers=None, timeout=None):
            calls["url"] = url
            calls["headers"] = headers or {}
            return FakeResponse()

        monkeypatch.setattr("rubricrl.cli.httpx.post", fake_post)
        return calls

    def test_posts_reload_with_token(self, runner, monkeypatch):
        calls = self._fake_post(monkeypatch)
        monkeypatch.setenv("SVC_TOKEN", "sesame")
        result = runner.invoke(
            main,
            ["reload-rubrics", "--url", "http://127.0.0.1:8100/", "--token-env", "SVC_TOKEN"],
        )
        assert result.exit_code == 0, result.output
        assert calls["url"] == "http://127.0.0.1:8100/-/reload"
        assert calls["headers"]["Authorization"] == "Bearer sesame"
        assert "status\t200" in result.output

    def test_non_200_exits_nonzero(self, runner, monkeypatch):
        self._fake_post(monkeypatch, status_code=401)
        result = runner.invoke(main, ["reload-rubrics", "--url", "http://127.0.0.1:8100"])
        assert result.exit_code == 1
