"""Command-line entry points: rubric aggregation, corpus stats, sandbox
training runs with SVG reports, and the HTTP service.

Output on stdout is tab-delimited key/value or table rows so it pipes
cleanly; figures are written as SVG files next to the trace data.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import click
import httpx
import numpy as np

from .engine import KLEstimator, RewardConfig, SurrogateConfig
from .forge import AggregationConfig, RubricStore, compute_stats, run_aggregation, utc_now_iso
from .records import load_corpus, load_rollouts
from .service import ServiceConfig, create_app, gateway_from_toml


@click.group()
def main():
    """Rubric-based reward pipeline: aggregate, score, train, serve."""


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--rollouts", "rollouts_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--judge", "judge_config", required=True, type=click.Path(exists=True, dir_okay=False),
              help="TOML file with a [judge] table (mock or remote).")
@click.option("--min-correct", default=4, show_default=True, type=int)
@click.option("--rollouts-per-problem", default=8, show_default=True, type=int)
@click.option("--min-criteria", default=1, show_default=True, type=int)
@click.option("--max-criteria", default=10, show_default=True, type=int)
@click.option("--max-workers", default=1, show_default=True, type=int)
@click.option("--fixed-timestamp", default=None,
              help="Stamp every rubric set with this ISO timestamp (byte-reproducible builds).")
def aggregate(corpus_path, rollouts_path, out_dir, judge_config, min_correct,
              rollouts_per_problem, min_criteria, max_criteria, max_workers, fixed_timestamp):
    """Distill rubric sets from correct rollouts into a rubric store."""
    corpus = load_corpus(corpus_path)
    rollouts = load_rollouts(rollouts_path)
    cfg = AggregationConfig(
        rollouts_per_problem=rollouts_per_problem,
        min_correct=min_correct,
        min_criteria=min_criteria,
        max_criteria=max_criteria,
    )
    gateway = gateway_from_toml(judge_config)
    store = RubricStore(out_dir)
    now = (lambda: fixed_timestamp) if fixed_timestamp else utc_now_iso
    stats, report = run_aggregation(
        corpus, rollouts, cfg, gateway, store, now=now, max_workers=max_workers
    )
    click.echo(f"built\t{len(report.built)}")
    click.echo(f"resumed\t{len(report.resumed)}")
    click.echo(f"skipped\t{len(report.skipped)}")
    click.echo(f"failed\t{len(report.failures)}")
    for failure in report.failures:
        click.echo(f"failure\t{failure.problem_id}\t{failure.reason}")
    for key, value in stats.to_dict().items():
        click.echo(f"{key}\t{value}")


@main.command()
@click.option("--rubrics", "rubric_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True, dir_okay=False))
def stats(rubric_dir, corpus_path):
    """Coverage and criteria statistics for an existing rubric store."""
    store = RubricStore(rubric_dir)
    corpus = load_corpus(corpus_path)
    result = compute_stats(store, corpus_size=len(corpus))
    for key, value in result.to_dict().items():
        click.echo(f"{key}\t{value}")


@main.group()
def sandbox():
    """Desk-scale training simulator over synthetic tasks."""


def _training_options(command):
    for option in (
        click.option("--steps", default=300, show_default=True, type=int),
        click.option("--learning-rate", default=0.5, show_default=True, type=float),
        click.option("--group-size", default=8, show_default=True, type=int),
        click.option("--kl-beta", default=0.01, show_default=True, type=float),
        click.option("--clip-epsilon", default=0.2, show_default=True, type=float),
        click.option("--kl-estimator", default="exact_categorical", show_default=True,
                     type=click.Choice([e.value for e in KLEstimator])),
    ):
        command = option(command)
    return command


def _run_one(lambda_, steps, learning_rate, group_size, kl_beta, clip_epsilon, kl_estimator, seed):
    from .sandbox import default_task, train

    reward_cfg = RewardConfig(lambda_=lambda_)
    surrogate_cfg = SurrogateConfig(
        clip_epsilon=clip_epsilon, kl_beta=kl_beta, kl_estimator=KLEstimator(kl_estimator)
    )
    return train(
        [default_task()],
        reward_cfg,
        surrogate_cfg,
        steps=steps,
        learning_rate=learning_rate,
        seed=seed,
        group_size=group_size,
    )


def _tail_variance(values, fraction=0.2):
    tail = values[-max(1, int(len(values) * fraction)):]
    return float(np.var(tail))


@sandbox.command("run")
@click.option("--lambda", "lambda_", default=0.5, show_default=True, type=float)
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_training_options
def sandbox_run(lambda_, seed, out_path, steps, learning_rate, group_size, kl_beta,
                clip_epsilon, kl_estimator):
    """Train once and write the per-step trace as JSONL."""
    trace, _ = _run_one(lambda_, steps, learning_rate, group_size, kl_beta, clip_epsilon,
                        kl_estimator, seed)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    trace.write_jsonl(out_path)
    final = trace.steps[-1]
    click.echo(f"trace\t{out_path}")
    click.echo(f"steps\t{len(trace)}")
    click.echo(f"final_answer_reward\t{final.answer_reward}")
    click.echo(f"final_rubric_reward\t{final.rubric_reward}")
    click.echo(f"final_faithful_mass\t{final.faithful_mass}")


@sandbox.command("compare")
@click.option("--lambdas", default="1.0,0.5", show_default=True,
              help="Comma-separated blending weights to compare.")
@click.option("--seeds", default=5, show_default=True, type=int)
@click.option("--out-dir", "out_dir", required=True, type=click.Path(file_okay=False))
@_training_options
def sandbox_compare(lambdas, seeds, out_dir, steps, learning_rate, group_size, kl_beta,
                    clip_epsilon, kl_estimator):
    """Run a lambda sweep across seeds: traces, summary table, SVG overlays."""
    from .sandbox.plots import plot_comparison

    lambda_values = [float(part) for part in lambdas.split(",") if part.strip()]
    if not lambda_values:
        raise click.UsageError("--lambdas needs at least one value")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    header = ("lambda", "seed", "final_faithful_mass", "final_answer_reward",
              "answer_reward_variance_last20")
    rows = []
    for seed in range(seeds):
        traces = {}
        for lam in lambda_values:
            trace, _ = _run_one(lam, steps, learning_rate, group_size, kl_beta, clip_epsilon,
                                kl_estimator, seed)
            trace.write_jsonl(out / f"trace_lambda{lam:g}_seed{seed}.jsonl")
            traces[f"lambda={lam:g}"] = trace
            final = trace.steps[-1]
            rows.append((
                f"{lam:g}",
                str(seed),
                repr(final.faithful_mass),
                repr(final.answer_reward),
                repr(_tail_variance(trace.series("answer_reward"))),
            ))
        plot_comparison(traces, out / f"compare_seed{seed}.svg",
                        title=f"lambda sweep, seed {seed}")

    summary_lines = ["\t".join(header)] + ["\t".join(row) for row in rows]
    (out / "summary.tsv").write_text("\n".join(summary_lines) + "\n", encoding="utf-8")
    for line in summary_lines:
        click.echo(line)
    click.echo(f"summary\t{out / 'summary.tsv'}")
    for seed in range(seeds):
        click.echo(f"figure\t{out / f'compare_seed{seed}.svg'}")


@sandbox.command("plot")
@click.argument("traces", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--label", "labels", multiple=True,
              help="One per trace file; defaults to the file stems.")
@click.option("--title", default=None)
def sandbox_plot(traces, out_path, labels, title):
    """Render one trace (panels) or several (overlay) to a static SVG."""
    from .sandbox.plots import plot_comparison, plot_trace
    from .sandbox.train import TrainingTrace

    if labels and len(labels) != len(traces):
        raise click.UsageError("--label count must match the number of trace files")
    names = list(labels) if labels else [Path(p).stem for p in traces]
    loaded = [TrainingTrace.read_jsonl(p) for p in traces]
    if len(loaded) == 1:
        written = plot_trace(loaded[0], out_path, title=title or names[0])
    else:
        written = plot_comparison(dict(zip(names, loaded)), out_path, title=title)
    click.echo(f"figure\t{written}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--log-level", default="info", show_default=True)
def serve(config_path, host, log_level):
    """Run the scoring service with the given TOML configuration."""
    import uvicorn

    logging.basicConfig(level=logging.INFO, format="%(message)s")
    config = ServiceConfig.from_toml(config_path)
    app = create_app(config)
    uvicorn.run(app, host=host, port=config.port, log_level=log_level)


@main.command("reload-rubrics")
@click.option("--url", required=True, help="Service base URL, e.g. http://127.0.0.1:8100")
@click.option("--token-env", default="", help="Env var holding the shared auth token.")
@click.option("--timeout", default=30.0, show_default=True, type=float)
def reload_rubrics(url, token_env, timeout):
    """Ask a running service to re-read its corpus and rubric store."""
    headers = {}
    if token_env:
        token = os.environ.get(token_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
    response = httpx.post(f"{url.rstrip('/')}/-/reload", headers=headers, timeout=timeout)
    click.echo(f"status\t{response.status_code}")
    click.echo(response.text)
    if response.status_code != 200:
        raise SystemExit(1)
