"""Static SVG figures for sandbox training traces.

Rendering is headless (Agg) and deterministic: the SVG hash salt is
pinned and the creation date is stripped, so identical traces produce
identical bytes.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from ..errors import InvariantViolation
from .train import TrainingTrace

matplotlib.rcParams["svg.hashsalt"] = "rubricrl"

# (attribute on TraceStep, axis label)
_PANELS = (
    ("answer_reward", "answer reward"),
    ("rubric_reward", "rubric reward"),
    ("response_length", "response length (tokens)"),
    ("faithful_mass", "faithful mass"),
)


def _panel_grid(title: Optional[str]):
    fig, axes = plt.subplots(2, 2, figsize=(10, 7), sharex=True)
    if title:
        fig.suptitle(title)
    flat = axes.ravel()
    for ax, (_, label) in zip(flat, _PANELS):
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    for ax in flat[2:]:
        ax.set_xlabel("step")
    return fig, flat


def _save_svg(fig, out_path) -> Path:
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    # Date metadata would break byte-for-byte reproducibility.
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_trace(trace: TrainingTrace, out_path, title: Optional[str] = None) -> Path:
    """Render one run's four telemetry series to an SVG file."""
    if len(trace) == 0:
        raise InvariantViolation("TrainingTrace", "cannot plot an empty trace")
    steps = trace.series("step")
    fig, axes = _panel_grid(title)
    for ax, (attr, _) in zip(axes, _PANELS):
        ax.plot(steps, trace.series(attr), linewidth=1.2)
    return _save_svg(fig, out_path)


def plot_comparison(
    traces: Mapping[str, TrainingTrace], out_path, title: Optional[str] = None
) -> Path:
    """Overlay several labeled runs (e.g. one per lambda) panel by panel."""
    if not traces:
        raise InvariantViolation("TrainingTrace", "comparison needs >= 1 trace")
    for label, trace in traces.items():
        if len(trace) == 0:
            raise InvariantViolation("TrainingTrace", f"trace {label!r} is empty")
    fig, axes = _panel_grid(title)
    for ax, (attr, _) in zip(axes, _PANELS):
        for label, trace in traces.items():
            ax.plot(trace.series("step"), trace.series(attr), linewidth=1.2, label=label)
    axes[0].legend(loc="best", fontsize="small")
    return _save_svg(fig, out_path)
