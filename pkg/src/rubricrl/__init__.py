"""Rubric-based reward orchestration for RL trainers.

The package turns sampled reasoning trajectories into rubrics, scores new
trajectories against those rubrics with a generative judge, blends rubric
and answer rewards, and normalizes them into group advantages suitable for
clipped policy-gradient training. A FastAPI service exposes the reward path
to external trainers; a small tabular sandbox exists to study the training
dynamics end to end.
"""

__version__ = "0.1.0"

INTERFACE_VERSION = "1"
