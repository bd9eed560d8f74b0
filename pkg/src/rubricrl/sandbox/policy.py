"""Tabular softmax policy over each task's template space, with the closed
form gradient of the clipped surrogate.

The policy stands in for the trained model: one logit per template per
task. Single-decision rollouts make the per-token and per-sequence views
coincide, so the engine's token-level objective applies directly with one
token per rollout.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np

from ..engine import KLEstimator, SurrogateConfig, TokenTerm, kl_penalty, surrogate_objective
from ..errors import InvariantViolation
from .tasks import SyntheticTask, default_initial_logits

_SOFTMAX_TOL = 1e-12


def softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def log_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max()
    return z - math.log(np.exp(z).sum())


class TabularPolicy:
    """Mutable logits per task; sampling and probabilities are derived views."""

    def __init__(self, logits: Mapping[str, Sequence[float]], temperature: float = 1.0):
        if not (temperature > 0):
            raise InvariantViolation("TabularPolicy", "temperature must be > 0")
        self.temperature = float(temperature)
        self._logits: dict[str, np.ndarray] = {}
        for task_id, values in logits.items():
            arr = np.asarray(values, dtype=np.float64).copy()
            if arr.ndim != 1 or arr.size == 0:
                raise InvariantViolation("TabularPolicy", f"logits for {task_id!r} must be a vector")
            if not np.all(np.isfinite(arr)):
                raise InvariantViolation("TabularPolicy", f"logits for {task_id!r} must be finite")
            self._logits[task_id] = arr

    @classmethod
    def from_tasks(
        cls, tasks: Sequence[SyntheticTask], temperature: float = 1.0, preset=default_initial_logits
    ) -> "TabularPolicy":
        return cls({t.task_id: preset(t) for t in tasks}, temperature=temperature)

    def task_ids(self) -> list[str]:
        return list(self._logits)

    def logits_of(self, task_id: str) -> np.ndarray:
        return self._logits[task_id].copy()

    def probs(self, task_id: str) -> np.ndarray:
        p = softmax(self._logits[task_id], self.temperature)
        total = float(p.sum())
        if abs(total - 1.0) > _SOFTMAX_TOL:
            raise InvariantViolation("TabularPolicy", f"softmax sums to {total}")
        return p

    def log_probs(self, task_id: str) -> np.ndarray:
        return log_softmax(self._logits[task_id], self.temperature)

    def sample(self, task_id: str, n: int, rng: np.random.Generator) -> np.ndarray:
        p = self.probs(task_id)
        return rng.choice(len(p), size=n, p=p)

    def update(self, task_id: str, delta: np.ndarray) -> None:
        self._logits[task_id] = self._logits[task_id] + np.asarray(delta, dtype=np.float64)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self._logits.values())

    def mass_on(self, task_id: str, indices: Sequence[int]) -> float:
        p = self.probs(task_id)
        return float(p[list(indices)].sum())

    def copy(self) -> "TabularPolicy":
        return TabularPolicy(
            {k: v.copy() for k, v in self._logits.items()}, temperature=self.temperature
        )


def rollout_group(
    policy: TabularPolicy, task: SyntheticTask, group_size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Sample a group of template indices with their old-policy log-probs."""
    if group_size < 2:
        raise InvariantViolation("TabularPolicy", "group size must be >= 2")
    indices = policy.sample(task.task_id, group_size, rng)
    logp = policy.log_probs(task.task_id)
    return indices, logp[indices]


# Surrogate value and gradient for single-decision rollouts ------------------


def _validate_objective_inputs(
    logits: np.ndarray, old_logits: np.ndarray, ref_logits: np.ndarray,
    sampled: Sequence[int], advantages: Sequence[float],
) -> None:
    n = len(logits)
    if len(old_logits) != n or len(ref_logits) != n:
        raise InvariantViolation("TabularPolicy", "logit vectors must share one support")
    if len(sampled) != len(advantages):
        raise InvariantViolation("TabularPolicy", "sampled and advantages must be equal length")
    for a in sampled:
        if not (0 <= a < n):
            raise InvariantViolation("TabularPolicy", f"sampled index {a} outside support")


def objective_value(
    logits: Sequence[float],
    old_logits: Sequence[float],
    ref_logits: Sequence[float],
    sampled: Sequence[int],
    advantages: Sequence[float],
    temperature: float,
    cfg: SurrogateConfig,
) -> float:
    """Surrogate objective of a sampled group, one decision per rollout."""
    z = np.asarray(logits, dtype=np.float64)
    z_old = np.asarray(old_logits, dtype=np.float64)
    z_ref = np.asarray(ref_logits, dtype=np.float64)
    _validate_objective_inputs(z, z_old, z_ref, sampled, advantages)
    logp_new = log_softmax(z, temperature)
    logp_old = log_softmax(z_old, temperature)
    p_new = softmax(z, temperature)
    p_ref = softmax(z_ref, temperature)
    rollouts = []
    if cfg.kl_estimator is KLEstimator.EXACT_CATEGORICAL:
        kl_shared = kl_penalty(p_new.tolist(), p_ref.tolist(), cfg)
        kls = [kl_shared] * len(sampled)
    else:
        kls = [
            kl_penalty(p_new.tolist(), p_ref.tolist(), cfg, sampled_index=int(a))
            for a in sampled
        ]
    for a, kl in zip(sampled, kls):
        rollouts.append([TokenTerm(float(logp_new[a]), float(logp_old[a]), kl)])
    return surrogate_objective(rollouts, list(advantages), cfg)


def objective_gradient(
    logits: Sequence[float],
    old_logits: Sequence[float],
    ref_logits: Sequence[float],
    sampled: Sequence[int],
    advantages: Sequence[float],
    temperature: float,
    cfg: SurrogateConfig,
) -> np.ndarray:
    """Closed-form gradient of objective_value w.r.t. logits.

    Per rollout, the clipped term contributes A * d(rho)/dz when the min
    picks the unclipped branch and zero otherwise; the KL penalty
    contributes -beta times the estimator's gradient.
    """
    z = np.asarray(logits, dtype=np.float64)
    z_old = np.asarray(old_logits, dtype=np.float64)
    z_ref = np.asarray(ref_logits, dtype=np.float64)
    _validate_objective_inputs(z, z_old, z_ref, sampled, advantages)
    n = z.size
    t = temperature
    p = softmax(z, t)
    p_old = softmax(z_old, t)
    p_ref = softmax(z_ref, t)
    grad = np.zeros(n, dtype=np.float64)
    g = len(sampled)

    exact_kl_grad = None
    if cfg.kl_beta > 0 and cfg.kl_estimator is KLEstimator.EXACT_CATEGORICAL:
        # Probabilities can underflow to exact 0 when logits blow up; the
        # resulting nan reaches the trainer's divergence check, so the
        # intermediate warning is noise.
        with np.errstate(divide="ignore", invalid="ignore"):
            log_ratio = np.log(p / p_ref)
            kl = float(np.dot(p, log_ratio))
            # dKL/dz_j = (1/T) p_j (log(p_j/ref_j) - KL)
            exact_kl_grad = p * (log_ratio - kl) / t

    for a, adv in zip(sampled, advantages):
        a = int(a)
        rho = p[a] / p_old[a]
        clipped_rho = min(max(rho, 1.0 - cfg.clip_epsilon), 1.0 + cfg.clip_epsilon)
        if rho * adv <= clipped_rho * adv:
            # d rho / dz_j = rho * (1/T)(delta_aj - p_j)
            dlog = -p / t
            dlog[a] += 1.0 / t
            grad += adv * rho * dlog
        if cfg.kl_beta > 0:
            if exact_kl_grad is not None:
                grad -= cfg.kl_beta * exact_kl_grad
            else:
                r = p_ref[a] / p[a]
                dlog = -p / t
                dlog[a] += 1.0 / t
                # d k3 / dz_j = -(r - 1) * dlogpi_a/dz_j
                grad -= cfg.kl_beta * (-(r - 1.0) * dlog)
    return grad / g
