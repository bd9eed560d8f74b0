"""Pure numeric core: rubric fractions, reward blending, group-normalized
advantages, and the clipped-surrogate / KL terms used by the sandbox.

Everything here is stateless, side-effect free, and embarrassingly parallel
across groups. Plain floats are used instead of arrays: groups are small
and exactness of the degenerate-case zeros matters more than throughput.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from .errors import (
    EmptyVerdicts,
    GroupTooSmall,
    InvariantViolation,
    MissingRubricReward,
    SupportMismatch,
    UnnormalizedDistribution,
)
from .records import AdvantageGroup

_NORMALIZATION_TOL = 1e-9


class NoRubricPolicy(str, Enum):
    ANSWER_ONLY = "answer_only"
    ERROR = "error"


class KLEstimator(str, Enum):
    EXACT_CATEGORICAL = "exact_categorical"
    K3 = "k3"


@dataclass(frozen=True)
class RewardConfig:
    """Blending weight and degenerate-group guard for reward shaping.

    The blending weight has no published reference value; 0.5 is the
    neutral equal-weighting default and deployments should set it
    deliberately.
    """

    lambda_: float = 0.5
    std_epsilon: float = 1e-8
    no_rubric_policy: NoRubricPolicy = NoRubricPolicy.ANSWER_ONLY

    def __post_init__(self) -> None:
        if not (0.0 <= self.lambda_ <= 1.0):
            raise InvariantViolation("RewardConfig", f"lambda must be in [0,1], got {self.lambda_}")
        if not (self.std_epsilon > 0):
            raise InvariantViolation("RewardConfig", "std_epsilon must be > 0")
        if not isinstance(self.no_rubric_policy, NoRubricPolicy):
            object.__setattr__(self, "no_rubric_policy", NoRubricPolicy(self.no_rubric_policy))


@dataclass(frozen=True)
class SurrogateConfig:
    """Clipping width, KL weight, and KL estimator for the surrogate objective.

    kl_beta 0.01 is the reference training value; clip_epsilon 0.2 is the
    common clipped-policy-gradient default and has no reference value.
    """

    clip_epsilon: float = 0.2
    kl_beta: float = 0.01
    kl_estimator: KLEstimator = KLEstimator.EXACT_CATEGORICAL

    def __post_init__(self) -> None:
        if not (self.clip_epsilon > 0):
            raise InvariantViolation("SurrogateConfig", "clip_epsilon must be > 0")
        if self.kl_beta < 0:
            raise InvariantViolation("SurrogateConfig", "kl_beta must be >= 0")
        if not isinstance(self.kl_estimator, KLEstimator):
            object.__setattr__(self, "kl_estimator", KLEstimator(self.kl_estimator))


def rubric_reward(verdicts: Sequence[bool]) -> float:
    """Fraction of satisfied checkpoints."""
    if len(verdicts) == 0:
        raise EmptyVerdicts("rubric reward needs at least one verdict")
    return sum(bool(v) for v in verdicts) / len(verdicts)


def combine(answer_reward: float, rubric: Optional[float], cfg: RewardConfig) -> float:
    """Blend the binary answer reward with the rubric fraction."""
    if answer_reward not in (0.0, 1.0):
        raise InvariantViolation("RewardConfig", f"answer_reward must be 0 or 1, got {answer_reward}")
    if rubric is None:
        if cfg.no_rubric_policy is NoRubricPolicy.ERROR:
            raise MissingRubricReward("no rubric reward and policy is 'error'")
        return float(answer_reward)
    if not (0.0 <= rubric <= 1.0) or not math.isfinite(rubric):
        raise InvariantViolation("RewardConfig", f"rubric reward must be in [0,1], got {rubric}")
    return cfg.lambda_ * answer_reward + (1.0 - cfg.lambda_) * rubric


def group_advantages(
    rewards: Sequence[float], cfg: RewardConfig, problem_id: str = ""
) -> AdvantageGroup:
    """Z-score rewards within their group using the population std.

    Groups whose std falls below std_epsilon are degenerate: every reward
    is (nearly) identical, so no preference signal exists and advantages
    are exactly zero rather than amplified noise.
    """
    g = len(rewards)
    if g < 2:
        raise GroupTooSmall(f"advantage group needs >= 2 rewards, got {g}")
    values = [float(r) for r in rewards]
    for i, r in enumerate(values):
        if not math.isfinite(r):
            raise InvariantViolation("AdvantageGroup", f"rewards[{i}] must be finite, got {r}")
    mean = sum(values) / g
    pop_std = math.sqrt(sum((r - mean) ** 2 for r in values) / g)
    if pop_std < cfg.std_epsilon:
        advantages = (0.0,) * g
        degenerate = True
    else:
        advantages = tuple((r - mean) / pop_std for r in values)
        degenerate = False
    return AdvantageGroup(
        problem_id=problem_id,
        rewards=tuple(values),
        advantages=advantages,
        degenerate=degenerate,
    )


def importance_ratio(logp_new: float, logp_old: float) -> float:
    """exp(logp_new - logp_old), the per-token policy probability ratio."""
    if not (math.isfinite(logp_new) and math.isfinite(logp_old)):
        raise InvariantViolation("SurrogateConfig", "log-probabilities must be finite")
    return math.exp(logp_new - logp_old)


def clipped_term(ratio: float, advantage: float, cfg: SurrogateConfig) -> float:
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A), the pessimistic bound."""
    if not (math.isfinite(ratio) and ratio > 0):
        raise InvariantViolation("SurrogateConfig", f"ratio must be finite and positive, got {ratio}")
    clipped = min(max(ratio, 1.0 - cfg.clip_epsilon), 1.0 + cfg.clip_epsilon)
    return min(ratio * advantage, clipped * advantage)


def _check_distribution(p: Sequence[float], name: str) -> None:
    total = 0.0
    for v in p:
        if not math.isfinite(v) or v < 0:
            raise UnnormalizedDistribution(f"{name} has invalid probability {v}")
        total += v
    if abs(total - 1.0) > _NORMALIZATION_TOL:
        raise UnnormalizedDistribution(f"{name} sums to {total}, not 1 within {_NORMALIZATION_TOL}")


def kl_penalty(
    dist_new: Sequence[float],
    dist_ref: Sequence[float],
    cfg: SurrogateConfig,
    sampled_index: Optional[int] = None,
) -> float:
    """KL divergence term of the new policy from the reference policy.

    exact_categorical sums p_new * log(p_new / p_ref) over the support.
    k3 is the nonnegative per-sampled-token estimator
    p_ref/p_new - log(p_ref/p_new) - 1 and requires sampled_index.
    """
    if len(dist_new) != len(dist_ref):
        raise SupportMismatch(
            f"distributions differ in support size: {len(dist_new)} vs {len(dist_ref)}"
        )
    _check_distribution(dist_new, "dist_new")
    _check_distribution(dist_ref, "dist_ref")
    if cfg.kl_estimator is KLEstimator.EXACT_CATEGORICAL:
        total = 0.0
        for p, q in zip(dist_new, dist_ref):
            if p == 0.0:
                continue  # 0 * log 0 = 0 by continuity
            if q == 0.0:
                raise SupportMismatch("dist_new places mass where dist_ref has none")
            total += p * math.log(p / q)
        # Tiny negative residue from float rounding on near-identical inputs.
        return max(total, 0.0)
    if sampled_index is None:
        raise InvariantViolation("SurrogateConfig", "k3 estimator requires sampled_index")
    if not (0 <= sampled_index < len(dist_new)):
        raise SupportMismatch(f"sampled_index {sampled_index} outside support")
    p = dist_new[sampled_index]
    q = dist_ref[sampled_index]
    if p == 0.0:
        raise SupportMismatch("sampled token has zero probability under dist_new")
    if q == 0.0:
        raise SupportMismatch("sampled token has zero probability under dist_ref")
    r = q / p
    return r - math.log(r) - 1.0


@dataclass(frozen=True)
class TokenTerm:
    """Per-token inputs to the surrogate: log-probs under the new and old
    policies, plus the precomputed KL term for this token."""

    logp_new: float
    logp_old: float
    kl: float = 0.0

    def __post_init__(self) -> None:
        if not (
            math.isfinite(self.logp_new)
            and math.isfinite(self.logp_old)
            and math.isfinite(self.kl)
        ):
            raise InvariantViolation("TokenTerm", "all token terms must be finite")


def surrogate_objective(
    rollouts: Sequence[Sequence[TokenTerm]],
    advantages: Sequence[float],
    cfg: SurrogateConfig,
) -> float:
    """Token-mean then group-mean of [clipped term - kl_beta * kl].

    The KL penalty is applied per token inside the double sum; the
    advantage is constant across a rollout's tokens.
    """
    g = len(rollouts)
    if g == 0:
        raise GroupTooSmall("surrogate needs at least one rollout")
    if len(advantages) != g:
        raise InvariantViolation(
            "SurrogateConfig", f"advantages length {len(advantages)} != group size {g}"
        )
    total = 0.0
    for rollout, advantage in zip(rollouts, advantages):
        if len(rollout) == 0:
            raise InvariantViolation("SurrogateConfig", "every rollout needs >= 1 token")
        token_sum = 0.0
        for term in rollout:
            ratio = importance_ratio(term.logp_new, term.logp_old)
            token_sum += clipped_term(ratio, advantage, cfg) - cfg.kl_beta * term.kl
        total += token_sum / len(rollout)
    return total / g
