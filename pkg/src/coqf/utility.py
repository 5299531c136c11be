"""Prosocial log-utility populations and welfare measures.

Every agent values funding F as ``beta_i * ln(F + 1)``. Agent i decides using
the sympathy-weighted sum ``A_i * ln(F + 1)`` with ``A_i = sum_j alpha_ij beta_j``,
while welfare counts only personal utilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePopulationError, InvalidInputError

DEFAULT_GROUP_MEANS = (0.0, 0.25, 0.5, 0.75, 1.0)
MAX_REJECTION_ROUNDS = 1_000_000


@dataclass(frozen=True)
class SimulationParams:
    n: int = 25
    group_count: int = 5
    group_size: int = 5
    budget: float = 1.0
    in_group_share: float = 4 / 24
    sigma2: float = 0.05
    group_means: tuple[float, ...] = DEFAULT_GROUP_MEANS
    trials: int = 50
    seed: int | None = 0

    def __post_init__(self):
        if self.n != self.group_count * self.group_size:
            raise InvalidInputError("n must equal group_count * group_size")
        if len(self.group_means) != self.group_count:
            raise InvalidInputError("need one mean per group")
        if self.budget < 0:
            raise InvalidInputError("budget must be nonnegative")
        if not 0 <= self.in_group_share <= 1:
            raise InvalidInputError("in_group_share must lie in [0, 1]")
        if self.sigma2 <= 0:
            raise InvalidInputError("sigma2 must be positive")

    def group_of(self) -> np.ndarray:
        return np.arange(self.n) // self.group_size


def build_sympathy_matrix(params: SimulationParams, group_of=None) -> np.ndarray:
    """Sympathy matrix with unit diagonal and off-diagonal row sums equal to the budget.

    A share ``z`` of the budget is spread evenly over the agent's own group and
    the rest evenly over everyone else.
    """
    group_of = params.group_of() if group_of is None else np.asarray(group_of)
    n, B, z = params.n, params.budget, params.in_group_share
    same = group_of[:, None] == group_of[None, :]
    inside = z * B / (params.group_size - 1) if params.group_size > 1 else 0.0
    outside = (1 - z) * B / (n - params.group_size) if n > params.group_size else 0.0
    alpha = np.where(same, inside, outside)
    np.fill_diagonal(alpha, 1.0)
    return alpha


def sample_truncated_normal(rng: np.random.Generator, mean: float, sigma: float, size: int,
                            low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """Rejection-sample Normal(mean, sigma) restricted to ``[low, high]``."""
    out = np.empty(size)
    filled = 0
    for _ in range(MAX_REJECTION_ROUNDS):
        if filled == size:
            return out
        draws = rng.normal(mean, sigma, size=size - filled)
        keep = draws[(draws >= low) & (draws <= high)]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    raise RuntimeError(f"rejection sampler exhausted for mean={mean}, sigma={sigma}")


def sample_betas(params: SimulationParams, rng: np.random.Generator, group_of=None) -> np.ndarray:
    group_of = params.group_of() if group_of is None else np.asarray(group_of)
    sigma = math.sqrt(params.sigma2)
    betas = np.empty(params.n)
    for g, mean in enumerate(params.group_means):
        idx = np.flatnonzero(group_of == g)
        betas[idx] = sample_truncated_normal(rng, mean, sigma, idx.size)
    return betas


def personal_utility(i: int, F: float, betas) -> float:
    return float(betas[i]) * math.log1p(F)


def sympathy_weights(alpha, betas) -> np.ndarray:
    """A_i = sum_j alpha_ij beta_j, the slope of agent i's decision utility in ln(F + 1)."""
    return np.asarray(alpha, dtype=float) @ np.asarray(betas, dtype=float)


def prosocial_utility(i: int, F: float, alpha, betas) -> float:
    return float(sympathy_weights(alpha, betas)[i]) * math.log1p(F)


def usw(F: float, betas) -> float:
    return math.fsum(betas) * math.log1p(F) - F


def optimal_funding(betas) -> float:
    return max(0.0, math.fsum(betas) - 1.0)


def approximation_ratio(F_mech: float, betas) -> float:
    F_star = optimal_funding(betas)
    if F_star <= 0:
        raise DegeneratePopulationError("welfare optimum is zero; ratio undefined")
    return usw(F_mech, betas) / usw(F_star, betas)
