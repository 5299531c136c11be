"""Nash equilibria of single-good funding games with prosocial log utilities.

Agent i picks c_i >= 0 to maximise ``A_i * ln(F(c) + 1) - c_i`` where ``F`` is
the mechanism's total funding. QF and CO-QF are solved by damped simultaneous
best response; each best response is a bisection on the sign of the
first-order condition, which is monotone because F is concave and increasing
in each agent's own contribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .allocation import coqf_subsidy, qf_funding
from .grouping import GroupAssignment
from .utility import sympathy_weights


@dataclass(frozen=True)
class SolverOptions:
    damping: float | None = None  # None: the model's default
    tol: float = 1e-9
    max_iter: int = 10_000
    bracket_width: float = 1e-12
    lower_probe: float = 1e-15
    c_max: float | None = None  # default 10 * (sum A)^2
    extrapolate: bool = True  # jump along steady drifts to the boundary


@dataclass(frozen=True)
class EquilibriumResult:
    contributions: np.ndarray
    funding: float
    mechanism: str
    converged: bool
    iterations: int
    residual: float


def direct_equilibrium(alpha, betas) -> EquilibriumResult:
    """Only the agent with the largest A_i gives, up to A_i - 1."""
    A = sympathy_weights(alpha, betas)
    c = np.zeros(A.size)
    if A.size:
        m = int(np.argmax(A))  # first maximum on ties
        c[m] = max(0.0, A[m] - 1.0)
    return EquilibriumResult(c, float(c.sum()), "DIRECT", True, 0, 0.0)


def qf_equilibrium_closed_form(alpha, betas) -> EquilibriumResult:
    """QF equilibrium from the first-order conditions, specialised to log utilities.

    With u'_i = A_i / (F + 1), each condition gives sqrt(c_i) = S A_i / (F + 1)
    with S = sum_j sqrt(c_j) = sqrt(F); summing yields F = sum A - 1.
    """
    A = sympathy_weights(alpha, betas)
    total = math.fsum(A)
    if total <= 1:
        return EquilibriumResult(np.zeros(A.size), 0.0, "QF", True, 0, 0.0)
    F = total - 1.0
    S = math.sqrt(F)
    c = (S * A / (F + 1.0)) ** 2
    return EquilibriumResult(c, F, "QF", True, 0, 0.0)


class QFModel:
    """QF funding seen by each agent while the others stay fixed."""

    name = "QF"
    default_damping = 0.5

    def __init__(self, n: int):
        self.others = 1.0 - np.eye(n)

    def funding(self, c: np.ndarray) -> float:
        return qf_funding(c)

    def best_responses(self, A, c, lower, c_max, width, steps):
        return _kernels.qf_best_responses(A, c, lower, c_max, width, steps)

    def deviations(self, c: np.ndarray, x: np.ndarray):
        """Funding, and its slope in x_i, when each agent i alone switches to x_i."""
        k = self.others @ np.sqrt(c)
        rx = np.sqrt(x)
        total = rx + k
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(rx > 0, total / rx, np.inf)
        return total * total, slope


class COQFModel:
    """CO-QF funding (direct sum plus unnormalised subsidy) for one good.

    ``deviations`` is a plain numpy evaluation kept apart from the compiled
    best-response kernel so equilibrium checks do not reuse solver code.
    """

    name = "CO-QF"

    def __init__(self, groups: GroupAssignment, donors):
        self.groups = groups
        self.donors = list(donors)
        member, weight = groups.arrays(self.donors)
        n, G = member.shape
        # t[i, g*G + h] = w_ig if i is outside h
        self.t = (weight[:, :, None] * (~member)[:, None, :]).reshape(n, G * G)
        self.swap = np.arange(G * G).reshape(G, G).T.ravel()
        self.others = 1.0 - np.eye(n)
        # m perfect substitutes reacting together overshoot by a factor ~m
        largest = int(member.sum(axis=0).max(initial=1))
        self.default_damping = 1.0 / (1.0 + max(largest, 1))

    def funding(self, c: np.ndarray) -> float:
        return math.fsum(c) + coqf_subsidy(dict(zip(self.donors, c)), self.groups)

    def best_responses(self, A, c, lower, c_max, width, steps):
        return _kernels.coqf_best_responses(A, c, self.t, self.swap, lower, c_max, width, steps)

    def deviations(self, c: np.ndarray, x: np.ndarray):
        rest = self.others * c[None, :]
        m = rest @ self.t + x[:, None] * self.t
        mt = m[:, self.swap]
        prod = m * mt
        root = np.sqrt(prod)
        with np.errstate(divide="ignore", invalid="ignore"):
            dterm = np.where(prod > 0, mt * self.t / root, 0.0)
        F = rest.sum(axis=1) + x + root.sum(axis=1)
        return F, 1.0 + dterm.sum(axis=1)


def best_responses(model, A: np.ndarray, c: np.ndarray, opts: SolverOptions, c_max: float):
    """Every agent's best reply to ``c`` by bisection on the first-order condition."""
    steps = max(1, math.ceil(math.log2((c_max - opts.lower_probe) / opts.bracket_width)))
    # past ~60 halvings the bracket is at float resolution anyway
    return model.best_responses(A, np.asarray(c, dtype=float), opts.lower_probe, c_max,
                                opts.bracket_width, min(steps, 200))


def solve_best_response(model, alpha, betas, opts: SolverOptions | None = None,
                        start=None) -> EquilibriumResult:
    opts = opts or SolverOptions()
    A = sympathy_weights(alpha, betas)
    n = A.size
    total = math.fsum(A)
    if total <= 0:
        return EquilibriumResult(np.zeros(n), 0.0, model.name, True, 0, 0.0)
    c_max = opts.c_max if opts.c_max is not None else 10.0 * total * total
    damping = opts.damping if opts.damping is not None else model.default_damping
    # the all-zero profile is itself a (degenerate) fixed point, so start inside
    c = A * A / total if start is None else np.asarray(start, dtype=float).copy()
    residual = math.inf
    it = 0
    prev_step = None
    for it in range(1, opts.max_iter + 1):
        br = best_responses(model, A, c, opts, c_max)
        residual = float(np.max(np.abs(br - c)))
        if residual < opts.tol:
            break
        step = damping * (br - c)
        c = c + step
        if opts.extrapolate and prev_step is not None and _is_drift(prev_step, step):
            c = _jump_to_boundary(c, step)
            prev_step = None
        else:
            prev_step = step
    converged = residual < opts.tol
    return EquilibriumResult(c, model.funding(c), model.name, converged, it, residual)


def _is_drift(prev: np.ndarray, step: np.ndarray, rtol: float = 1e-3) -> bool:
    """Two consecutive steps that agree to ``rtol``: the iteration is sliding
    along a flat direction (near-tied substitutes) rather than contracting."""
    norm = float(np.linalg.norm(step))
    return norm > 0 and float(np.linalg.norm(step - prev)) <= rtol * norm


def _jump_to_boundary(c: np.ndarray, step: np.ndarray) -> np.ndarray:
    """Follow ``step`` until the first shrinking contribution reaches zero."""
    shrinking = step < 0
    if not shrinking.any():
        return c
    lam = float(np.min(c[shrinking] / -step[shrinking]))
    return np.maximum(c + lam * step, 0.0)


def qf_equilibrium_numeric(alpha, betas, solver_opts: SolverOptions | None = None) -> EquilibriumResult:
    n = len(betas)
    return solve_best_response(QFModel(n), alpha, betas, solver_opts)


def coqf_equilibrium_numeric(alpha, betas, groups: GroupAssignment,
                             solver_opts: SolverOptions | None = None,
                             donors=None) -> EquilibriumResult:
    """CO-QF equilibrium; agent k is donor ``donors[k]`` (default ``"0".."n-1"``)."""
    n = len(betas)
    donors = [str(i) for i in range(n)] if donors is None else list(donors)
    return solve_best_response(COQFModel(groups, donors), alpha, betas, solver_opts)


def nash_gap(model, alpha, betas, c, points: int = 200, upper: float | None = None) -> float:
    """Largest gain any agent gets from a unilateral deviation on a grid.

    The grid spans ``[0, upper]`` (default twice the largest contribution).
    """
    A = sympathy_weights(alpha, betas)
    c = np.asarray(c, dtype=float)
    if upper is None:
        upper = 2.0 * max(float(c.max(initial=0.0)), 1e-12)
    F0, _ = model.deviations(c, c)
    base = A * np.log1p(F0) - c
    gap = -math.inf
    for x in np.linspace(0.0, upper, points):
        F, _ = model.deviations(c, np.full(c.size, x))
        gap = max(gap, float(np.max(A * np.log1p(F) - x - base)))
    return gap
