"""Simulation sweeps over prosociality settings, plus the demonstration probes."""

from __future__ import annotations

import itertools
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .allocation import coqf_subsidy, coqf_v1_subsidy, qf_subsidy
from .equilibrium import (
    SolverOptions,
    coqf_equilibrium_numeric,
    direct_equilibrium,
    qf_equilibrium_closed_form,
    qf_equilibrium_numeric,
)
from .errors import DegeneratePopulationError, InvalidInputError, SweepError
from .grouping import GroupAssignment, projects_as_groups, signature_groups
from .ledger import DonationLedger
from .utility import (
    SimulationParams,
    approximation_ratio,
    build_sympathy_matrix,
    optimal_funding,
    sample_betas,
)

log = logging.getLogger(__name__)

MECHANISMS = ("DIRECT", "QF", "CO-QF")
MAX_RESAMPLES = 1000
MAX_EXCLUDED_FRACTION = 0.10


# -- single trials -----------------------------------------------------------

@dataclass(frozen=True)
class TrialOutcome:
    ratios: dict[str, float]
    funding: dict[str, float]
    optimum: float
    resamples: int = 0
    nonconverged: tuple[str, ...] = ()


def utility_groups(params: SimulationParams) -> GroupAssignment:
    """The simulation's own groups as a CO-QF assignment over donors "0".."n-1"."""
    group_of = params.group_of()
    return GroupAssignment({
        f"g{g}": {str(i): 1.0 for i in np.flatnonzero(group_of == g)}
        for g in range(params.group_count)
    })


def run_trial(params: SimulationParams, mechanisms: Sequence[str] = MECHANISMS,
              solver_opts: SolverOptions | None = None, rng=None) -> TrialOutcome:
    rng = np.random.default_rng(params.seed) if rng is None else rng
    alpha = build_sympathy_matrix(params)
    resamples = 0
    betas = sample_betas(params, rng)
    while optimal_funding(betas) <= 0:
        resamples += 1
        if resamples > MAX_RESAMPLES:
            raise DegeneratePopulationError("could not draw a population with a positive optimum")
        betas = sample_betas(params, rng)
    if resamples:
        log.info("resampled betas %d time(s)", resamples)

    ratios, funding, failed = {}, {}, []
    for mech in mechanisms:
        if mech == "DIRECT":
            res = direct_equilibrium(alpha, betas)
        elif mech == "QF":
            res = qf_equilibrium_numeric(alpha, betas, solver_opts)
        elif mech == "QF-CLOSED":
            res = qf_equilibrium_closed_form(alpha, betas)
        elif mech == "CO-QF":
            res = coqf_equilibrium_numeric(alpha, betas, utility_groups(params), solver_opts)
        else:
            raise InvalidInputError(f"no equilibrium solver for mechanism {mech!r}")
        if not res.converged:
            failed.append(mech)
        funding[mech] = res.funding
        ratios[mech] = approximation_ratio(res.funding, betas)
    return TrialOutcome(ratios, funding, optimal_funding(betas), resamples, tuple(failed))


# -- sweeps ------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    budgets: tuple[float, ...] = (0.1, 0.5, 1.0, 1.5, 2.0)
    z_values: tuple[float, ...] = (4 / 24, 1.0)
    sigma2_values: tuple[float, ...] = (0.05, 0.25)
    trials: int = 50
    seed: int = 0
    mechanisms: tuple[str, ...] = MECHANISMS
    n: int = 25
    group_count: int = 5
    group_means: tuple[float, ...] | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if any(b < 0 for b in self.budgets):
            raise InvalidInputError("budgets must be nonnegative")
        if self.trials < 1:
            raise InvalidInputError("trials must be >= 1")
        if self.n % self.group_count:
            raise InvalidInputError("agents must split evenly into groups")

    def params(self, budget, z, sigma2, seed) -> SimulationParams:
        size = self.n // self.group_count
        means = self.group_means
        if means is None:
            means = tuple(np.linspace(0.0, 1.0, self.group_count)) if self.group_count > 1 else (0.5,)
        return SimulationParams(n=self.n, group_count=self.group_count, group_size=size,
                                budget=budget, in_group_share=z, sigma2=sigma2,
                                group_means=tuple(float(m) for m in means),
                                trials=self.trials, seed=seed)


@dataclass(frozen=True)
class SweepCell:
    mechanism: str
    budget: float
    z: float
    sigma2: float
    mean_ratio: float
    stderr: float
    trials: int
    resamples: int
    nonconverged: int


@dataclass(frozen=True)
class SweepResult:
    spec: SweepSpec
    cells: tuple[SweepCell, ...]

    def cell(self, mechanism, budget, z, sigma2) -> SweepCell:
        for c in self.cells:
            if (c.mechanism == mechanism and math.isclose(c.budget, budget)
                    and math.isclose(c.z, z) and math.isclose(c.sigma2, sigma2)):
                return c
        raise KeyError((mechanism, budget, z, sigma2))

    @property
    def nonconverged(self) -> int:
        return sum(c.nonconverged for c in self.cells)


def _float_key(x: float) -> int:
    return struct.unpack("<Q", struct.pack("<d", float(x)))[0]


def trial_seed(master_seed: int, sigma2: float, trial: int) -> int:
    """Population seed shared by every (B, z) cell for this sigma2 and trial.

    Keyed on the sigma2 value rather than its grid position, so extending the
    grid leaves existing cells untouched.
    """
    ss = np.random.SeedSequence(master_seed, spawn_key=(_float_key(sigma2), trial))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _summarise(values: list[float]) -> tuple[float, float]:
    if not values:
        return math.nan, math.nan
    mean = math.fsum(values) / len(values)
    if len(values) < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(len(values)))


def run_sweep(spec: SweepSpec, progress=None) -> SweepResult:
    """Evaluate every (sigma2, B, z) cell over ``spec.trials`` seeded trials.

    Non-convergent solves are dropped from that mechanism's mean and counted;
    a cell losing more than 10% of its trials raises :class:`SweepError`.
    """
    cells = []
    grid = list(itertools.product(spec.sigma2_values, spec.budgets, spec.z_values))
    for k, (sigma2, budget, z) in enumerate(grid):
        ratios = {m: [] for m in spec.mechanisms}
        failed = {m: 0 for m in spec.mechanisms}
        resamples = 0
        for t in range(spec.trials):
            params = spec.params(budget, z, sigma2, trial_seed(spec.seed, sigma2, t))
            out = run_trial(params, spec.mechanisms, spec.solver)
            resamples += out.resamples
            for m in spec.mechanisms:
                if m in out.nonconverged:
                    failed[m] += 1
                else:
                    ratios[m].append(out.ratios[m])
        for m in spec.mechanisms:
            if failed[m] > MAX_EXCLUDED_FRACTION * spec.trials:
                raise SweepError(
                    f"{m} failed to converge in {failed[m]}/{spec.trials} trials "
                    f"(B={budget}, z={z}, sigma2={sigma2})"
                )
            mean, se = _summarise(ratios[m])
            cells.append(SweepCell(m, budget, z, sigma2, mean, se, len(ratios[m]),
                                   resamples, failed[m]))
        if progress is not None:
            progress(k + 1, len(grid))
    return SweepResult(spec, tuple(cells))


# -- Sybil probe -------------------------------------------------------------

def default_honest_ledger() -> DonationLedger:
    projects = [f"P{k}" for k in range(1, 6)]
    rows = [
        ("h1", "P1", 5.0), ("h1", "P2", 2.0),
        ("h2", "P2", 3.0), ("h2", "P3", 1.0),
        ("h3", "P3", 4.0), ("h3", "P4", 4.0), ("h3", "P5", 1.0),
        ("h4", "P1", 1.0), ("h4", "P5", 6.0),
        ("h5", "P4", 2.5),
    ]
    return DonationLedger.from_records(rows, projects=projects)


def decoy_sets(others: Sequence[str], count: int) -> list[tuple[str, ...]]:
    """``count`` distinct subsets of ``others``: nonempty ones first, by size."""
    subsets = [s for r in range(1, len(others) + 1) for s in itertools.combinations(others, r)]
    subsets.append(())
    if count > len(subsets):
        raise InvalidInputError(
            f"{count} colluders cannot get distinct signatures from {len(others)} decoy projects"
        )
    return subsets[:count]


def colluder_ledger(projects: Sequence[str], target: str, count: int, stake: float,
                    decoy_budget: float, shared: bool = False) -> DonationLedger:
    others = [p for p in projects if p != target]
    rows = []
    sets = [()] * count if shared else decoy_sets(others, count)
    for k, decoys in enumerate(sets):
        name = f"sybil{k + 1}"
        rows.append((name, target, stake))
        for p in decoys:
            rows.append((name, p, decoy_budget / len(decoys)))
    return DonationLedger.from_records(rows, projects=projects)


@dataclass(frozen=True)
class SybilReport:
    target: str
    rows: tuple[tuple[str, float, float, float], ...]  # scenario, QF, CO-QF sig, CO-QF projects
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _target_subsidies(ledger: DonationLedger, target: str) -> tuple[float, float, float]:
    col = ledger.column(target)
    if not ledger.donors:
        return 0.0, 0.0, 0.0
    return (qf_subsidy(col), coqf_subsidy(col, signature_groups(ledger)),
            coqf_subsidy(col, projects_as_groups(ledger)))


def sybil_attack_probe(honest_ledger: DonationLedger | None = None, colluder_count: int = 8,
                       target_project: str | None = None, decoy_budget: float = 0.05,
                       stake: float = 10.0, tol: float = 1e-12) -> SybilReport:
    """Colluders give ``stake`` to the target and split ``decoy_budget`` over a
    unique set of other projects, so each lands in its own signature group."""
    honest = honest_ledger or default_honest_ledger()
    target = target_project or honest.projects[0]
    if target not in honest.projects:
        raise InvalidInputError(f"unknown target project {target!r}")
    rows = [("honest", *_target_subsidies(honest, target))]
    checks = {}
    if colluder_count == 0:
        rows.append(("attack", *_target_subsidies(honest, target)))
        checks["no_colluders_matches_baseline"] = rows[0][1:] == rows[1][1:]
        return SybilReport(target, tuple(rows), checks)

    distinct = colluder_ledger(honest.projects, target, colluder_count, stake, decoy_budget)
    shared = colluder_ledger(honest.projects, target, colluder_count, stake, decoy_budget,
                             shared=True)
    rows.append(("attack", *_target_subsidies(honest.merged(distinct), target)))
    rows.append(("colluders", *_target_subsidies(distinct, target)))
    rows.append(("colluders-shared", *_target_subsidies(shared, target)))

    _, qf_c, sig_c, _ = rows[2]
    checks["distinct_signatures_match_qf"] = abs(sig_c - qf_c) <= tol
    checks["shared_signature_zero"] = rows[3][2] == 0.0
    checks["attack_inflates_qf"] = rows[1][1] > rows[0][1]
    return SybilReport(target, tuple(rows), checks)


# -- growth probe ------------------------------------------------------------

@dataclass(frozen=True)
class GrowthReport:
    mechanism: str
    exponent: float  # expected growth exponent of subsidy in x
    rows: tuple[tuple[float, float], ...]  # (x, subsidy or subsidy increment)
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def overlapping_groups() -> GroupAssignment:
    """g = {1, 2}, h = {2, 3}: every connection coefficient equals 2."""
    return GroupAssignment.from_members({"g": ["1", "2"], "h": ["2", "3"]})


def group_growth_probe(mechanism: str = "QF", group_size: int = 3,
                       scale_points: Sequence[float] = (1.0, 4.0), rtol: float = 1e-6) -> GrowthReport:
    """Subsidy as a coordinated group (or, for "QF-INDIVIDUAL", one donor) scales up.

    QF: a group of ``group_size`` all giving x earns (m^2 - m) x, linear.
    CO-QF-V1: the two overlapping groups all giving x earn sqrt-growth.
    QF-INDIVIDUAL: one donor next to fixed others gains 2 sqrt(x) K.
    """
    xs = [float(x) for x in scale_points]
    if not xs or any(x <= 0 for x in xs) or any(b <= a for a, b in zip(xs, xs[1:])):
        raise InvalidInputError("scale points must be positive and increasing")
    mech = mechanism.upper()
    if mech == "QF":
        exponent = 1.0
        values = [qf_subsidy([x] * group_size) for x in xs]
    elif mech == "CO-QF-V1":
        exponent = 0.5
        groups = overlapping_groups()
        values = [coqf_v1_subsidy({d: x for d in groups.donors}, groups) for x in xs]
    elif mech == "QF-INDIVIDUAL":
        exponent = 0.5
        others = [1.0] * max(group_size - 1, 1)
        base = qf_subsidy(others)
        values = [qf_subsidy(others + [x]) - base for x in xs]
    else:
        raise InvalidInputError(f"no growth law for mechanism {mechanism!r}")
    checks = {}
    for x, v in zip(xs[1:], values[1:]):
        want = (x / xs[0]) ** exponent
        got = v / values[0]
        checks[f"ratio@{x:g}/{xs[0]:g}"] = abs(got - want) <= rtol * want
    return GrowthReport(mech, exponent, tuple(zip(xs, values)), checks)


# -- two-good skew -----------------------------------------------------------

@dataclass(frozen=True)
class SkewRow:
    n: int
    funding_1: float
    funding_2: float
    subsidy_1: float
    subsidy_2: float
    share_2: float


@dataclass(frozen=True)
class SkewReport:
    rows: tuple[SkewRow, ...]
    checks: dict[str, bool]

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def skew_population(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Agents 1, 2 like good 1, agent 3 likes good 2, agents 4..n care only about agent 3."""
    if n < 3:
        raise InvalidInputError("the skew construction needs at least 3 agents")
    alpha = np.eye(n)
    alpha[3:, 2] = 1.0
    beta_1 = np.zeros(n)
    beta_1[:2] = 1.0
    beta_2 = np.zeros(n)
    beta_2[2] = 1.0
    return alpha, beta_1, beta_2


def skew_demo(agent_counts: Iterable[int] = (3, 4, 5, 10, 20, 50, 100), pool: float = 1.0,
              threshold: float = 2 / 3) -> SkewReport:
    """Per-good QF equilibria, then the pool split by normalised raw subsidy."""
    rows = []
    for n in agent_counts:
        alpha, b1, b2 = skew_population(n)
        e1 = qf_equilibrium_closed_form(alpha, b1)
        e2 = qf_equilibrium_closed_form(alpha, b2)
        s1 = qf_subsidy(e1.contributions)
        s2 = qf_subsidy(e2.contributions)
        total = s1 + s2
        share = s2 / total if total > 0 else 0.0
        rows.append(SkewRow(n, e1.funding, e2.funding, s1 * pool / total if total else 0.0,
                            s2 * pool / total if total else 0.0, share))
    shares = [r.share_2 for r in rows]
    checks = {
        "share_increasing": all(b > a for a, b in zip(shares, shares[1:])),
        "large_n_exceeds_threshold": all(r.share_2 > threshold for r in rows if r.n >= 50),
        "pool_conserved": all(math.isclose(r.subsidy_1 + r.subsidy_2, pool) for r in rows),
    }
    if rows and rows[0].n == 3:
        checks["no_bystanders_favours_good_1"] = rows[0].subsidy_1 > rows[0].subsidy_2
    return SkewReport(tuple(rows), checks)
