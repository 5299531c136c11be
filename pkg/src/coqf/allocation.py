"""Subsidy formulas and the round-level allocation pipeline.

Raw subsidies come from one of the matching formulas, are normalised to the
matching pool, optionally capped per project, and finally rounded to cents.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, InvalidInputError
from .grouping import GroupAssignment, connection_matrix
from .ledger import DonationLedger

CENT = Decimal("0.01")
HYBRID_WEIGHTS = (0.25, 0.5, 0.75)
ZERO_SUBSIDY = "zero_subsidy"


class Mechanism(str, enum.Enum):
    QF = "QF"
    COQF = "CO-QF"
    COQF_V1 = "CO-QF-V1"
    DIRECT = "DIRECT"
    HYBRID = "HYBRID"

    @classmethod
    def parse(cls, value) -> "Mechanism":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigError(f"unknown mechanism {value!r}") from None


def _as_contributions(contributions) -> np.ndarray:
    c = np.asarray(list(contributions.values()) if isinstance(contributions, Mapping)
                   else list(contributions), dtype=float)
    if c.size and (not np.all(np.isfinite(c)) or np.any(c < 0)):
        raise InvalidInputError("contributions must be finite and nonnegative")
    return c


def qf_subsidy(contributions) -> float:
    """Sum of sqrt(c_i * c_j) over ordered pairs i != j."""
    c = _as_contributions(contributions)
    c = c[c > 0]
    if c.size < 2:
        return 0.0
    terms = np.sqrt(np.multiply.outer(c, c))
    np.fill_diagonal(terms, 0.0)
    return math.fsum(terms.ravel())


def qf_funding(contributions) -> float:
    c = _as_contributions(contributions)
    return math.fsum(c) + qf_subsidy(c)


def direct_total(contributions) -> float:
    return math.fsum(_as_contributions(contributions))


def _column(contributions, groups: GroupAssignment):
    """Contribution vector aligned with a donor order covering ``groups``."""
    if isinstance(contributions, Mapping):
        donors = list(contributions)
        c = _as_contributions(contributions)
    else:
        donors = list(groups.donors)
        c = _as_contributions(contributions)
        if c.size != len(donors):
            raise InvalidInputError(
                f"{c.size} contributions given for {len(donors)} grouped donors"
            )
    return donors, c


def coqf_pair_sums(cw: np.ndarray, member: np.ndarray) -> np.ndarray:
    """M[g, h] = sum of c_i * w_{i,g} over donors in g but not in h."""
    return cw.T @ (~member).astype(float)


def coqf_subsidy(contributions, groups: GroupAssignment) -> float:
    """Connection-oriented matching subsidy for one project.

    ``contributions`` is a ``{donor: amount}`` mapping (donors outside every
    group add nothing to any pair), or a sequence aligned with ``groups.donors``.
    """
    donors, c = _column(contributions, groups)
    if not groups.groups:
        return 0.0
    member, weight = groups.arrays(donors)
    m = coqf_pair_sums(c[:, None] * weight, member)
    return math.fsum(np.sqrt(m * m.T).ravel())


def coqf_v1_subsidy(contributions, groups: GroupAssignment) -> float:
    """Subsidy of the first CO-QF design.

    Each ordered pair of distinct groups (g, h) adds
    sqrt(sum_{i in g} c_i^(1/k_ih) / |T_i| * sum_{j in h} c_j^(1/k_jg) / |T_j|).
    """
    donors, c = _column(contributions, groups)
    member, _ = groups.arrays(donors)
    t_size = member.sum(axis=1)
    orphans = [d for d, ci, t in zip(donors, c, t_size) if ci > 0 and t == 0]
    if orphans:
        raise InvalidInputError(f"contributing donors in no group: {orphans}")
    if member.shape[1] < 2:
        return 0.0
    k = connection_matrix(member)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(member.any(axis=1)[:, None], c[:, None] ** (1.0 / k) / t_size[:, None], 0.0)
    x = member.T.astype(float) @ v  # x[g, h] = sum over i in g of v[i, h]
    terms = np.sqrt(x * x.T)
    np.fill_diagonal(terms, 0.0)
    return math.fsum(terms.ravel())


def hybrid_subsidy(qf_raw: float, coqf_raw: float, hybrid_weight: float) -> float:
    """Blend raw subsidies; ``hybrid_weight`` is the CO-QF share."""
    if hybrid_weight not in HYBRID_WEIGHTS:
        raise ConfigError(f"hybrid_weight must be one of {HYBRID_WEIGHTS}, got {hybrid_weight}")
    if qf_raw < 0 or coqf_raw < 0:
        raise InvalidInputError("raw subsidies must be nonnegative")
    return hybrid_weight * coqf_raw + (1.0 - hybrid_weight) * qf_raw


def normalize_to_pool(raw: Sequence[float], pool: float) -> tuple[list[float], bool]:
    """Scale raw subsidies to sum to ``pool``.

    Returns ``(amounts, zero_flag)``; when every raw subsidy is zero the
    amounts are all zero and the flag is set.
    """
    if pool < 0:
        raise InvalidInputError("pool must be nonnegative")
    raw = [float(r) for r in raw]
    if any(r < 0 for r in raw):
        raise InvalidInputError("raw subsidies must be nonnegative")
    total = math.fsum(raw)
    if total <= 0:
        return [0.0] * len(raw), True
    return [r * pool / total for r in raw], False


def apply_matching_cap(normalized: Sequence[float], pool: float, cap_fraction: float,
                       shares: Sequence[float] | None = None) -> tuple[list[float], float]:
    """Clamp projects at ``cap_fraction * pool`` and water-fill the excess.

    Excess is handed to projects strictly below the cap in proportion to
    ``shares`` (default: the normalized amounts themselves), repeating until
    nothing exceeds the cap. Excess nobody can absorb is the returned remainder.
    """
    if not 0 < cap_fraction <= 1:
        raise ConfigError(f"cap_fraction must lie in (0, 1], got {cap_fraction}")
    cap = cap_fraction * pool
    x = [float(v) for v in normalized]
    w = list(x if shares is None else shares)
    capped = [False] * len(x)
    # at most one new project is pinned per pass
    for _ in range(len(x) + 1):
        over = [i for i, v in enumerate(x) if v > cap]
        if not over:
            break
        excess = math.fsum(x[i] - cap for i in over)
        for i in over:
            x[i] = cap
            capped[i] = True
        open_ = [i for i, v in enumerate(x) if not capped[i] and v < cap and w[i] > 0]
        weight = math.fsum(w[i] for i in open_)
        if weight <= 0:
            break
        for i in open_:
            x[i] += excess * w[i] / weight
    return x, max(0.0, pool - math.fsum(x))


def largest_remainder(values: Sequence[float], total_units: int,
                      ceiling: int | None = None) -> list[int]:
    """Round nonnegative ``values`` to integers summing to ``total_units``.

    Floors everything, then hands the missing units one each to the largest
    fractional parts (ties to the lower index), never lifting an entry above
    ``ceiling``. Units that cannot be placed are simply not handed out.
    """
    out = [math.floor(v) for v in values]
    if ceiling is not None:
        out = [min(v, ceiling) for v in out]
    order = sorted(range(len(values)), key=lambda i: (out[i] - values[i], i))
    missing = total_units - sum(out)
    for i in order:
        if missing <= 0:
            break
        if ceiling is not None and out[i] >= ceiling:
            continue
        out[i] += 1
        missing -= 1
    return out


@dataclass(frozen=True)
class RoundConfig:
    matching_pool: float
    mechanism: Mechanism = Mechanism.QF
    cap_fraction: float | None = None
    hybrid_weight: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mechanism", Mechanism.parse(self.mechanism))
        if not math.isfinite(self.matching_pool) or self.matching_pool < 0:
            raise ConfigError("matching_pool must be a nonnegative amount")
        if self.cap_fraction is not None and not 0 < self.cap_fraction <= 1:
            raise ConfigError(f"cap_fraction must lie in (0, 1], got {self.cap_fraction}")
        if (self.hybrid_weight is not None) != (self.mechanism is Mechanism.HYBRID):
            raise ConfigError("hybrid_weight is required for HYBRID and only for HYBRID")
        if self.hybrid_weight is not None and self.hybrid_weight not in HYBRID_WEIGHTS:
            raise ConfigError(f"hybrid_weight must be one of {HYBRID_WEIGHTS}")


@dataclass(frozen=True)
class ProjectAllocation:
    project: str
    direct_total: Decimal
    raw_subsidy: float
    normalized_subsidy: float
    capped_subsidy: Decimal
    payout: Decimal


@dataclass(frozen=True)
class AllocationResult:
    mechanism: Mechanism
    matching_pool: Decimal
    projects: tuple[ProjectAllocation, ...]
    unallocated_remainder: Decimal
    flags: tuple[str, ...] = ()

    def by_project(self) -> dict[str, ProjectAllocation]:
        return {p.project: p for p in self.projects}


def to_cents(amount: float) -> Decimal:
    return Decimal(repr(float(amount))).quantize(CENT, rounding=ROUND_HALF_EVEN)


def raw_subsidies(ledger: DonationLedger, config: RoundConfig,
                  groups: GroupAssignment | None = None) -> list[float]:
    mech = config.mechanism
    if mech in (Mechanism.COQF, Mechanism.COQF_V1, Mechanism.HYBRID) and groups is None:
        raise ConfigError(f"{mech.value} needs a group assignment")
    out = []
    for p in ledger.projects:
        col = ledger.column(p)
        if mech is Mechanism.QF:
            out.append(qf_subsidy(col))
        elif mech is Mechanism.COQF:
            out.append(coqf_subsidy(col, groups))
        elif mech is Mechanism.COQF_V1:
            out.append(coqf_v1_subsidy(col, groups))
        elif mech is Mechanism.DIRECT:
            out.append(0.0)
        elif mech is Mechanism.HYBRID:
            out.append(hybrid_subsidy(qf_subsidy(col), coqf_subsidy(col, groups),
                                      config.hybrid_weight))
        else:  # pragma: no cover - enum is closed
            raise ConfigError(f"unknown mechanism {mech!r}")
    return out


def allocate_round(ledger: DonationLedger, config: RoundConfig,
                   groups: GroupAssignment | None = None) -> AllocationResult:
    """Run one round: raw subsidy -> pool normalisation -> cap -> cents."""
    raw = raw_subsidies(ledger, config, groups)
    pool = config.matching_pool
    pool_cents = int(to_cents(pool) * 100)
    flags = []
    normalized, zero = normalize_to_pool(raw, pool)
    if zero:
        flags.append(ZERO_SUBSIDY)
    if config.cap_fraction is not None and not zero:
        capped, _ = apply_matching_cap(normalized, pool, config.cap_fraction, shares=raw)
    else:
        capped = list(normalized)

    if zero:
        cents = [0] * len(capped)
    else:
        target = min(pool_cents, round(math.fsum(capped) * 100))
        ceiling = None
        if config.cap_fraction is not None:
            ceiling = math.floor(config.cap_fraction * pool * 100 + 1e-6)
        cents = largest_remainder([v * 100 for v in capped], target, ceiling)
    remainder_cents = pool_cents - sum(cents)

    rows = []
    for p, r, n, cc in zip(ledger.projects, raw, normalized, cents):
        direct = to_cents(direct_total(ledger.column(p)))
        sub = (Decimal(cc) / 100).quantize(CENT)
        rows.append(ProjectAllocation(p, direct, r, n, sub, direct + sub))
    return AllocationResult(config.mechanism, (Decimal(pool_cents) / 100).quantize(CENT),
                            tuple(rows), (Decimal(remainder_cents) / 100).quantize(CENT),
                            tuple(flags))


def coqv_tally(voice_credits, mechanism="QF", groups: GroupAssignment | None = None) -> float:
    """Effective votes: the square root of the unnormalised funding total."""
    mech = Mechanism.parse(mechanism)
    if isinstance(voice_credits, Mapping):
        credits = voice_credits
    else:
        credits = list(voice_credits)
    direct = direct_total(credits)
    if mech is Mechanism.QF:
        subsidy = qf_subsidy(credits)
    elif mech is Mechanism.COQF:
        subsidy = coqf_subsidy(credits, _groups_for(credits, groups))
    elif mech is Mechanism.COQF_V1:
        subsidy = coqf_v1_subsidy(credits, _groups_for(credits, groups))
    else:
        raise ConfigError(f"vote tally supports QF, CO-QF and CO-QF-V1, not {mech.value}")
    return math.sqrt(direct + subsidy)


def _groups_for(credits, groups):
    if groups is None:
        raise ConfigError("CO-QF tallies need a group assignment")
    return groups
