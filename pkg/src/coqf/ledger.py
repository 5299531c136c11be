"""Donation ledger for a single funding round."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class DonationLedger:
    """Per-(donor, project) contribution amounts for one round.

    Missing ``(donor, project)`` entries are zero. Donor and project order is
    the insertion order and is preserved in every derived table.
    """

    donors: tuple[str, ...]
    projects: tuple[str, ...]
    amounts: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.donors)) != len(self.donors):
            raise InvalidInputError("duplicate donor identifier")
        if len(set(self.projects)) != len(self.projects):
            raise InvalidInputError("duplicate project identifier")
        donors, projects = set(self.donors), set(self.projects)
        clean = {}
        for (donor, project), amount in self.amounts.items():
            if donor not in donors:
                raise InvalidInputError(f"unknown donor {donor!r}")
            if project not in projects:
                raise InvalidInputError(f"unknown project {project!r}")
            amount = float(amount)
            if not math.isfinite(amount) or amount < 0:
                raise InvalidInputError(
                    f"contribution of {donor!r} to {project!r} must be finite and >= 0, got {amount}"
                )
            if amount > 0:
                clean[(donor, project)] = amount
        object.__setattr__(self, "amounts", clean)

    @classmethod
    def from_records(cls, records: Iterable[tuple[str, str, float]], projects=None):
        """Build a ledger from ``(donor, project, amount)`` rows; duplicates are summed."""
        donors: dict[str, None] = {}
        seen_projects: dict[str, None] = dict.fromkeys(projects or ())
        amounts: dict[tuple[str, str], float] = {}
        for donor, project, amount in records:
            amount = float(amount)
            if not math.isfinite(amount) or amount < 0:
                raise InvalidInputError(
                    f"contribution of {donor!r} to {project!r} must be finite and >= 0, got {amount}"
                )
            donors.setdefault(donor)
            seen_projects.setdefault(project)
            amounts[(donor, project)] = amounts.get((donor, project), 0.0) + amount
        return cls(tuple(donors), tuple(seen_projects), amounts)

    def amount(self, donor: str, project: str) -> float:
        return self.amounts.get((donor, project), 0.0)

    def column(self, project: str) -> dict[str, float]:
        """Contributions to ``project`` keyed by donor, in donor order (zeros included)."""
        return {d: self.amounts.get((d, project), 0.0) for d in self.donors}

    def total(self, donor: str) -> float:
        return math.fsum(self.amounts.get((donor, p), 0.0) for p in self.projects)

    def support(self, donor: str) -> frozenset[str]:
        return frozenset(p for p in self.projects if self.amounts.get((donor, p), 0.0) > 0)

    def matrix(self) -> np.ndarray:
        """Donor x project array of amounts."""
        out = np.zeros((len(self.donors), len(self.projects)))
        d_idx = {d: i for i, d in enumerate(self.donors)}
        p_idx = {p: j for j, p in enumerate(self.projects)}
        for (d, p), a in self.amounts.items():
            out[d_idx[d], p_idx[p]] = a
        return out

    def merged(self, other: "DonationLedger") -> "DonationLedger":
        """Union of two ledgers; overlapping entries are summed."""
        rows = [(d, p, a) for (d, p), a in self.amounts.items()]
        rows += [(d, p, a) for (d, p), a in other.amounts.items()]
        projects = list(self.projects) + [p for p in other.projects if p not in self.projects]
        merged = DonationLedger.from_records(rows, projects=projects)
        donors = list(self.donors) + [d for d in other.donors if d not in self.donors]
        return DonationLedger(tuple(donors), merged.projects, merged.amounts)
