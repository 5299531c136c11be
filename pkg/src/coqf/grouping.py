"""Social-group assignments (G, w) and the strategies that build them.

A :class:`GroupAssignment` maps group names to ``{donor: weight}``. Every donor
that appears in at least one group has weights summing to 1.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import GroupFileError, InvalidInputError
from .ledger import DonationLedger

WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class GroupAssignment:
    groups: Mapping[str, Mapping[str, float]]
    # Donors deliberately left out of every group (e.g. zero total donations).
    flags: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        frozen = {}
        sums: dict[str, list[float]] = {}
        for name, members in self.groups.items():
            clean = {}
            for donor, weight in members.items():
                weight = float(weight)
                if not math.isfinite(weight) or weight < 0 or weight > 1 + WEIGHT_TOL:
                    raise InvalidInputError(
                        f"weight of {donor!r} in group {name!r} must lie in [0, 1], got {weight}"
                    )
                clean[donor] = weight
                sums.setdefault(donor, []).append(weight)
            frozen[name] = clean
        for donor, ws in sums.items():
            total = math.fsum(ws)
            if abs(total - 1.0) > WEIGHT_TOL:
                raise InvalidInputError(f"weights of {donor!r} sum to {total}, expected 1")
        object.__setattr__(self, "groups", frozen)

    @classmethod
    def from_members(cls, members: Mapping[str, Iterable[str]], weights=None, flags=()):
        """Build from plain member lists.

        ``weights`` maps ``(donor, group)`` to a weight; when omitted every donor
        splits its weight evenly across the groups containing it.
        """
        sets = {name: list(dict.fromkeys(ms)) for name, ms in members.items()}
        counts: dict[str, int] = {}
        for ms in sets.values():
            for d in ms:
                counts[d] = counts.get(d, 0) + 1
        if weights is not None:
            for (donor, name), _ in weights.items():
                if name not in sets:
                    raise InvalidInputError(f"weight references unknown group {name!r}")
                if donor not in sets[name]:
                    raise InvalidInputError(
                        f"weight references donor {donor!r} outside group {name!r}"
                    )
        groups = {}
        for name, ms in sets.items():
            if weights is None:
                groups[name] = {d: 1.0 / counts[d] for d in ms}
            else:
                groups[name] = {d: weights.get((d, name), 0.0) for d in ms}
        return cls(groups, tuple(flags))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.groups)

    @property
    def donors(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for members in self.groups.values():
            for d in members:
                seen.setdefault(d)
        return tuple(seen)

    def membership(self, donor: str) -> tuple[str, ...]:
        """T(donor): names of the groups containing ``donor``."""
        return tuple(name for name, ms in self.groups.items() if donor in ms)

    def weight(self, donor: str, group: str) -> float:
        return self.groups[group].get(donor, 0.0)

    def arrays(self, donors: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Membership (bool) and weight matrices of shape ``(len(donors), len(groups))``."""
        index = {d: i for i, d in enumerate(donors)}
        member = np.zeros((len(donors), len(self.groups)), dtype=bool)
        weight = np.zeros((len(donors), len(self.groups)))
        for j, ms in enumerate(self.groups.values()):
            for d, w in ms.items():
                i = index.get(d)
                if i is not None:
                    member[i, j] = True
                    weight[i, j] = w
        return member, weight


def singleton_groups(donors: Iterable[str]) -> GroupAssignment:
    """One group per donor, named after the donor, with weight 1."""
    donors = list(donors)
    if not donors:
        raise InvalidInputError("singleton grouping needs at least one donor")
    return GroupAssignment({d: {d: 1.0} for d in donors})


def projects_as_groups(ledger: DonationLedger) -> GroupAssignment:
    """Each project is a group of its donors, weighted by share of the donor's total.

    Donors with a zero total join no group and are listed in ``flags``.
    """
    totals = {d: ledger.total(d) for d in ledger.donors}
    groups = {}
    for p in ledger.projects:
        groups[p] = {
            d: ledger.amount(d, p) / totals[d]
            for d in ledger.donors
            if ledger.amount(d, p) > 0
        }
    excluded = tuple(d for d in ledger.donors if totals[d] <= 0)
    return GroupAssignment(groups, excluded)


def signature_key(support: Iterable[str]) -> str:
    return "{" + ",".join(sorted(support)) + "}"


def signature_groups(ledger: DonationLedger) -> GroupAssignment:
    """Group donors by the exact set of projects they supported."""
    buckets: dict[str, list[str]] = {}
    excluded = []
    for d in ledger.donors:
        support = ledger.support(d)
        if not support:
            excluded.append(d)
            continue
        buckets.setdefault(signature_key(support), []).append(d)
    groups = {key: {d: 1.0 for d in buckets[key]} for key in sorted(buckets)}
    return GroupAssignment(groups, tuple(excluded))


def connection_coefficient(donor: str, group: str, assignment: GroupAssignment) -> int:
    """k(i, h): 2 if some group containing ``donor`` also holds a member of ``group``."""
    own = assignment.membership(donor)
    if not own:
        raise InvalidInputError(f"donor {donor!r} belongs to no group")
    h_members = assignment.groups[group]
    for g in own:
        if any(j in assignment.groups[g] for j in h_members):
            return 2
    return 1


def connection_matrix(member: np.ndarray) -> np.ndarray:
    """Vectorised k(i, h) over a membership matrix; rows without groups get 1."""
    member = member.astype(float)
    overlap = (member.T @ member) > 0  # groups sharing at least one donor
    touches = (member @ overlap) > 0
    return np.where(touches, 2, 1)


# -- groups documents --------------------------------------------------------

def parse_groups_text(text: str, source=None) -> list[dict]:
    """Parse the line-oriented groups format into records.

    ::

        # comment
        name: builders
        alice:0.5
        bob:1
    """
    records: list[dict] = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("name:"):
            name = line[len("name:"):].strip()
            if not name:
                raise GroupFileError("empty group name", lineno, source)
            current = {"name": name, "members": [], "line": lineno}
            records.append(current)
            continue
        if current is None:
            raise GroupFileError("member entry before any 'name:' record", lineno, source)
        donor, sep, weight = line.rpartition(":")
        donor = donor.strip()
        if not sep or not donor:
            raise GroupFileError(f"expected 'donor:weight', got {line!r}", lineno, source)
        try:
            value = float(weight)
        except ValueError:
            raise GroupFileError(f"weight {weight.strip()!r} is not a number", lineno, source) from None
        current["members"].append((donor, value, lineno))
    return records


def _records_from_document(doc, source=None) -> list[dict]:
    records = []
    for idx, entry in enumerate(doc, start=1):
        if not isinstance(entry, Mapping) or "name" not in entry:
            raise GroupFileError(f"record {idx} needs a 'name'", None, source)
        members = entry.get("members", {})
        if isinstance(members, Mapping):
            members = list(members.items())
        rows = []
        for m in members:
            if isinstance(m, Mapping):
                donor, weight = m.get("donor"), m.get("weight")
            else:
                donor, weight = m
            try:
                value = float(weight)
            except (TypeError, ValueError):
                raise GroupFileError(
                    f"record {idx}: weight of {donor!r} is not a number", None, source
                ) from None
            rows.append((str(donor), value, None))
        records.append({"name": str(entry["name"]), "members": rows, "line": None})
    return records


def groups_from_file(source, donors: Iterable[str] | None = None) -> GroupAssignment:
    """Load and validate an external group assignment.

    ``source`` is a path, or an already-parsed list of ``{"name", "members"}``
    records. Weights per donor are renormalised to sum to 1. When ``donors`` is
    given, references to anyone else are rejected.
    """
    label = None
    if isinstance(source, (str, os.PathLike)):
        path = Path(source)
        label = str(path)
        records = parse_groups_text(path.read_text(encoding="utf-8"), label)
    else:
        records = _records_from_document(source)
    known = set(donors) if donors is not None else None

    groups: dict[str, dict[str, float]] = {}
    first_line: dict[str, int | None] = {}
    for rec in records:
        name = rec["name"]
        if name in groups:
            raise GroupFileError(f"duplicate group {name!r}", rec["line"], label)
        members: dict[str, float] = {}
        for donor, weight, lineno in rec["members"]:
            if not math.isfinite(weight) or weight < 0:
                raise GroupFileError(f"weight of {donor!r} must be >= 0, got {weight}", lineno, label)
            if known is not None and donor not in known:
                raise GroupFileError(f"unknown donor {donor!r}", lineno, label)
            if donor in members:
                raise GroupFileError(f"donor {donor!r} listed twice in {name!r}", lineno, label)
            members[donor] = weight
            first_line.setdefault(donor, lineno)
        groups[name] = members

    sums: dict[str, float] = {}
    for members in groups.values():
        for d, w in members.items():
            sums[d] = sums.get(d, 0.0) + w
    for d, s in sums.items():
        if s <= 0:
            raise GroupFileError(f"weights of {d!r} sum to zero", first_line[d], label)
    normalized = {
        name: {d: w / sums[d] for d, w in members.items()} for name, members in groups.items()
    }
    flags = ()
    if known is not None:
        flags = tuple(d for d in donors if d not in sums)
    return GroupAssignment(normalized, flags)


def format_groups(assignment: GroupAssignment) -> str:
    lines = []
    for name, members in assignment.groups.items():
        lines.append(f"name: {name}")
        lines.extend(f"{d}:{w!r}" for d, w in members.items())
        lines.append("")
    return "\n".join(lines)
