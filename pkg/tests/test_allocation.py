import math
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coqf.allocation import (
    Mechanism,
    RoundConfig,
    allocate_round,
    apply_matching_cap,
    coqf_subsidy,
    coqf_v1_subsidy,
    coqv_tally,
    direct_total,
    hybrid_subsidy,
    largest_remainder,
    normalize_to_pool,
    qf_subsidy,
)
from coqf.errors import ConfigError, InvalidInputError
from coqf.grouping import GroupAssignment, projects_as_groups, singleton_groups
from coqf.ledger import DonationLedger
from oracles import coqf_subsidy_loop, coqf_v1_subsidy_loop, qf_subsidy_loop, qf_subsidy_square

amounts = st.lists(st.floats(min_value=0, max_value=1e6, allow_nan=False), max_size=15)


# -- qf_subsidy --------------------------------------------------------------

@pytest.mark.parametrize("c, expected", [([9], 0.0), ([1, 1], 2.0), ([1, 4, 9], 22.0), ([], 0.0)])
def test_qf_examples(c, expected):
    assert qf_subsidy(c) == pytest.approx(expected, abs=1e-12)


def test_qf_rejects_negative():
    with pytest.raises(InvalidInputError):
        qf_subsidy([1.0, -0.5])


@given(amounts)
def test_qf_two_formulas_agree(c):
    got = qf_subsidy(c)
    assert got == pytest.approx(qf_subsidy_loop(c), rel=1e-9, abs=1e-9)
    assert got == pytest.approx(qf_subsidy_square(c), rel=1e-9, abs=1e-6 * (1 + sum(c)))


@given(amounts, st.floats(min_value=1e-3, max_value=1e3))
def test_qf_scale_covariance(c, t):
    assert qf_subsidy([t * x for x in c]) == pytest.approx(t * qf_subsidy(c), rel=1e-9, abs=1e-9)


@given(amounts.filter(bool), st.integers(0, 14), st.floats(min_value=0, max_value=1e3))
def test_qf_monotone(c, idx, bump):
    idx %= len(c)
    bigger = list(c)
    bigger[idx] += bump
    assert qf_subsidy(bigger) >= qf_subsidy(c) * (1 - 1e-12)


def test_direct_total():
    assert direct_total([]) == 0
    assert direct_total([1, 2, 3]) == 6
    assert direct_total([5]) == 5


# -- coqf_subsidy ------------------------------------------------------------

def test_coqf_singletons_match_qf_example():
    groups = singleton_groups(["1", "2"])
    assert coqf_subsidy({"1": 1.0, "2": 4.0}, groups) == pytest.approx(4.0)
    assert coqf_subsidy([1.0, 4.0], groups) == pytest.approx(qf_subsidy([1.0, 4.0]))


def test_coqf_one_shared_group_is_zero():
    groups = GroupAssignment.from_members({"all": ["a", "b", "c"]})
    assert coqf_subsidy({"a": 3.0, "b": 7.0, "c": 0.5}, groups) == 0.0


def test_coqf_two_group_trace():
    groups = GroupAssignment({"A": {"1": 1.0, "2": 1.0}, "B": {"3": 1.0}})
    got = coqf_subsidy({"1": 1.0, "2": 1.0, "3": 4.0}, groups)
    assert got == pytest.approx(2 * math.sqrt(8.0), rel=1e-12)
    assert got == pytest.approx(5.65685, abs=1e-5)


def test_coqf_weight_outside_group_rejected():
    with pytest.raises(InvalidInputError):
        GroupAssignment.from_members({"A": ["1"], "B": ["2"]}, weights={("2", "A"): 1.0})


def _random_groups(rng, donors, n_groups):
    members = {}
    for g in range(n_groups):
        ms = [d for d in donors if rng.random() < 0.4]
        if ms:
            members[f"G{g}"] = ms
    covered = {d for ms in members.values() for d in ms}
    for d in donors:
        if d not in covered:
            members.setdefault(f"solo-{d}", [d])
    raw = {}
    for name, ms in members.items():
        for d in ms:
            raw[(d, name)] = float(rng.uniform(0.1, 1.0))
    sums = {}
    for (d, _), w in raw.items():
        sums[d] = sums.get(d, 0.0) + w
    weights = {(d, name): w / sums[d] for (d, name), w in raw.items()}
    return GroupAssignment.from_members(members, weights=weights)


def test_coqf_matches_loop_oracle_on_random_overlapping_groups(rng):
    for _ in range(200):
        donors = [f"d{i}" for i in range(int(rng.integers(1, 10)))]
        groups = _random_groups(rng, donors, int(rng.integers(1, 6)))
        contrib = {d: float(rng.exponential(5.0)) * (rng.random() < 0.8) for d in donors}
        assert coqf_subsidy(contrib, groups) == pytest.approx(
            coqf_subsidy_loop(contrib, groups.groups), rel=1e-9, abs=1e-12)


def test_coqf_monotone_in_each_contribution(rng):
    for _ in range(100):
        donors = [f"d{i}" for i in range(6)]
        groups = _random_groups(rng, donors, 4)
        contrib = {d: float(rng.exponential(2.0)) for d in donors}
        base = coqf_subsidy(contrib, groups)
        d = donors[int(rng.integers(6))]
        contrib[d] += float(rng.exponential(2.0))
        assert coqf_subsidy(contrib, groups) >= base * (1 - 1e-12)


def test_coqf_permutation_invariant(rng):
    donors = [f"d{i}" for i in range(8)]
    groups = _random_groups(rng, donors, 4)
    contrib = {d: float(rng.exponential(3.0)) for d in donors}
    base = coqf_subsidy(contrib, groups)
    names = list(groups.groups)
    perm = rng.permutation(len(names))
    relabeled = GroupAssignment({f"X{k}": groups.groups[names[p]] for k, p in enumerate(perm)})
    shuffled = dict(sorted(contrib.items(), key=lambda kv: rng.random()))
    assert coqf_subsidy(shuffled, relabeled) == pytest.approx(base, rel=1e-12)


def test_coqf_sequence_length_mismatch():
    groups = singleton_groups(["a", "b"])
    with pytest.raises(InvalidInputError):
        coqf_subsidy([1.0], groups)


# -- coqf_v1_subsidy ---------------------------------------------------------

def test_v1_singletons_match_qf():
    groups = singleton_groups(["1", "2"])
    assert coqf_v1_subsidy({"1": 1.0, "2": 4.0}, groups) == pytest.approx(4.0)


def test_v1_overlapping_trace_and_sqrt_scaling():
    groups = GroupAssignment.from_members({"g": ["1", "2"], "h": ["2", "3"]})
    assert coqf_v1_subsidy({"1": 1, "2": 1, "3": 1}, groups) == pytest.approx(3.0)
    assert coqf_v1_subsidy({"1": 4, "2": 4, "3": 4}, groups) == pytest.approx(6.0)


def test_v1_orphan_contributor_rejected():
    groups = singleton_groups(["a"])
    with pytest.raises(InvalidInputError):
        coqf_v1_subsidy({"a": 1.0, "b": 2.0}, groups)
    # a non-contributing outsider is fine
    assert coqf_v1_subsidy({"a": 1.0, "b": 0.0}, groups) == 0.0


def test_v1_matches_loop_oracle(rng):
    for _ in range(200):
        donors = [f"d{i}" for i in range(int(rng.integers(1, 9)))]
        groups = _random_groups(rng, donors, int(rng.integers(1, 5)))
        contrib = {d: float(rng.exponential(5.0)) for d in donors}
        members = {g: set(ms) for g, ms in groups.groups.items()}
        assert coqf_v1_subsidy(contrib, groups) == pytest.approx(
            coqf_v1_subsidy_loop(contrib, members), rel=1e-9, abs=1e-12)


# -- hybrid, normalisation, cap, rounding ------------------------------------

@pytest.mark.parametrize("qf, co, w, expected", [(10, 10, 0.5, 10), (0, 8, 0.25, 2), (4, 0, 0.75, 1)])
def test_hybrid_examples(qf, co, w, expected):
    assert hybrid_subsidy(qf, co, w) == pytest.approx(expected)


def test_hybrid_rejects_other_weights():
    with pytest.raises(ConfigError):
        hybrid_subsidy(1, 1, 0.3)


def test_normalize_examples():
    assert normalize_to_pool([2, 2], 100) == ([50, 50], False)
    assert normalize_to_pool([1, 3], 100) == ([25, 75], False)
    assert normalize_to_pool([0, 0], 100) == ([0, 0], True)


@pytest.mark.parametrize("values, pool, cap, out, rem", [
    ([80, 10, 10], 100, 0.2, [20, 20, 20], 40),
    ([20, 40, 40], 100, 0.5, [20, 40, 40], 0),
    ([100], 100, 0.3, [30], 70),
])
def test_cap_examples(values, pool, cap, out, rem):
    got, remainder = apply_matching_cap(values, pool, cap)
    assert got == pytest.approx(out)
    assert remainder == pytest.approx(rem)


@given(st.lists(st.floats(min_value=0, max_value=1e4), min_size=1, max_size=12),
       st.floats(min_value=0.01, max_value=1.0))
def test_cap_conserves_money(raw, cap):
    pool = 1000.0
    normalized, zero = normalize_to_pool(raw, pool)
    if zero:
        return
    capped, remainder = apply_matching_cap(normalized, pool, cap)
    assert math.fsum(capped) + remainder == pytest.approx(pool, rel=1e-12)
    assert max(capped) <= cap * pool + 1e-9


def test_cap_rejects_bad_fraction():
    with pytest.raises(ConfigError):
        apply_matching_cap([1.0], 1.0, 0.0)


@given(st.lists(st.floats(min_value=0, max_value=1e5), min_size=1, max_size=10))
def test_largest_remainder_sums(values):
    total = round(sum(values))
    out = largest_remainder(values, total)
    assert sum(out) == total
    assert all(abs(o - v) < 1 + 1e-9 for o, v in zip(out, values))


def test_largest_remainder_respects_ceiling():
    assert largest_remainder([2.6, 2.6, 1.8], 7, ceiling=2) == [2, 2, 2]


# -- allocate_round ----------------------------------------------------------

def _ledger(rows, projects=None):
    return DonationLedger.from_records(rows, projects=projects)


def test_round_qf_two_projects():
    # P1 raw 2 (two donors of 1), P2 raw 6 (1 and 9 -> 2*3)
    ledger = _ledger([("a", "P1", 1), ("b", "P1", 1), ("a", "P2", 1), ("c", "P2", 9)])
    res = allocate_round(ledger, RoundConfig(80.0))
    rows = res.by_project()
    assert [rows[p].raw_subsidy for p in ("P1", "P2")] == pytest.approx([2, 6])
    assert rows["P1"].capped_subsidy == Decimal("20.00")
    assert rows["P2"].capped_subsidy == Decimal("60.00")
    assert rows["P1"].payout == Decimal("22.00")
    assert rows["P2"].payout == Decimal("70.00")
    assert res.unallocated_remainder == 0


def test_round_direct():
    ledger = _ledger([("a", "P1", 3.5), ("b", "P2", 2)])
    res = allocate_round(ledger, RoundConfig(100.0, Mechanism.DIRECT))
    assert all(p.capped_subsidy == 0 for p in res.projects)
    assert [p.payout for p in res.projects] == [Decimal("3.50"), Decimal("2.00")]
    assert res.unallocated_remainder == Decimal("100.00")
    assert "zero_subsidy" in res.flags


def test_round_singleton_coqf_identical_to_qf(rng):
    from oracles import random_ledger
    for _ in range(20):
        ledger = random_ledger(rng)
        qf = allocate_round(ledger, RoundConfig(1000.0, Mechanism.QF, cap_fraction=0.4))
        co = allocate_round(ledger, RoundConfig(1000.0, Mechanism.COQF, cap_fraction=0.4),
                            singleton_groups(ledger.donors))
        assert co.projects == qf.projects
        assert co.unallocated_remainder == qf.unallocated_remainder


def test_round_coqf_without_groups_is_config_error():
    with pytest.raises(ConfigError):
        allocate_round(_ledger([("a", "P1", 1)]), RoundConfig(10.0, Mechanism.COQF))


def test_round_config_validation():
    with pytest.raises(ConfigError):
        RoundConfig(10.0, "nonsense")
    with pytest.raises(ConfigError):
        RoundConfig(10.0, Mechanism.HYBRID)
    with pytest.raises(ConfigError):
        RoundConfig(10.0, Mechanism.QF, hybrid_weight=0.5)
    with pytest.raises(ConfigError):
        RoundConfig(-1.0)


def test_round_hybrid_between_parents():
    ledger = _ledger([("a", "P1", 4), ("b", "P1", 1), ("a", "P2", 1), ("c", "P2", 1)])
    groups = projects_as_groups(ledger)
    cfg = RoundConfig(100.0, Mechanism.HYBRID, hybrid_weight=0.5)
    res = allocate_round(ledger, cfg, groups)
    for p in res.projects:
        col = ledger.column(p.project)
        lo, hi = sorted([qf_subsidy(col), coqf_subsidy(col, groups)])
        assert lo - 1e-12 <= p.raw_subsidy <= hi + 1e-12


def test_round_capped_cents_invariants(rng):
    from oracles import random_ledger
    for _ in range(100):
        ledger = random_ledger(rng)
        pool = float(rng.integers(1, 10**6)) / 100
        cap = float(rng.uniform(0.05, 1.0))
        res = allocate_round(ledger, RoundConfig(pool, cap_fraction=cap))
        total = sum(p.capped_subsidy for p in res.projects) + res.unallocated_remainder
        assert total == res.matching_pool
        assert all(p.capped_subsidy <= Decimal(repr(cap * pool)) for p in res.projects)
        assert all(p.payout == p.direct_total + p.capped_subsidy for p in res.projects)


def test_round_uncapped_normalised_cents_sum_to_pool(rng):
    from oracles import random_ledger
    for _ in range(100):
        ledger = random_ledger(rng)
        res = allocate_round(ledger, RoundConfig(12345.67))
        if "zero_subsidy" not in res.flags:
            assert sum(p.capped_subsidy for p in res.projects) == Decimal("12345.67")
            assert res.unallocated_remainder == 0


# -- CO-QV -------------------------------------------------------------------

def test_coqv_examples():
    assert coqv_tally([1, 1]) == pytest.approx(2.0)
    assert coqv_tally([4]) == pytest.approx(2.0)
    shared = GroupAssignment.from_members({"team": ["a", "b"]})
    assert coqv_tally({"a": 1, "b": 1}, "CO-QF", shared) == pytest.approx(math.sqrt(2))


def test_coqv_requires_groups():
    with pytest.raises(ConfigError):
        coqv_tally([1, 1], "CO-QF")


def test_coqv_singleton_equals_sum_of_roots():
    c = np.array([1.0, 2.0, 5.0])
    groups = singleton_groups(["0", "1", "2"])
    assert coqv_tally(dict(zip("012", c)), "CO-QF", groups) == pytest.approx(np.sqrt(c).sum())
