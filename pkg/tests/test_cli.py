import json
from decimal import Decimal

import pytest

from coqf.cli import main, parse_allocation, parse_donations, parse_sweep
from coqf.errors import InvalidInputError

DONATIONS = """donor,project,amount
a,P1,1
b,P1,4
c,P1,9
a,P2,1
b,P2,1
a,P2,0.5
"""


@pytest.fixture
def donations(tmp_path):
    path = tmp_path / "donations.csv"
    path.write_text(DONATIONS)
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_parse_donations_sums_duplicates():
    led = parse_donations(DONATIONS)
    assert led.amount("a", "P2") == 1.5
    assert led.projects == ("P1", "P2")


@pytest.mark.parametrize("text, line", [
    ("donor,project,amount\na,P1,x\n", 2),
    ("donor,project,amount\na,P1,1\nb,P1,-3\n", 3),
    ("donor,project,amount\na,P1\n", 2),
    ("who,what,amount\n", 1),
])
def test_parse_donations_errors(text, line):
    with pytest.raises(InvalidInputError, match=f"line {line}"):
        parse_donations(text)


def test_allocate_writes_table_and_summary(tmp_path, donations):
    out, summary = tmp_path / "out.csv", tmp_path / "s.json"
    assert run("allocate", "--donations", donations, "--pool", 100, "--output", out,
               "--summary", summary) == 0
    rows = parse_allocation(out.read_text())
    assert [r["project"] for r in rows] == ["P1", "P2"]
    assert rows[0]["raw_subsidy"] == Decimal("22.00")
    assert sum(r["capped_subsidy"] for r in rows) == Decimal("100.00")
    assert all(r["payout"] == r["direct_total"] + r["capped_subsidy"] for r in rows)
    info = json.loads(summary.read_text())
    assert info["mechanism"] == "QF" and info["remainder"] == "0.00"


def test_singleton_coqf_table_is_byte_identical(tmp_path, donations):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("allocate", "--donations", donations, "--pool", 77.77, "--cap", 0.7,
               "--output", a, "--quiet") == 0
    assert run("allocate", "--donations", donations, "--pool", 77.77, "--cap", 0.7,
               "--mechanism", "CO-QF", "--grouping", "singleton", "--output", b, "--quiet") == 0
    assert a.read_bytes() == b.read_bytes()


def test_allocate_with_groups_file(tmp_path, donations):
    groups = tmp_path / "g.txt"
    groups.write_text("name: ab\na:1\nb:1\nname: c\nc:1\n")
    out = tmp_path / "out.csv"
    assert run("allocate", "--donations", donations, "--pool", 10, "--mechanism", "CO-QF",
               "--grouping", f"file:{groups}", "--output", out, "--quiet") == 0
    assert len(parse_allocation(out.read_text())) == 2


def test_allocate_hybrid(tmp_path, donations):
    out = tmp_path / "out.csv"
    assert run("allocate", "--donations", donations, "--pool", 10, "--mechanism", "HYBRID",
               "--hybrid-weight", 0.25, "--output", out, "--quiet") == 0
    assert run("allocate", "--donations", donations, "--pool", 10, "--mechanism", "HYBRID",
               "--hybrid-weight", 0.3, "--output", out, "--quiet") == 2


def test_allocate_empty_file(tmp_path, capsys):
    path = tmp_path / "empty.csv"
    path.write_text("")
    summary = tmp_path / "s.json"
    assert run("allocate", "--donations", path, "--pool", 5, "--summary", summary) == 0
    info = json.loads(summary.read_text())
    assert info["flags"] == ["zero_subsidy"] and info["remainder"] == "5.00"


def test_allocate_malformed_amount(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("donor,project,amount\na,P1,1\na,P2,lots\n")
    assert run("allocate", "--donations", path, "--pool", 5) == 2
    assert "line 3" in capsys.readouterr().err


def test_allocate_missing_file(tmp_path):
    assert run("allocate", "--donations", tmp_path / "nope.csv", "--pool", 5) == 3


def test_allocate_unwritable_output(tmp_path, donations):
    assert run("allocate", "--donations", donations, "--pool", 5,
               "--output", tmp_path / "no" / "dir" / "x.csv", "--quiet") == 3


def test_simulate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["simulate", "--trials", 1, "--seed", 7, "--budgets", "0.5,1"]
    assert run(*args, "--output", a) == 0
    assert run(*args, "--output", b, "--quiet") == 0
    assert a.read_bytes() == b.read_bytes()
    rows = parse_sweep(a.read_text())
    assert len(rows) == 2 * 2 * 2 * 3
    assert "nonconverged: 0" in capsys.readouterr().err


def test_simulate_plot_dir(tmp_path):
    plots = tmp_path / "plots"
    assert run("simulate", "--trials", 1, "--budgets", "1", "--z-values", "1",
               "--plot-dir", plots, "--output", tmp_path / "t.csv", "--quiet") == 0
    files = sorted(p.name for p in plots.iterdir())
    assert files == ["sigma2_0.05.csv", "sigma2_0.25.csv"]
    header = (plots / files[0]).read_text().splitlines()[0]
    assert header == "mechanism,B,z,sigma2,mean_ratio,stderr"


@pytest.mark.parametrize("flag, value", [("--budgets", "-1"), ("--z-values", "2"),
                                         ("--sigma2-values", "0"), ("--budgets", "x")])
def test_simulate_bad_values(flag, value):
    assert run("simulate", "--trials", 1, flag, value, "--quiet") == 2


@pytest.mark.parametrize("kind", ["growth", "sybil", "skew"])
def test_probes_pass(kind, tmp_path):
    out = tmp_path / "p.csv"
    assert run("probe", "--kind", kind, "--output", out) == 0
    assert "FAIL" not in out.read_text()


def test_probe_failure_exit_code(tmp_path):
    # only small n, so the large-n threshold check has nothing to pass on but
    # the share must still rise; a decreasing order breaks it
    assert run("probe", "--kind", "skew", "--agent-counts", "10,5",
               "--output", tmp_path / "p.csv") == 1


def test_unknown_probe():
    with pytest.raises(SystemExit) as exc:
        run("probe", "--kind", "nope")
    assert exc.value.code == 2
