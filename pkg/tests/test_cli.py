import csv
import json
from pathlib import Path

import pytest

from mfbounds.cli import main, parse_strikes

DATA = Path(__file__).parent / "data"
SMALL = ["--synth", "--times", "2", "--strikes", "30:6:60"]
DIGITAL = ["--payoff", "barrier_digital", "--barriers", "34", "56"]


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_strikes():
    assert parse_strikes("30:2:60") == [float(k) for k in range(30, 61, 2)]
    assert parse_strikes("40, 50") == [40.0, 50.0]


def test_synth_even_ladder(tmp_path, capsys):
    out = tmp_path / "snap.json"
    code, text, _ = run(["synth", "--spot", "50", "--vol", "0.30", "--step", "0.5", "--times", "2",
                         "--strikes", "30:2:60", "--out", str(out)], capsys)
    assert code == 0
    snap = json.loads(out.read_text())
    assert len(snap["quotes"]) == 32
    assert (tmp_path / "snap.config.json").exists()


def test_synth_defaults_write_config(tmp_path, capsys):
    code, _, _ = run(["synth", "--out", str(tmp_path / "s.json")], capsys)
    assert code == 0
    cfg = json.loads((tmp_path / "s.config.json").read_text())
    assert cfg["synth"]["spot"] == 50.0 and cfg["payoff"]["type"] == "barrier_digital"


def test_synth_rejects_zero_times(tmp_path, capsys):
    code, _, err = run(["synth", "--times", "0", "--out", str(tmp_path / "s.json")], capsys)
    assert code == 1 and "positive" in err


def test_bounds_row_and_outputs(tmp_path, capsys):
    report, table = tmp_path / "r.json", tmp_path / "t.csv"
    code, text, _ = run(["bounds", *SMALL, *DIGITAL, "--oracle", "--bs-reference",
                         "--report", str(report), "--csv", str(table), "--plot"], capsys)
    assert code == 0
    head, row = text.strip().splitlines()[:2]
    assert head == "payoff,lower,upper,bs_reference,gap"
    name, lo, hi, ref, gap = row.split(",")
    assert name == "barrier_digital" and float(lo) <= float(ref) <= float(hi) and float(gap) < 1e-6
    doc = json.loads(report.read_text())
    assert doc["run"]["synth"]["times"] == 2 and doc["results"][0]["lower"] == float(lo)
    rows = list(csv.DictReader(table.open()))
    assert rows[0]["steps"] == "2" and rows[0]["payoff"] == "barrier_digital"
    assert (tmp_path / "t_bounds.png").stat().st_size > 0
    assert (tmp_path / "t_barrier_digital_hedge.png").stat().st_size > 0


def test_bounds_from_csv_fixture(capsys):
    code, text, _ = run(["bounds", "--quotes", str(DATA / "spread_quotes.csv"), "--payoff", "call",
                         "--time", "2", "--strike", "48"], capsys)
    assert code == 0
    lo, hi = (float(v) for v in text.splitlines()[1].split(",")[1:3])
    assert lo == pytest.approx(6.6892, abs=1e-6) and hi == pytest.approx(7.1030, abs=1e-6)


def test_config_file_reproduces_run(tmp_path, capsys):
    snap = tmp_path / "s.json"
    run(["synth", "--strikes", "30:6:60", "--out", str(snap)], capsys)
    code, first, _ = run(["bounds", "--config", str(tmp_path / "s.config.json")], capsys)
    assert code == 0
    code, second, _ = run(["bounds", "--quotes", str(snap), *DIGITAL], capsys)
    assert first == second


def test_config_supplies_reference_parameters(tmp_path, capsys):
    run(["synth", "--strikes", "30:6:60", "--out", str(tmp_path / "s.json")], capsys)
    code, out, _ = run(["bounds", "--config", str(tmp_path / "s.config.json"), "--bs-reference"], capsys)
    assert code == 0
    lower, upper, ref = map(float, out.splitlines()[1].split(",")[1:4])
    assert lower <= ref <= upper


def test_unknown_payoff_lists_catalog(capsys):
    code, _, err = run(["bounds", *SMALL, "--payoff", "rainbow"], capsys)
    assert code == 1 and "barrier_digital" in err and "asian_float_put" in err


def test_quotes_and_synth_are_exclusive(capsys):
    code, _, err = run(["bounds", "--synth", "--quotes", "x.csv", *DIGITAL], capsys)
    assert code == 1 and "not allowed" in err


def test_arb_exit_codes(capsys):
    code, text, _ = run(["arb", *SMALL, *DIGITAL, "--price", "0.5"], capsys)
    assert code == 0 and "verdict: inside" in text
    code, text, _ = run(["arb", *SMALL, *DIGITAL, "--price", "0.95"], capsys)
    assert code == 2 and "above_upper" in text and "super-hedge" in text
    code, _, err = run(["arb", *SMALL, *DIGITAL], capsys)
    assert code == 1 and "--price" in err


def test_infeasible_exit_code(capsys):
    code, _, err = run(["bounds", *SMALL, *DIGITAL, "--state-bounds", "34", "56"], capsys)
    assert code == 3 and "inconsistent" in err


def test_missing_file(capsys):
    code, _, err = run(["bounds", "--quotes", "/nonexistent.csv", *DIGITAL], capsys)
    assert code == 1 and "file not found" in err
