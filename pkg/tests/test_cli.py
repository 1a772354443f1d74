from __future__ import annotations

import csv
import hashlib

import numpy as np
import pytest

from delaycredit import cli, verify
from delaycredit.errors import NonFiniteValue
from delaycredit.market_data import load_firm_csv
from delaycredit.pde import build_grid

FAST = ["--grid", "60", "--dtau", "0.02"]


def read_table(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# delaycredit ")
    rows = list(csv.reader(lines[1:]))
    return lines[0], rows[0], [[float(x) for x in r] for r in rows[1:]]


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_simulate_defaults_deterministic(tmp_path):
    for run in ("a", "b"):
        assert cli.main(["simulate", "--out", f"{tmp_path}/{run}/"]) == 0
    names = ["paths.csv", "summary.csv", "merton_summary.csv", "real.csv"]
    for name in names:
        assert digest(tmp_path / "a" / name) == digest(tmp_path / "b" / name)
    stamp, header, rows = read_table(tmp_path / "a" / "paths.csv")
    assert header == ["t"] + [f"V_{i}" for i in range(400)]
    assert "seed=0" in stamp and "paths=400" in stamp and "vol_fit=time_interp_quadratic" in stamp
    _, header, rows = read_table(tmp_path / "a" / "summary.csv")
    assert header == ["t", "mean", "stddev", "lower", "upper", "n_included"]
    assert rows[0][0] == 2000.5 and rows[-1][0] == pytest.approx(2010.0)
    _, header, rows = read_table(tmp_path / "a" / "real.csv")
    assert header == ["year", "V"] and rows[0][0] == 1991 and rows[-1][0] == 2010


def test_simulate_short_horizon(tmp_path):
    assert cli.main(["simulate", "--T", "5", "--L", "9.5", "--paths", "20", "--out", f"{tmp_path}/"]) == 0
    _, _, rows = read_table(tmp_path / "summary.csv")
    assert rows[-1][0] == pytest.approx(2005.5)
    assert len(rows) == 5 * 250 + 1


def test_missing_csv(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert cli.main(["simulate", "--firm", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_bad_choice_is_input_error():
    assert cli.main(["simulate", "--vol-fit", "cubic"]) == 2


def test_window_error_is_input_error(tmp_path, capsys):
    assert cli.main(["simulate", "--L", "15", "--out", f"{tmp_path}/"]) == 2
    assert "memory window" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise NonFiniteValue("blew up", step=3)

    monkeypatch.setattr(cli, "run_ensemble", boom)
    assert cli.main(["simulate", "--out", f"{tmp_path}/"]) == 3


def test_price_two_maturities(tmp_path):
    for T in ("9.5", "5"):
        assert cli.main(["price-equity", "--T", T, *FAST, "--out", f"{tmp_path}/T{T}-"]) == 0
    _, head_long, rows_long = read_table(tmp_path / "T9.5-surface.csv")
    _, head_short, rows_short = read_table(tmp_path / "T5-surface.csv")
    assert head_long[0] == "tau" and len(head_long) == 61
    assert rows_long[-1][0] == pytest.approx(9.5) and rows_short[-1][0] == pytest.approx(5.0)
    _, header, rows = read_table(tmp_path / "T5-slice.csv")
    assert header == ["year", "model_value", "real_value"]
    assert [r[0] for r in rows] == [2001, 2002, 2003, 2004, 2005]


def test_price_beyond_memory_uses_value_fit(tmp_path):
    args = ["price-debt", "--T", "10.5", "--paths", "3", *FAST, "--out", f"{tmp_path}/"]
    assert cli.main(args) == 2  # calendar-time fits cannot look past the memory window
    assert cli.main([*args, "--vol-fit", "value-quadratic"]) == 0
    _, _, rows = read_table(tmp_path / "slice.csv")
    assert rows[-1][0] == 2010


def test_debt_plus_equity_slices(tmp_path, make_firm):
    firm = make_firm(V=lambda y: 1.0 + 0.1 * (y - 1991), B=0.9, C=0.0, C_y=0.0)
    base = ["--firm", str(firm), "--grid", "400", "--dtau", "0.02"]
    assert cli.main(["price-debt", *base, "--out", f"{tmp_path}/d-"]) == 0
    assert cli.main(["price-equity", *base, "--out", f"{tmp_path}/e-"]) == 0
    _, _, debt = read_table(tmp_path / "d-slice.csv")
    _, _, eq = read_table(tmp_path / "e-slice.csv")
    series = load_firm_csv(firm)
    grid = build_grid(0.9, 400, 4)
    for (y, f, _), (_, F, _) in zip(debt, eq):
        v = grid.centers[grid.nearest(series.value_at(y))]
        assert abs(F + f - v) <= 1e-3 * grid.V_max


def test_compare_columns(tmp_path):
    assert cli.main(["compare", *FAST, "--out", f"{tmp_path}/"]) == 0
    stamp, header, rows = read_table(tmp_path / "compare.csv")
    assert header == ["year", "delayed", "merton", "real"]
    assert "compare" in stamp and len(rows) == 10
    assert np.all(np.isfinite(rows))


def test_stamp_excludes_out_and_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("DELAYCREDIT_THREADS", "1")
    assert cli.main(["price-equity", *FAST, "--out", f"{tmp_path}/x/"]) == 0
    monkeypatch.setenv("DELAYCREDIT_THREADS", "3")
    assert cli.main(["price-equity", *FAST, "--out", f"{tmp_path}/y/"]) == 0
    assert digest(tmp_path / "x" / "surface.csv") == digest(tmp_path / "y" / "surface.csv")


def test_verify_exit_codes(monkeypatch, capsys):
    monkeypatch.setattr(verify, "CHECKS", (verify.check_phi_recurrence, verify.check_smoother_gluing))
    assert cli.main(["verify"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 2 and "2/2 checks passed" in out


def test_verify_tampered_phi(monkeypatch, capsys):
    monkeypatch.setattr(verify, "CHECKS", (verify.check_phi_recurrence, verify.check_smoother_gluing))
    original = verify.expint.phi_scalar
    monkeypatch.setattr(verify.expint, "phi_scalar", lambda l, x: original(l, x) * (1 + 1e-6 * (l == 2)))
    assert cli.main(["verify"]) == 1
    assert "[FAIL]  5." in capsys.readouterr().out


def test_verify_verbose_timings(monkeypatch, capsys):
    monkeypatch.setattr(verify, "CHECKS", (verify.check_phi_recurrence,))
    assert cli.main(["verify", "--verbose"]) == 0
    assert "took" in capsys.readouterr().out
