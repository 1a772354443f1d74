from __future__ import annotations

from pathlib import Path

import pytest

from delaycredit.cli import bundled_fixture
from delaycredit.market_data import COLUMNS

HEADER = ",".join(COLUMNS)


def firm_rows(years, r=0.05, sigma=0.3, n_obs=252, B=1.0, V=2.0, C=0.0, C_y=0.0):
    """Rows for a synthetic firm; scalar arguments are broadcast, callables get the year."""
    out = []
    for year in years:
        vals = [v(year) if callable(v) else v for v in (r, sigma, n_obs, B, V, C, C_y)]
        out.append(",".join(str(x) for x in (year, *vals)))
    return out


def write_firm(path: Path, rows) -> Path:
    path.write_text("\n".join([HEADER, *rows]) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def fixture_csv() -> Path:
    return bundled_fixture()


@pytest.fixture
def make_firm(tmp_path):
    def make(name="firm.csv", years=range(1991, 2011), **kw):
        return write_firm(tmp_path / name, firm_rows(years, **kw))

    return make


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
