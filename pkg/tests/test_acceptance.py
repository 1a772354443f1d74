"""Acceptance criteria, each at its stated tolerance and runtime budget.

One line per criterion is printed in the pytest terminal summary.
"""

from __future__ import annotations

import time

import pytest

from delaycredit import verify

RESULTS: dict[int, str] = {}

CRITERIA = [
    (1, verify.check_black_scholes),
    (2, verify.check_time_convergence),
    (3, verify.check_debt_equity_identity),
    (4, verify.check_krylov),
    (5, verify.check_phi_recurrence),
    (6, verify.check_smoother_gluing),
    (7, verify.check_zero_noise),
    (8, verify.check_merton_strong),
    (9, verify.check_merton_mean),
    (10, verify.check_stochastic_consistency),
    (11, verify.check_determinism),
    (12, verify.check_metzler_monotone),
]


@pytest.mark.parametrize("number, check", CRITERIA, ids=[f"criterion_{n:02d}" for n, _ in CRITERIA])
def test_criterion(number, check):
    t0 = time.perf_counter()
    result = check()
    elapsed = time.perf_counter() - t0
    in_time = result.budget is None or elapsed <= result.budget
    ok = result.passed and in_time
    RESULTS[number] = (
        f"{'PASS' if ok else 'FAIL'} criterion {number:2d}: {result.name} | {result.detail} "
        f"| {elapsed:.2f} s (budget {result.budget:g} s)"
    )
    assert result.number == number
    assert result.passed, result.detail
    assert in_time, f"took {elapsed:.2f} s, budget {result.budget} s"
