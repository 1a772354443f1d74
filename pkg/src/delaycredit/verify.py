"""Self-checks against closed forms and independent oracles.

Each check returns a :class:`CheckResult`; :func:`run_checks` runs them all
and is what ``delaycredit verify`` prints.  Tolerances are fixed here.
"""

from __future__ import annotations

import hashlib
import logging
import math
import tempfile
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import expint
from .expint import ExpIntConfig, PhiCombination, Tridiagonal, krylov_phi_action
from .market_data import CoefficientCurves, MemoryPath, StepCurve, VolatilityModel
from .monte_carlo import mean_path, run_merton_ensemble, stddev_path
from .pde import ClaimSpec, PayoffSmoother, assemble, build_grid
from .pricing import (
    black_scholes_call,
    debt_equity_identity_check,
    solve_merton_surface,
    solve_surface_deterministic,
    solve_surface_stochastic,
)
from .sdde import (
    NoiseStream,
    SchemeConfig,
    SddeModel,
    march_merton,
    merton_exact_mean,
    simulate_path,
)

# shared setup of the Black-Scholes style checks
BS = dict(sigma=0.3, r=0.05, B=100.0, N=400, dtau=1 / 365, T=1.0)
BS_POINTS = (50.0, 100.0, 150.0, 200.0)


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    budget: float | None = None


def _bs_surface(kind="equity", dtau=BS["dtau"], config=ExpIntConfig()):
    grid = build_grid(BS["B"], BS["N"], 4.0)
    curves = CoefficientCurves.constant(r=BS["r"])
    claim = ClaimSpec(kind, BS["B"])
    return solve_merton_surface(claim, grid, BS["sigma"], curves, BS["T"], dtau, config)


def _at(surface, v: float, row: int = -1) -> float:
    return float(np.interp(v, surface.grid.centers, surface.values[row]))


# ---------------------------------------------------------------------------
# oracles


def dense_phi_oracle(A: np.ndarray, f, terms, dt: float) -> np.ndarray:
    """``phi_0(dt A) f + sum_l dt^l phi_l(dt A) u_l`` by Taylor series with scaling and squaring.

    Deliberately independent of ``scipy.linalg.expm`` and of the Krylov code.
    """
    n = A.shape[0]
    p = len(terms)
    Z = np.zeros((n + p, n + p))
    Z[:n, :n] = A
    for j, u in enumerate(reversed(terms)):
        Z[:n, n + j] = u
    for j in range(p - 1):
        Z[n + j, n + j + 1] = 1.0
    Z *= dt
    norm1 = float(np.max(np.sum(np.abs(Z), axis=0)))
    s = max(0, math.ceil(math.log2(norm1)) + 1) if norm1 > 0 else 0
    Zs = Z / 2.0**s
    E = np.eye(n + p)
    term = np.eye(n + p)
    for k in range(1, 40):
        term = term @ Zs / k
        E = E + term
        if np.max(np.abs(term)) < 1e-18 * np.max(np.abs(E)):
            break
    for _ in range(s):
        E = E @ E
    start = np.zeros(n + p)
    start[:n] = f
    if p:
        start[-1] = 1.0
    return (E @ start)[:n]


def random_tridiagonal(rng: np.random.Generator, N: int) -> Tridiagonal:
    sub = rng.uniform(-1.0, 5.0, N)
    sup = rng.uniform(-1.0, 5.0, N)
    sub[0] = 0.0
    sup[-1] = 0.0
    return Tridiagonal(sub, rng.uniform(-12.0, 0.0, N), sup)


# ---------------------------------------------------------------------------
# checks


def check_black_scholes() -> CheckResult:
    surf = _bs_surface()
    rel = {v: abs(_at(surf, v) / black_scholes_call(v, BS["B"], BS["r"], BS["sigma"], BS["T"]) - 1)
           for v in BS_POINTS}
    worst = max(rel.values())
    detail = ", ".join(f"v={v:g}: {e:.2e}" for v, e in rel.items())
    return CheckResult(1, "Black-Scholes equivalence (rel <= 1e-3)", worst <= 1e-3, detail, budget=10)


def check_time_convergence() -> CheckResult:
    exact = black_scholes_call(100.0, BS["B"], BS["r"], BS["sigma"], BS["T"])
    e1 = abs(_at(_bs_surface(dtau=BS["dtau"]), 100.0) - exact)
    e2 = abs(_at(_bs_surface(dtau=BS["dtau"] / 2), 100.0) - exact)
    ratio = e1 / e2 if e2 > 0 else math.inf
    ok = 3.0 <= ratio <= 5.0
    detail = f"err(dtau)={e1:.6e}, err(dtau/2)={e2:.6e}, ratio={ratio:.4f}"
    return CheckResult(2, "second-order time convergence (ratio in [3, 5])", ok, detail, budget=30)


def check_debt_equity_identity() -> CheckResult:
    equity = _bs_surface("equity")
    debt = _bs_surface("debt")
    dev = debt_equity_identity_check(equity, debt)
    bound = 1e-3 * equity.grid.V_max
    return CheckResult(3, "debt + equity = v (<= 1e-3 V_max)", dev <= bound,
                       f"max deviation {dev:.3e} (bound {bound:.3e})", budget=20)


def check_krylov(trials: int = 100, N: int = 50) -> CheckResult:
    rng = np.random.default_rng(20240611)
    config = ExpIntConfig(krylov_dim=10, tol=1e-6)
    worst = 0.0
    for _ in range(trials):
        A = random_tridiagonal(rng, N)
        f, b1, b2 = rng.standard_normal((3, N))
        got = krylov_phi_action(A, PhiCombination(f, (b1, b2), 1.0), config)
        ref = dense_phi_oracle(A.to_dense(), f, (b1, b2), 1.0)
        worst = max(worst, float(np.max(np.abs(got - ref)) / np.max(np.abs(ref))))
    return CheckResult(4, "Krylov phi action vs dense oracle (<= 1e-6)", worst <= 1e-6,
                       f"worst relative error {worst:.3e} over {trials} trials", budget=5)


def check_phi_recurrence() -> CheckResult:
    worst = 0.0
    for l in range(4):
        for x in (-5.0, -0.1, 0.3, 7.0):
            res = abs(x * expint.phi_scalar(l + 1, x) + 1 / math.factorial(l) - expint.phi_scalar(l, x))
            worst = max(worst, res)
    return CheckResult(5, "phi recurrence residual (<= 1e-12)", worst <= 1e-12,
                       f"worst residual {worst:.3e}", budget=1)


def check_smoother_gluing() -> CheckResult:
    worst = 0.0
    exact0 = True
    for eps in (0.25, 1.0, 3.0):
        s = PayoffSmoother(eps)
        exact0 &= s(0.0) == 35 * eps / 256
        for k in range(5):
            scale = eps ** (1 - k)
            right = (eps, 1.0, 0.0, 0.0, 0.0)[k]
            worst = max(worst, abs(s.polynomial(eps, k) - right) / scale)
            worst = max(worst, abs(s.polynomial(-eps, k)) / scale)
    ok = worst <= 1e-8 and exact0
    return CheckResult(6, "smoothing gluing at +-eps (<= 1e-8), value at 0", ok,
                       f"worst scaled mismatch {worst:.3e}; pi(0) exact: {exact0}", budget=1)


def zero_noise_errors(dts=(1 / 100, 1 / 200), alpha=0.5, v0=1.0, L=1.0):
    errors = []
    for dt in dts:
        model = SddeModel(
            alpha=StepCurve.constant(alpha),
            C=StepCurve.constant(0.0),
            g=VolatilityModel.constant(0.0),
            memory=MemoryPath.constant(v0, L),
            L=L,
            T=L,
        )
        path = simulate_path(model, SchemeConfig.build(L, L, dt, theta=1.0), NoiseStream(0, 0))
        errors.append(abs(path.values[-1] - v0 * math.exp(alpha * v0 * L)))
    return errors


def check_zero_noise() -> CheckResult:
    e1, e2 = zero_noise_errors()
    ratio = e1 / e2
    return CheckResult(7, "delay scheme vs ODE, first order (ratio in [1.7, 2.3])",
                       1.7 <= ratio <= 2.3, f"errors {e1:.3e}, {e2:.3e}, ratio {ratio:.4f}", budget=5)


def merton_strong_errors(dts=(1 / 64, 1 / 128), n_paths=1000, sigma=0.5, alpha=0.05, T=1.0, seed=7):
    fine = 1024
    dW = np.stack([NoiseStream(seed, i).increments(fine, T / fine) for i in range(n_paths)])
    exact = np.exp((alpha - 0.5 * sigma**2) * T + sigma * dW.sum(axis=1))
    errors = []
    for dt in dts:
        M = round(T / dt)
        coarse = dW.reshape(n_paths, M, fine // M).sum(axis=2)
        scheme = SchemeConfig(theta=1.0, M_steps=M, dt=dt, m_lag=1)
        V = march_merton(1.0, alpha, 0.0, sigma, scheme, coarse)[:, -1]
        errors.append(float(np.sqrt(np.mean((V - exact) ** 2))))
    return errors


def check_merton_strong() -> CheckResult:
    e1, e2 = merton_strong_errors()
    ratio = e1 / e2
    return CheckResult(8, "Merton strong order 1/2 (ratio in [1.25, 1.6])", 1.25 <= ratio <= 1.6,
                       f"RMS errors {e1:.4e}, {e2:.4e}, ratio {ratio:.4f}", budget=30)


def check_merton_mean() -> CheckResult:
    V0, alpha, sigma, T = 100.0, 0.05, 0.2, 2.0
    scheme = SchemeConfig(theta=1.0, M_steps=200, dt=T / 200, m_lag=1)
    ens = run_merton_ensemble(V0, alpha, 0.0, sigma, scheme, 10_000, seed=2024)
    mean = mean_path(ens)[-1]
    se = stddev_path(ens)[-1] / math.sqrt(ens.n_included)
    target = merton_exact_mean(V0, alpha, T)
    z = abs(mean - target) / se
    return CheckResult(9, "Merton Monte Carlo mean (within 3 s.e.)", z <= 3.0,
                       f"mean {mean:.4f} vs {target:.4f}, |z| = {z:.3f}", budget=30)


def stochastic_consistency(n_samples=4, N=80, dtau=1 / 50, sigma=0.3):
    L, T, B = 1.0, 2.0, 1.0
    grid = build_grid(B, N, 4.0)
    curves = CoefficientCurves.constant(r=0.05)
    memory = MemoryPath.constant(1.0, L)
    g = VolatilityModel("value_fit_quadratic", sigma, sigma, coefficients=np.array([0.1, 0.2, 0.3]))
    model = SddeModel(curves.alpha, StepCurve.constant(0.0), g, memory, L, T)
    scheme = SchemeConfig.build(T, L, 1 / 50)
    claim = ClaimSpec("equity", B)
    mean, std, report, samples = solve_surface_stochastic(
        claim, grid, g, model, scheme, T, L, n_samples, seed=11, dtau=dtau, curves=curves,
        keep_samples=True,
    )
    det = solve_surface_deterministic(
        claim, grid, VolatilityModel.constant(sigma), memory, curves, L, L, dtau
    )
    per_sample = max(float(np.max(np.abs(s.values - det.values))) for s in samples)
    return per_sample, float(np.max(np.abs(mean.values - det.values))), float(np.max(std.values)), report


def check_stochastic_consistency() -> CheckResult:
    per_sample, mean_dev, std_max, report = stochastic_consistency()
    ok = per_sample <= 1e-10 and mean_dev <= 1e-10
    return CheckResult(10, "stochastic == deterministic for collapsed clamp (<= 1e-10)", ok,
                       f"per-sample {per_sample:.3e}, mean {mean_dev:.3e}, max sd {std_max:.3e}, "
                       f"{report.n_used} samples", budget=20)


def _digest(folder: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(folder.iterdir())}


def determinism_runs(firm_csv: str | None = None) -> tuple[bool, str]:
    """Run every output command three times (1, 1 and 4 workers) and compare bytes."""
    import os

    from .cli import bundled_fixture, main

    firm = firm_csv or str(bundled_fixture())
    commands = [
        ["simulate", "--paths", "40"],
        ["price-equity", "--grid", "60", "--dtau", "0.02"],
        ["price-debt", "--grid", "60", "--dtau", "0.02"],
        ["compare", "--grid", "60", "--dtau", "0.02"],
    ]
    digests = []
    old = os.environ.get("DELAYCREDIT_THREADS")
    quiet = logging.getLogger("delaycredit")
    level = quiet.level
    quiet.setLevel(logging.ERROR)
    try:
        with tempfile.TemporaryDirectory() as tmp:
            for run, threads in enumerate(("1", "1", "4")):
                os.environ["DELAYCREDIT_THREADS"] = threads
                out = Path(tmp) / f"run{run}"
                out.mkdir()
                for cmd in commands:
                    prefix = f"{out}/{cmd[0]}-"
                    code = main([*cmd, "--firm", firm, "--out", prefix, "--seed", "3"])
                    if code != 0:
                        return False, f"{cmd[0]} exited with {code}"
                digests.append(_digest(out))
    finally:
        quiet.setLevel(level)
        if old is None:
            os.environ.pop("DELAYCREDIT_THREADS", None)
        else:
            os.environ["DELAYCREDIT_THREADS"] = old
    same = digests[0] == digests[1] == digests[2]
    return same, f"{len(digests[0])} files compared across 3 runs (workers 1, 1, 4)"


def check_determinism() -> CheckResult:
    ok, detail = determinism_runs()
    return CheckResult(11, "byte-identical outputs across runs and worker counts", ok, detail, budget=60)


def metzler_and_monotone(surface=None):
    grid = build_grid(BS["B"], BS["N"], 4.0)
    claim = ClaimSpec("equity", BS["B"])
    op = assemble(grid, claim, 0.0, BS["sigma"], BS["r"], 0.0, 0.0, 1.0, "paper")
    min_off = min(float(op.sub[1:].min()), float(op.sup[:-1].min()))
    surface = surface if surface is not None else _bs_surface()
    steps = np.diff(surface.values, axis=1)
    return min_off, float(steps.min())


def check_metzler_monotone() -> CheckResult:
    min_off, min_step = metzler_and_monotone()
    ok = min_off >= 0 and min_step >= 0
    return CheckResult(12, "Metzler operator and monotone equity rows", ok,
                       f"min off-diagonal {min_off:.3e}, min row increment {min_step:.3e}", budget=10)


CHECKS: tuple[Callable[[], CheckResult], ...] = (
    check_black_scholes,
    check_time_convergence,
    check_debt_equity_identity,
    check_krylov,
    check_phi_recurrence,
    check_smoother_gluing,
    check_zero_noise,
    check_merton_strong,
    check_merton_mean,
    check_stochastic_consistency,
    check_determinism,
    check_metzler_monotone,
)


def run_checks(checks=None, verbose: bool = False, echo=print) -> list[CheckResult]:
    results = []
    checks = CHECKS if checks is None else checks
    for check in checks:
        t0 = time.perf_counter()
        try:
            res = check()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(0, check.__name__, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
        status = "PASS" if res.passed else "FAIL"
        echo(f"[{status}] {res.number:2d}. {res.name}: {res.detail}")
        if verbose:
            budget = f" (budget {res.budget:g} s)" if res.budget else ""
            echo(f"       took {res.seconds:.2f} s{budget}")
    return results
