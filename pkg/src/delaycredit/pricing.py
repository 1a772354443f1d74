"""End-to-end debt and equity surfaces.

Time to maturity ``tau = T - t`` runs forward from the terminal payoff.  A
surface row ``n`` holds the claim at calendar time ``origin + T - tau_n``.
Coefficient curves are step functions of calendar time; within a step the
rates and payouts are taken at the step midpoint (the value on the step when
steps do not straddle a year boundary) and the diffusion coefficient is
frozen at the start of the step.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .errors import (
    AllPathsExcluded,
    BadParameters,
    DelayCreditError,
    LagOutOfMemory,
    LatticeMismatch,
    NumericalError,
)
from .expint import ExpIntConfig, etd_step
from .market_data import CoefficientCurves, MemoryPath, StepCurve, VolatilityModel
from .monte_carlo import _chunks, run_ensemble, worker_count
from .pde import ClaimSpec, Grid, PayoffSmoother, assemble
from .sdde import SchemeConfig, SddeModel

logger = logging.getLogger(__name__)

DEFAULT_DTAU = 1.0 / 365.0
LAG_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PricingSurface:
    grid: Grid
    taus: np.ndarray
    values: np.ndarray
    claim: ClaimSpec
    lower: np.ndarray
    upper: np.ndarray
    T: float = 0.0
    origin: float = 0.0
    provenance: dict = field(default_factory=lambda: {"kind": "deterministic"})

    @property
    def dtau(self) -> float:
        return float(self.taus[1] - self.taus[0]) if len(self.taus) > 1 else 0.0

    def calendar(self) -> np.ndarray:
        return self.origin + self.T - self.taus

    def with_values(self, values: np.ndarray, claim=None, provenance=None, lower=None, upper=None):
        return PricingSurface(
            grid=self.grid,
            taus=self.taus,
            values=values,
            claim=claim or self.claim,
            lower=self.lower if lower is None else lower,
            upper=self.upper if upper is None else upper,
            T=self.T,
            origin=self.origin,
            provenance=provenance or dict(self.provenance),
        )

    def to_csv(self, target, comment: str | None = None) -> None:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["tau", *(_f(v) for v in self.grid.centers)])
            for tau, row in zip(self.taus, self.values):
                writer.writerow([_f(tau), *(_f(x) for x in row)])


def _f(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# closed forms and checks


def black_scholes_call(v, B, r, sigma, tau_remaining):
    """Lognormal call value with strike ``B``; vectorised in ``v``."""
    v = np.asarray(v, dtype=float)
    if tau_remaining <= 0:
        out = np.maximum(v - B, 0.0)
        return float(out) if out.ndim == 0 else out
    sq = sigma * math.sqrt(tau_remaining)
    with np.errstate(divide="ignore"):
        d1 = (np.log(v / B) + (r + 0.5 * sigma * sigma) * tau_remaining) / sq
    d2 = d1 - sq
    out = v * norm.cdf(d1) - B * math.exp(-r * tau_remaining) * norm.cdf(d2)
    out = np.where(v > 0, out, 0.0)
    return float(out) if out.ndim == 0 else out


def debt_equity_identity_check(equity: PricingSurface, debt: PricingSurface) -> float:
    """Largest ``|F + f - v|`` over the lattice."""
    if not equity.grid.same_as(debt.grid) or equity.taus.shape != debt.taus.shape or not np.allclose(
        equity.taus, debt.taus, rtol=0, atol=1e-12
    ):
        raise LatticeMismatch("equity and debt surfaces live on different lattices")
    return float(np.max(np.abs(equity.values + debt.values - equity.grid.centers)))


def debt_from_equity(equity: PricingSurface) -> PricingSurface:
    """Debt as firm value minus equity."""
    v = equity.grid.centers
    claim = ClaimSpec("debt", equity.claim.B)
    V_max = equity.grid.V_max
    return equity.with_values(
        v - equity.values,
        claim=claim,
        provenance={**equity.provenance, "derived": "v - equity"},
        lower=-equity.lower,
        upper=V_max - equity.upper,
    )


# ---------------------------------------------------------------------------
# marching


def tau_lattice(span: float, dtau: float) -> np.ndarray:
    """Uniform lattice on ``[0, span]`` whose step is ``dtau`` or the largest divisor below it."""
    if not (span > 0 and dtau > 0):
        raise BadParameters(f"need positive window and step, got span={span}, dtau={dtau}")
    K = max(1, math.ceil(span / dtau - 1e-9))
    return np.linspace(0.0, span, K + 1)


def _discount(curves: CoefficientCurves, origin: float, T: float, tau: float) -> float:
    return math.exp(-curves.r.integral(origin + T - tau, origin + T))


def march_surface(
    claim: ClaimSpec,
    grid: Grid,
    sigma_at: Callable[[float], float],
    curves: CoefficientCurves,
    T: float,
    span: float,
    dtau: float = DEFAULT_DTAU,
    config: ExpIntConfig = ExpIntConfig(),
    rule: str = "paper",
    epsilon: float | None = None,
    origin: float = 0.0,
) -> PricingSurface:
    """Solve the semi-discrete system on ``tau in [0, span]`` for a given ``sigma(tau)``."""
    taus = tau_lattice(span, dtau)
    K = len(taus) - 1
    smoother = PayoffSmoother(grid.h if epsilon is None else epsilon)
    v = grid.centers
    values = np.empty((K + 1, grid.N))
    values[0] = claim.terminal(v, smoother)
    disc = np.array([_discount(curves, origin, T, tau) for tau in taus])
    upper = np.array([claim.upper_bc(grid.V_max, d) for d in disc])
    lower = np.array([claim.lower_bc(tau) for tau in taus])

    f = values[0]
    for n in range(K):
        tau_n, tau_np1 = taus[n], taus[n + 1]
        step = tau_np1 - tau_n
        mid = origin + T - 0.5 * (tau_n + tau_np1)
        r, C, C_y = curves.r(mid), curves.C(mid), curves.C_y(mid)
        sigma = sigma_at(tau_n)
        op_n = assemble(grid, claim, tau_n, sigma, r, C, C_y, disc[n], rule)
        b_np1 = op_n.b_with_boundary(lower[n + 1], upper[n + 1])
        try:
            f = etd_step(f, op_n.A, op_n.b, b_np1, step, config)
        except DelayCreditError as exc:
            raise type(exc)(f"{exc} (at tau index {n})") from exc
        if not np.all(np.isfinite(f)):
            raise NumericalError(f"non-finite surface values at tau index {n + 1}")
        values[n + 1] = f
    return PricingSurface(grid, taus, values, claim, lower, upper, T=T, origin=origin)


# ---------------------------------------------------------------------------
# deterministic (T <= L) and Merton


def effective_sigma_deterministic(volmodel: VolatilityModel, memory: MemoryPath, T, L, tau) -> float:
    """Volatility at the lagged time ``T - tau - L``, which lies in the memory window."""
    lag = T - tau - L
    if lag < -L - LAG_TOL * max(1.0, L) or lag > LAG_TOL * max(1.0, L):
        raise LagOutOfMemory(f"lag time {lag} outside the memory window [-{L}, 0]")
    lag = min(max(lag, -L), 0.0)
    return float(volmodel.lagged(memory(lag), memory.origin + lag))


def solve_surface_deterministic(
    claim: ClaimSpec,
    grid: Grid,
    volmodel: VolatilityModel,
    memory: MemoryPath,
    curves: CoefficientCurves,
    T: float,
    L: float,
    dtau: float = DEFAULT_DTAU,
    config: ExpIntConfig = ExpIntConfig(),
    rule: str = "paper",
    epsilon: float | None = None,
) -> PricingSurface:
    if T > L * (1 + 1e-12):
        raise BadParameters(f"deterministic solve needs T <= L, got T={T}, L={L}")
    span = min(T, L)

    def sigma_at(tau: float) -> float:
        return effective_sigma_deterministic(volmodel, memory, T, L, tau)

    surface = march_surface(
        claim, grid, sigma_at, curves, T, span, dtau, config, rule, epsilon, memory.origin
    )
    return surface.with_values(surface.values, provenance={"kind": "deterministic"})


def solve_merton_surface(
    claim: ClaimSpec,
    grid: Grid,
    sigma: float,
    curves: CoefficientCurves,
    T: float,
    dtau: float = DEFAULT_DTAU,
    config: ExpIntConfig = ExpIntConfig(),
    rule: str = "paper",
    epsilon: float | None = None,
    origin: float = 0.0,
) -> PricingSurface:
    if not sigma > 0:
        raise BadParameters(f"Merton volatility must be positive, got {sigma}")
    surface = march_surface(
        claim, grid, lambda tau: sigma, curves, T, T, dtau, config, rule, epsilon, origin
    )
    return surface.with_values(surface.values, provenance={"kind": "merton", "sigma": sigma})


# ---------------------------------------------------------------------------
# stochastic (T > L)


@dataclass
class StochasticReport:
    n_samples: int
    n_used: int
    excluded_paths: list[int]
    failed_samples: list[tuple[int, str]]
    clamp_fraction: float


def path_sigma(volmodel: VolatilityModel, memory: MemoryPath, times, values, T, L) -> Callable:
    """``sigma(tau) = g(V(T - tau - L))`` along one simulated path."""

    def sigma_at(tau: float) -> float:
        lag = T - tau - L
        if lag <= 0:
            return float(volmodel.lagged(memory(max(lag, -L)), memory.origin + lag))
        return float(volmodel(np.interp(lag, times, values)))

    return sigma_at


def solve_surface_stochastic(
    claim: ClaimSpec,
    grid: Grid,
    volmodel: VolatilityModel,
    model: SddeModel,
    scheme: SchemeConfig,
    T: float,
    L: float,
    n_samples: int,
    seed: int,
    dtau: float = DEFAULT_DTAU,
    config: ExpIntConfig = ExpIntConfig(),
    rule: str = "paper",
    epsilon: float | None = None,
    curves: CoefficientCurves | None = None,
    workers: int | None = None,
    keep_samples: bool = False,
):
    """Nested Monte Carlo: one firm path, one PDE solve per sample.

    Returns ``(mean, stddev, report)`` surfaces, plus the list of per-sample
    surfaces when ``keep_samples`` is set.  Samples are reduced in index
    order, so the result does not depend on the worker count.
    """
    if not T > L:
        raise BadParameters(f"stochastic solve needs T > L, got T={T}, L={L}")
    if n_samples < 1:
        raise BadParameters("n_samples must be >= 1")
    if volmodel.uses_time:
        raise LagOutOfMemory(
            f"{volmodel.kind} is defined on calendar time inside the memory window only"
        )
    if curves is None:
        curves = CoefficientCurves(model.alpha, model.C, StepCurve.constant(0.0), model.alpha)
    ensemble = run_ensemble(model, scheme, n_samples, seed, workers)
    excluded = set(ensemble.excluded)
    memory = model.memory
    span = L

    def solve(i: int):
        sigma_at = path_sigma(volmodel, memory, ensemble.times, ensemble.paths[i], T, L)
        return march_surface(
            claim, grid, sigma_at, curves, T, span, dtau, config, rule, epsilon, memory.origin
        )

    todo = [i for i in range(n_samples) if i not in excluded]
    results: dict[int, object] = {}

    def run(idx):
        for j in idx:
            i = todo[j]
            try:
                results[i] = solve(i)
            except NumericalError as exc:
                results[i] = exc

    n_workers = min(worker_count(workers), max(1, len(todo)))
    chunks = _chunks(len(todo), n_workers) if todo else []
    if len(chunks) <= 1:
        for c in chunks:
            run(c)
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            for fut in [pool.submit(run, c) for c in chunks]:
                fut.result()

    mean = m2 = None
    count = 0
    failed = []
    template = None
    samples = []
    for i in todo:
        res = results[i]
        if isinstance(res, Exception):
            failed.append((i, str(res)))
            logger.warning("sample %d skipped: %s", i, res)
            continue
        x = res.values
        template = res
        count += 1
        if mean is None:
            mean = x.copy()
            m2 = np.zeros_like(x)
        else:
            delta = x - mean
            mean += delta / count
            m2 += delta * (x - mean)
        if keep_samples:
            samples.append(res)
    if count == 0:
        raise AllPathsExcluded(f"no usable samples out of {n_samples}")

    lags = T - template.taus - L
    lag_vals = [
        np.interp(lags[lags > 0], ensemble.times, ensemble.paths[i]) for i in todo
    ]
    clamp = volmodel.clamped_fraction(np.concatenate(lag_vals)) if lag_vals else 0.0
    std = np.sqrt(m2 / (count - 1)) if count > 1 else np.zeros_like(mean)
    prov = {"kind": "mc_mean", "n_samples": count, "seed": seed}
    mean_surface = template.with_values(mean, provenance=prov)
    std_surface = template.with_values(std, provenance={**prov, "kind": "mc_stddev"})
    report = StochasticReport(
        n_samples=n_samples,
        n_used=count,
        excluded_paths=sorted(excluded),
        failed_samples=failed,
        clamp_fraction=clamp,
    )
    if keep_samples:
        return mean_surface, std_surface, report, samples
    return mean_surface, std_surface, report


# ---------------------------------------------------------------------------
# calendar slices


def surface_slice(surface: PricingSurface, years, firm_values):
    """Model value at each ``(year, V)`` pair, nearest lattice point in both directions.

    Years outside the surface's calendar window are dropped.
    """
    cal = surface.calendar()
    lo, hi = cal.min(), cal.max()
    out = []
    for year, V in zip(years, firm_values):
        if year < lo - 1e-9 or year > hi + 1e-9:
            continue
        n = int(np.argmin(np.abs(cal - year)))
        i = surface.grid.nearest(V)
        out.append((float(year), float(surface.values[n, i]), float(V)))
    return out
