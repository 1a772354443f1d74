"""Theta-scheme simulation of the delayed firm-value SDE and the Merton SDE.

The delayed model is

    dV(t) = (alpha(t) V(t) V(t-L) - C(t)) dt + g(V(t-L)) V(t) dW(t),
    V(t) = phi(t) on [-L, 0],

and the Merton baseline replaces the drift by ``alpha V - C`` and ``g`` by a
constant.  Drift is weighted by ``theta`` between the current and next step;
noise is always explicit.  Because the implicit term only multiplies the
already known lagged value ``V_{n-m+1}``, each step is a scalar linear solve.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import BadParameters, LagOutOfMemory, NonFiniteValue, SingularImplicitStep
from .market_data import MemoryPath, StepCurve, VolatilityModel

SINGULAR_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SddeModel:
    alpha: StepCurve
    C: StepCurve
    g: VolatilityModel
    memory: MemoryPath
    L: float
    T: float

    def __post_init__(self):
        if not (self.L > 0 and self.T > 0):
            raise BadParameters(f"need L > 0 and T > 0, got L={self.L}, T={self.T}")
        if abs(self.memory.L - self.L) > 1e-12 * self.L:
            raise BadParameters("memory path must span exactly [-L, 0]")
        if self.g.uses_time and self.T > self.L * (1 + 1e-12):
            raise LagOutOfMemory(
                f"{self.g.kind} volatility is a function of calendar time inside the memory "
                f"window; T={self.T} > L={self.L} needs a value-based fit (value_fit_quadratic)"
            )

    @property
    def origin(self) -> float:
        return self.memory.origin


@dataclass(frozen=True)
class SchemeConfig:
    theta: float
    M_steps: int
    dt: float
    m_lag: int

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise BadParameters(f"theta must lie in [0, 1], got {self.theta}")
        if self.m_lag < 1 or self.M_steps < 1:
            raise BadParameters("need m_lag >= 1 and M_steps >= 1")

    @classmethod
    def build(cls, T: float, L: float, dt: float, theta: float = 1.0) -> "SchemeConfig":
        """Lattice of spacing ``dt`` on [0, T] with ``L`` an exact multiple of ``dt``."""
        m_lag = round(L / dt)
        M_steps = round(T / dt)
        if m_lag < 1 or abs(L - m_lag * dt) > 1e-12 * L:
            raise BadParameters(f"L={L} is not a multiple of dt={dt}")
        if M_steps < 1 or abs(T - M_steps * dt) > 1e-12 * max(T, 1.0):
            raise BadParameters(f"T={T} is not a multiple of dt={dt}")
        return cls(theta=theta, M_steps=M_steps, dt=dt, m_lag=m_lag)

    def check(self, T: float, L: float) -> None:
        if abs(L - self.m_lag * self.dt) > 1e-12 * L:
            raise BadParameters(f"L={L} != m_lag*dt={self.m_lag * self.dt}")
        if abs(T - self.M_steps * self.dt) > 1e-12 * max(T, 1.0):
            raise BadParameters(f"T={T} != M_steps*dt={self.M_steps * self.dt}")


@dataclass(frozen=True)
class NoiseStream:
    """Brownian increments for one path, from a Philox stream keyed by (seed, stream_id)."""

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = (int(self.seed) % 2**64) | (int(self.stream_id) % 2**64) << 64
        return np.random.Generator(np.random.Philox(key=key))

    def increments(self, M_steps: int, dt: float) -> np.ndarray:
        return self.generator().standard_normal(M_steps) * math.sqrt(dt)


@dataclass(frozen=True, eq=False)
class Path:
    times: np.ndarray
    values: np.ndarray
    seed: int
    stream_id: int
    scheme: SchemeConfig
    flagged: bool = False
    failed_step: int | None = None
    increments: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self, target: str | Path, comment: str | None = None) -> None:
        write_series_csv(target, ("t", "V"), [self.times, self.values], comment)


def write_series_csv(target, header: Iterable[str], columns, comment: str | None = None) -> None:
    with open(target, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(header))
        for row in zip(*columns):
            writer.writerow([_fmt(x) for x in row])


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# single-step pieces


def lagged_value(values, memory: MemoryPath, n: int, m_lag: int, dt: float):
    """``V_{n-m}``: from the computed path when ``n >= m``, else from the memory path."""
    k = n - m_lag
    if k >= 0:
        return values[..., k]
    return memory(k * dt)


def step_theta(V_n, V_lag_n, V_lag_np1, alpha_n, alpha_np1, C_n, C_np1, g_eval, dW, theta, dt):
    """One theta step; returns ``V_{n+1}``.

    Works elementwise on arrays.  Raises :class:`SingularImplicitStep` when
    the implicit coefficient vanishes.
    """
    denom = 1.0 - theta * dt * alpha_np1 * V_lag_np1
    if np.any(np.abs(denom) < SINGULAR_TOL):
        raise SingularImplicitStep("implicit drift coefficient is singular; reduce dt")
    rhs = (
        V_n
        + dt * ((1.0 - theta) * (alpha_n * V_n * V_lag_n - C_n) - theta * C_np1)
        + g_eval * V_n * dW
    )
    return rhs / denom


# ---------------------------------------------------------------------------
# vectorised marching kernels (one row per path)


def _march_delay(model: SddeModel, scheme: SchemeConfig, dW: np.ndarray):
    """March all rows of ``dW`` (shape P x M) through the delayed theta scheme.

    Returns ``(values, failed)`` where ``failed[p]`` is the first step index
    at which row ``p`` hit a singular or non-finite step, or -1.
    """
    P, M = dW.shape
    dt, m, theta = scheme.dt, scheme.m_lag, scheme.theta
    t = np.arange(M + 1) * dt
    cal = model.origin + t
    alpha = model.alpha.sample(cal)
    C = model.C.sample(cal)
    mem = model.memory

    values = np.empty((P, M + 1))
    values[:, 0] = mem.v0
    failed = np.full(P, -1)
    with np.errstate(all="ignore"):
        for n in range(M):
            k = n - m
            V_lag = values[:, k] if k >= 0 else np.full(P, mem(k * dt))
            V_lag1 = values[:, k + 1] if k + 1 >= 0 else np.full(P, mem((k + 1) * dt))
            g = model.g.lagged(V_lag, model.origin + k * dt)
            denom = 1.0 - theta * dt * alpha[n + 1] * V_lag1
            V_n = values[:, n]
            rhs = (
                V_n
                + dt * ((1.0 - theta) * (alpha[n] * V_n * V_lag - C[n]) - theta * C[n + 1])
                + g * V_n * dW[:, n]
            )
            bad = np.abs(denom) < SINGULAR_TOL
            nxt = np.where(bad, np.nan, rhs / np.where(bad, 1.0, denom))
            newly = (failed < 0) & ~np.isfinite(nxt)
            failed[newly] = n
            values[:, n + 1] = nxt
    return values, failed


def _march_merton(V0, alpha: StepCurve, C: StepCurve, sigma, scheme: SchemeConfig, dW, origin=0.0):
    P, M = dW.shape
    dt, theta = scheme.dt, scheme.theta
    cal = origin + np.arange(M + 1) * dt
    a = alpha.sample(cal)
    c = C.sample(cal)
    values = np.empty((P, M + 1))
    values[:, 0] = V0
    failed = np.full(P, -1)
    with np.errstate(all="ignore"):
        for n in range(M):
            denom = 1.0 - theta * dt * a[n + 1]
            if abs(denom) < SINGULAR_TOL:
                raise SingularImplicitStep(f"singular implicit step at n={n}", step=n)
            V_n = values[:, n]
            rhs = (
                V_n
                + dt * ((1.0 - theta) * (a[n] * V_n - c[n]) - theta * c[n + 1])
                + sigma * V_n * dW[:, n]
            )
            nxt = rhs / denom
            newly = (failed < 0) & ~np.isfinite(nxt)
            failed[newly] = n
            values[:, n + 1] = nxt
    return values, failed


def _raise_on_failure(values: np.ndarray, failed: int, model: SddeModel | None, scheme) -> None:
    if failed < 0:
        return
    if model is not None:
        k = failed - scheme.m_lag + 1
        V_lag1 = values[k] if k >= 0 else model.memory(k * scheme.dt)
        a = model.alpha(model.origin + (failed + 1) * scheme.dt)
        if abs(1.0 - scheme.theta * scheme.dt * a * V_lag1) < SINGULAR_TOL:
            raise SingularImplicitStep(
                f"singular implicit step at n={failed}; reduce dt", step=failed
            )
    raise NonFiniteValue(f"non-finite firm value at step n={failed + 1}", step=failed)


def _path(times, row, noise, scheme, failed, dW) -> Path:
    finite = np.all(np.isfinite(row))
    flagged = (not finite) or bool(np.min(row) <= 0)
    return Path(
        times=times,
        values=row,
        seed=noise.seed,
        stream_id=noise.stream_id,
        scheme=scheme,
        flagged=flagged,
        failed_step=None if failed < 0 else int(failed),
        increments=dW,
    )


def simulate_path(model: SddeModel, scheme: SchemeConfig, noise: NoiseStream) -> Path:
    scheme.check(model.T, model.L)
    dW = noise.increments(scheme.M_steps, scheme.dt)
    values, failed = _march_delay(model, scheme, dW[None, :])
    _raise_on_failure(values[0], int(failed[0]), model, scheme)
    times = np.arange(scheme.M_steps + 1) * scheme.dt
    return _path(times, values[0], noise, scheme, int(failed[0]), dW)


def simulate_merton_path(
    V0: float,
    alpha: StepCurve | float,
    C: StepCurve | float,
    sigma: float,
    scheme: SchemeConfig,
    noise: NoiseStream,
    origin: float = 0.0,
) -> Path:
    if not sigma > 0:
        raise BadParameters(f"Merton volatility must be positive, got {sigma}")
    alpha = alpha if isinstance(alpha, StepCurve) else StepCurve.constant(alpha)
    C = C if isinstance(C, StepCurve) else StepCurve.constant(C)
    dW = noise.increments(scheme.M_steps, scheme.dt)
    values, failed = _march_merton(V0, alpha, C, sigma, scheme, dW[None, :], origin)
    _raise_on_failure(values[0], int(failed[0]), None, scheme)
    times = np.arange(scheme.M_steps + 1) * scheme.dt
    return _path(times, values[0], noise, scheme, int(failed[0]), dW)


def merton_exact_mean(V0: float, alpha: float, T: float) -> float:
    """Mean of V(T) for the Merton SDE with zero payout."""
    return V0 * math.exp(alpha * T)


def merton_exact_solution(V0: float, alpha: float, sigma: float, times, increments) -> np.ndarray:
    """Exact GBM path driven by the given Brownian increments (zero payout)."""
    W = np.concatenate([[0.0], np.cumsum(increments)])
    return V0 * np.exp((alpha - 0.5 * sigma * sigma) * np.asarray(times) + sigma * W)


def march_merton(
    V0: float,
    alpha: StepCurve | float,
    C: StepCurve | float,
    sigma: float,
    scheme: SchemeConfig,
    increments: np.ndarray,
    origin: float = 0.0,
) -> np.ndarray:
    """Merton theta scheme driven by given increments (rows are paths).

    Useful for strong-error studies where a coarse lattice reuses summed fine
    increments.
    """
    alpha = alpha if isinstance(alpha, StepCurve) else StepCurve.constant(alpha)
    C = C if isinstance(C, StepCurve) else StepCurve.constant(C)
    dW = np.atleast_2d(np.asarray(increments, dtype=float))
    values, _ = _march_merton(V0, alpha, C, sigma, scheme, dW, origin)
    return values


def march_delay(model: SddeModel, scheme: SchemeConfig, increments: np.ndarray) -> np.ndarray:
    """Delayed theta scheme driven by given increments (rows are paths)."""
    values, _ = _march_delay(model, scheme, np.atleast_2d(np.asarray(increments, dtype=float)))
    return values
