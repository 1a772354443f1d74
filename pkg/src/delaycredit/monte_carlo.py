"""Path ensembles and their pointwise statistics.

Paths are generated in chunks that may run on worker threads; every path
``i`` draws its noise from stream ``i`` and the statistics are reduced over
the assembled ``(n_paths, M+1)`` array, so results do not depend on the
worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import AllPathsExcluded, BadParameters
from .market_data import StepCurve
from .sdde import (
    NoiseStream,
    SchemeConfig,
    SddeModel,
    _march_delay,
    _march_merton,
    write_series_csv,
)

THREADS_ENV = "DELAYCREDIT_THREADS"


def worker_count(requested: int | None = None) -> int:
    """Number of worker threads, capped by ``DELAYCREDIT_THREADS`` when set."""
    n = requested or os.cpu_count() or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


@dataclass(frozen=True, eq=False)
class Ensemble:
    times: np.ndarray
    paths: np.ndarray
    seed: int
    excluded: tuple[int, ...]
    increments: np.ndarray | None = None

    @property
    def n_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def included(self) -> np.ndarray:
        mask = np.ones(self.n_paths, dtype=bool)
        mask[list(self.excluded)] = False
        return mask

    @property
    def n_included(self) -> int:
        return self.n_paths - len(self.excluded)


def _chunks(n: int, workers: int) -> list[range]:
    size = -(-n // workers)
    return [range(lo, min(lo + size, n)) for lo in range(0, n, size)]


def _noise_matrix(seed: int, n_paths: int, scheme: SchemeConfig, workers: int) -> np.ndarray:
    dW = np.empty((n_paths, scheme.M_steps))

    def fill(idx: range) -> None:
        for i in idx:
            dW[i] = NoiseStream(seed, i).increments(scheme.M_steps, scheme.dt)

    _run_chunks(fill, n_paths, workers)
    return dW


def _run_chunks(fn, n: int, workers: int) -> None:
    chunks = _chunks(n, workers)
    if len(chunks) == 1:
        fn(chunks[0])
        return
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        for fut in [pool.submit(fn, c) for c in chunks]:
            fut.result()


def _flag(paths: np.ndarray) -> tuple[int, ...]:
    with np.errstate(invalid="ignore"):
        bad = ~np.all(np.isfinite(paths), axis=1) | np.any(paths <= 0, axis=1)
    return tuple(int(i) for i in np.flatnonzero(bad))


def _ensemble(times, paths, seed, dW) -> Ensemble:
    excluded = _flag(paths)
    if len(excluded) == paths.shape[0]:
        raise AllPathsExcluded(f"all {paths.shape[0]} paths are non-positive or non-finite")
    return Ensemble(times=times, paths=paths, seed=seed, excluded=excluded, increments=dW)


def run_ensemble(
    model: SddeModel,
    scheme: SchemeConfig,
    n_paths: int,
    seed: int,
    workers: int | None = None,
) -> Ensemble:
    if n_paths < 1:
        raise BadParameters("n_paths must be >= 1")
    scheme.check(model.T, model.L)
    workers = worker_count(workers)
    dW = _noise_matrix(seed, n_paths, scheme, workers)
    paths = np.empty((n_paths, scheme.M_steps + 1))

    def march(idx: range) -> None:
        paths[idx.start : idx.stop], _ = _march_delay(model, scheme, dW[idx.start : idx.stop])

    _run_chunks(march, n_paths, workers)
    times = np.arange(scheme.M_steps + 1) * scheme.dt
    return _ensemble(times, paths, seed, dW)


def run_merton_ensemble(
    V0: float,
    alpha: StepCurve | float,
    C: StepCurve | float,
    sigma: float,
    scheme: SchemeConfig,
    n_paths: int,
    seed: int,
    origin: float = 0.0,
    workers: int | None = None,
) -> Ensemble:
    if n_paths < 1:
        raise BadParameters("n_paths must be >= 1")
    if not sigma > 0:
        raise BadParameters(f"Merton volatility must be positive, got {sigma}")
    alpha = alpha if isinstance(alpha, StepCurve) else StepCurve.constant(alpha)
    C = C if isinstance(C, StepCurve) else StepCurve.constant(C)
    workers = worker_count(workers)
    dW = _noise_matrix(seed, n_paths, scheme, workers)
    paths = np.empty((n_paths, scheme.M_steps + 1))

    def march(idx: range) -> None:
        sl = slice(idx.start, idx.stop)
        paths[sl], _ = _march_merton(V0, alpha, C, sigma, scheme, dW[sl], origin)

    _run_chunks(march, n_paths, workers)
    times = np.arange(scheme.M_steps + 1) * scheme.dt
    return _ensemble(times, paths, seed, dW)


def _included_paths(ensemble: Ensemble) -> np.ndarray:
    if ensemble.n_included < 1:
        raise AllPathsExcluded("ensemble has no included paths")
    return ensemble.paths[ensemble.included]


def mean_path(ensemble: Ensemble) -> np.ndarray:
    # np.sum over axis 0 reduces rows in index order for every column
    paths = _included_paths(ensemble)
    return np.sum(paths, axis=0) / paths.shape[0]


def stddev_path(ensemble: Ensemble) -> np.ndarray:
    """Sample standard deviation (ddof=1); zero for a single included path."""
    paths = _included_paths(ensemble)
    n = paths.shape[0]
    if n == 1:
        return np.zeros(paths.shape[1])
    dev = paths - mean_path(ensemble)
    return np.sqrt(np.sum(dev * dev, axis=0) / (n - 1))


def confidence_band(ensemble: Ensemble, level: float = 0.95) -> tuple[np.ndarray, np.ndarray]:
    """Normal-approximation band for the mean: ``mean +- z * sd / sqrt(n)``."""
    if not 0 < level < 1:
        raise BadParameters(f"confidence level must lie in (0, 1), got {level}")
    z = norm.ppf(0.5 + level / 2)
    m = mean_path(ensemble)
    half = z * stddev_path(ensemble) / np.sqrt(ensemble.n_included)
    return m - half, m + half


def write_summary_csv(ensemble: Ensemble, target, level: float = 0.95, comment=None, t_offset=0.0):
    lower, upper = confidence_band(ensemble, level)
    write_series_csv(
        target,
        ("t", "mean", "stddev", "lower", "upper", "n_included"),
        [
            ensemble.times + t_offset,
            mean_path(ensemble),
            stddev_path(ensemble),
            lower,
            upper,
            np.full(len(ensemble.times), ensemble.n_included),
        ],
        comment,
    )


def write_paths_csv(ensemble: Ensemble, target, comment=None, t_offset=0.0) -> None:
    header = ["t"] + [f"V_{i}" for i in range(ensemble.n_paths)]
    write_series_csv(target, header, [ensemble.times + t_offset, *ensemble.paths], comment)
