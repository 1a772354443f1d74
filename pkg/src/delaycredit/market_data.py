"""Firm time series: loading, validation, memory paths and volatility fits.

Calendar time is measured in (fractional) years throughout.  Model time
``t`` is calendar time minus the origin, so the memory path lives on
``[-L, 0]`` and the forecast on ``[0, T]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline, make_interp_spline

from .errors import (
    DtNotAligned,
    MissingColumn,
    NObsTooSmall,
    NonMonotoneYears,
    NonPositiveValue,
    TooFewKnots,
    WindowNotCovered,
)

COLUMNS = ("year", "r", "sigma", "n_obs", "B", "V", "C", "C_y")
MIN_DAILY_RETURNS = 150
YEAR_TOL = 1e-9

VOL_KINDS = (
    "time_interp_linear",
    "time_interp_quadratic",
    "time_interp_spline",
    "value_fit_quadratic",
    "constant_mean",
)
TIME_KINDS = VOL_KINDS[:3]


@dataclass(frozen=True)
class YearRow:
    year: float
    r: float
    sigma: float
    n_obs: int
    B: float
    V: float
    C: float
    C_y: float


@dataclass(frozen=True)
class FirmSeries:
    firm_id: str
    rows: tuple[YearRow, ...]

    def __post_init__(self):
        _validate_rows(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.rows], dtype=float)

    @property
    def years(self) -> np.ndarray:
        return self.column("year")

    def value_at(self, year: float, name: str = "V") -> float:
        """Linear interpolation of a column in calendar time (held flat outside)."""
        return float(np.interp(year, self.years, self.column(name)))

    def row_for(self, year: float) -> YearRow:
        """Row whose yearly interval ``[year_k, year_k+1)`` contains ``year``."""
        years = self.years
        k = int(np.searchsorted(years, year + YEAR_TOL, side="right")) - 1
        return self.rows[min(max(k, 0), len(self.rows) - 1)]


def _validate_rows(rows: Sequence[YearRow]) -> None:
    for prev, row in zip(rows, rows[1:]):
        if not row.year > prev.year:
            raise NonMonotoneYears(f"years must be strictly increasing: {prev.year} then {row.year}")
    for row in rows:
        if row.n_obs < MIN_DAILY_RETURNS:
            raise NObsTooSmall(
                f"year {row.year}: n_obs={row.n_obs} < {MIN_DAILY_RETURNS} daily returns"
            )
        values = (row.r, row.sigma, row.B, row.V, row.C, row.C_y)
        if not all(math.isfinite(x) for x in values):
            raise NonPositiveValue(f"year {row.year}: non-finite entry")
        if row.sigma <= 0 or row.V <= 0:
            raise NonPositiveValue(f"year {row.year}: sigma and V must be > 0")
        if row.B < 0 or row.r < 0:
            raise NonPositiveValue(f"year {row.year}: B and r must be >= 0")


def load_firm_csv(path: str | Path, firm_id: str | None = None) -> FirmSeries:
    """Read a firm CSV with header ``year,r,sigma,n_obs,B,V,C,C_y``.

    Lines starting with ``#`` are ignored.  Rows are returned sorted by year;
    duplicated years raise :class:`NonMonotoneYears`.
    """
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        lines = [line for line in fh if line.strip() and not line.lstrip().startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != COLUMNS:
        raise MissingColumn(f"{path}: expected header {','.join(COLUMNS)}, got {header}")

    rows = []
    for lineno, record in enumerate(reader, start=2):
        if len(record) != len(COLUMNS):
            raise MissingColumn(f"{path}:{lineno}: expected {len(COLUMNS)} fields")
        try:
            raw = dict(zip(COLUMNS, (x.strip() for x in record)))
            n_obs = float(raw.pop("n_obs"))
            rows.append(YearRow(n_obs=int(n_obs), **{k: float(v) for k, v in raw.items()}))
        except ValueError as exc:
            raise NonPositiveValue(f"{path}:{lineno}: {exc}") from None
    if len(rows) < 2:
        raise MissingColumn(f"{path}: need at least 2 data rows, got {len(rows)}")
    rows.sort(key=lambda row: row.year)
    return FirmSeries(firm_id=firm_id or path.stem, rows=tuple(rows))


def write_firm_csv(series: FirmSeries, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in series.rows:
            writer.writerow([repr(getattr(row, c)) for c in COLUMNS])


# ---------------------------------------------------------------------------
# memory path


@dataclass(frozen=True, eq=False)
class MemoryPath:
    """Firm value on ``[-L, 0]``, linear between knots.

    ``knots`` are model times (``s = year - origin``), strictly increasing,
    starting at ``-L`` and ending at ``0``.
    """

    L: float
    knots: np.ndarray
    values: np.ndarray
    origin: float = 0.0

    def __post_init__(self):
        if not self.L > 0:
            raise WindowNotCovered("memory length L must be positive")
        if abs(self.knots[0] + self.L) > 1e-12 * max(1.0, self.L) or self.knots[-1] != 0.0:
            raise WindowNotCovered("memory knots must span exactly [-L, 0]")
        if np.any(self.values <= 0) or not np.all(np.isfinite(self.values)):
            raise NonPositiveValue("memory values must be finite and > 0")

    def __call__(self, s):
        return np.interp(s, self.knots, self.values)

    @property
    def v0(self) -> float:
        return float(self.values[-1])

    @classmethod
    def constant(cls, value: float, L: float) -> "MemoryPath":
        return cls(L=L, knots=np.array([-L, 0.0]), values=np.array([value, value]))


def _window_rows(series: FirmSeries, origin: float, L: float) -> list[YearRow]:
    if not L > 0:
        raise WindowNotCovered(f"delay L must be positive, got {L}")
    years = series.years
    lo, hi = origin - L, origin
    if years[0] > lo + YEAR_TOL or years[-1] < hi - YEAR_TOL:
        raise WindowNotCovered(
            f"memory window [{lo}, {hi}] not covered by data years [{years[0]}, {years[-1]}]"
        )
    return [row for row in series.rows if lo - YEAR_TOL <= row.year <= hi + YEAR_TOL]


def build_memory_path(series: FirmSeries, origin: float, L: float) -> MemoryPath:
    rows = _window_rows(series, origin, L)
    s = [row.year - origin for row in rows if -L + YEAR_TOL < row.year - origin < -YEAR_TOL]
    knots = np.array([-L, *s, 0.0])
    values = np.interp(knots + origin, series.years, series.column("V"))
    return MemoryPath(L=L, knots=knots, values=values, origin=origin)


# ---------------------------------------------------------------------------
# volatility


@dataclass(frozen=True, eq=False)
class VolatilityModel:
    """Bounded volatility function ``g``.

    Time kinds take calendar time as their argument; ``value_fit_quadratic``
    takes firm value; ``constant_mean`` ignores its argument.  Every
    evaluation is clamped to ``[g_min, g_max]``.
    """

    kind: str
    g_min: float
    g_max: float
    knots: np.ndarray = field(default_factory=lambda: np.empty(0))
    coefficients: np.ndarray = field(default_factory=lambda: np.empty(0))
    _interp: object = field(default=None, repr=False, compare=False)

    @property
    def uses_time(self) -> bool:
        return self.kind in TIME_KINDS

    def raw(self, x):
        """Unclamped evaluation (may leave ``[g_min, g_max]`` or be NaN)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "constant_mean":
            return np.full_like(x, self.coefficients[0])
        if self.kind == "value_fit_quadratic":
            a, b, c = self.coefficients
            return a + b * x + c * x * x
        return self._interp(x)

    def __call__(self, x):
        raw = self.raw(x)
        # NaN inputs (e.g. extrapolating splines) fall back to the upper bound
        raw = np.where(np.isfinite(raw), raw, self.g_max)
        out = np.clip(raw, self.g_min, self.g_max)
        return float(out) if out.ndim == 0 else out

    def clamped_fraction(self, x) -> float:
        raw = np.atleast_1d(self.raw(x))
        if raw.size == 0:
            return 0.0
        with np.errstate(invalid="ignore"):
            outside = ~np.isfinite(raw) | (raw < self.g_min) | (raw > self.g_max)
        return float(np.mean(outside))

    def lagged(self, value, calendar_time):
        """Evaluate at a lagged state, picking the argument this kind expects."""
        return self(calendar_time if self.uses_time else value)

    @classmethod
    def constant(cls, sigma: float) -> "VolatilityModel":
        return cls("constant_mean", sigma, sigma, coefficients=np.array([sigma]))


def fit_volatility(series: FirmSeries, origin: float, L: float, kind: str) -> VolatilityModel:
    if kind not in VOL_KINDS:
        raise ValueError(f"unknown volatility kind {kind!r}; expected one of {VOL_KINDS}")
    rows = _window_rows(series, origin, L)
    t = np.array([row.year for row in rows])
    sigma = np.array([row.sigma for row in rows])
    V = np.array([row.V for row in rows])
    g_min, g_max = float(sigma.min()), float(sigma.max())

    need = {"time_interp_linear": 2, "constant_mean": 1}.get(kind, 3)
    if len(rows) < need:
        raise TooFewKnots(f"{kind} needs >= {need} memory rows, window has {len(rows)}")

    if kind == "constant_mean":
        return VolatilityModel(kind, g_min, g_max, coefficients=np.array([sigma.mean()]))
    if kind == "value_fit_quadratic":
        design = np.column_stack([np.ones_like(V), V, V * V])
        coef, *_ = np.linalg.lstsq(design, sigma, rcond=None)
        return VolatilityModel(kind, g_min, g_max, knots=V, coefficients=coef)
    if kind == "time_interp_spline":
        interp = CubicSpline(t, sigma, extrapolate=True)
    else:
        k = 1 if kind == "time_interp_linear" else 2
        interp = make_interp_spline(t, sigma, k=k)
    return VolatilityModel(kind, g_min, g_max, knots=t, coefficients=sigma, _interp=interp)


# ---------------------------------------------------------------------------
# piecewise-constant coefficients


@dataclass(frozen=True, eq=False)
class StepCurve:
    """Right-continuous step function of calendar time.

    Constant on ``[starts[k], starts[k+1])``; held flat before the first and
    after the last start.
    """

    starts: np.ndarray
    values: np.ndarray

    def __call__(self, t):
        k = np.searchsorted(self.starts, np.asarray(t, dtype=float) + YEAR_TOL, side="right") - 1
        out = self.values[np.clip(k, 0, len(self.values) - 1)]
        return float(out) if out.ndim == 0 else out

    def integral(self, a: float, b: float) -> float:
        """Exact integral over ``[a, b]`` (negative when ``b < a``)."""
        if b < a:
            return -self.integral(b, a)
        cuts = np.concatenate([[a], self.starts[(self.starts > a) & (self.starts < b)], [b]])
        mids = 0.5 * (cuts[:-1] + cuts[1:])
        k = np.clip(np.searchsorted(self.starts, mids, side="right") - 1, 0, len(self.values) - 1)
        return float(np.sum(self.values[k] * np.diff(cuts)))

    @classmethod
    def constant(cls, value: float) -> "StepCurve":
        return cls(np.array([0.0]), np.array([float(value)]))

    def sample(self, times) -> np.ndarray:
        return np.asarray(self(np.asarray(times, dtype=float)), dtype=float)


@dataclass(frozen=True)
class CoefficientCurves:
    r: StepCurve
    C: StepCurve
    C_y: StepCurve
    alpha: StepCurve
    dt: float | None = None

    @classmethod
    def constant(cls, r: float = 0.0, C: float = 0.0, C_y: float = 0.0, alpha: float | None = None):
        return cls(
            StepCurve.constant(r),
            StepCurve.constant(C),
            StepCurve.constant(C_y),
            StepCurve.constant(r if alpha is None else alpha),
        )


def check_dt_aligned(dt: float) -> int:
    """Return the number of steps per year, raising if ``dt`` does not divide 1."""
    if not dt > 0:
        raise DtNotAligned(f"dt must be positive, got {dt}")
    per_year = round(1.0 / dt)
    if per_year < 1 or abs(per_year * dt - 1.0) > 1e-9:
        raise DtNotAligned(f"dt={dt} does not divide one year")
    return per_year


def resample_coefficients(
    series: FirmSeries, dt: float, alpha: StepCurve | float | None = None
) -> CoefficientCurves:
    """Yearly ``r``, ``C``, ``C_y`` as step curves for a lattice of spacing ``dt``.

    ``alpha`` defaults to the risk-free rate of the same year.
    """
    check_dt_aligned(dt)
    starts = series.years
    r = StepCurve(starts, series.column("r"))
    if alpha is None:
        alpha_curve = r
    elif isinstance(alpha, StepCurve):
        alpha_curve = alpha
    else:
        alpha_curve = StepCurve.constant(alpha)
    return CoefficientCurves(
        r=r,
        C=StepCurve(starts, series.column("C")),
        C_y=StepCurve(starts, series.column("C_y")),
        alpha=alpha_curve,
        dt=dt,
    )
