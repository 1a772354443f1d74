"""Cell-centred discretisation of the claim pricing PDE in the firm-value direction.

In time-to-maturity ``tau`` the claim value solves

    f_tau = 1/2 s(tau)^2 v^2 f_vv + ((r v - C) f)_v - 2 r f + source(tau)

on ``[0, V_max]`` with Dirichlet data at both ends, where the convection term
is written in conservation form (the extra ``-r f`` it produces is absorbed
into the reaction).  Diffusion uses second differences with one-sided
half-cell stencils in the first and last cells; convection uses face-flux
upwinding.  The result is the semi-discrete system ``f' = A f + b``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import BadParameters, NonFiniteCoefficient
from .expint import Tridiagonal

UPWIND_RULES = ("paper", "standard")


@dataclass(frozen=True, eq=False)
class Grid:
    N: int
    V_max: float

    def __post_init__(self):
        if self.N < 3:
            raise BadParameters(f"grid needs N >= 3 cells, got {self.N}")
        if not self.V_max > 0:
            raise BadParameters("V_max must be positive")

    @property
    def h(self) -> float:
        return self.V_max / self.N

    @property
    def centers(self) -> np.ndarray:
        return (2 * np.arange(1, self.N + 1) - 1) * self.h / 2

    @property
    def faces(self) -> np.ndarray:
        """Face positions ``0, h, ..., V_max`` (``N + 1`` entries)."""
        return np.arange(self.N + 1) * self.h

    def nearest(self, v: float) -> int:
        return int(np.clip(np.floor(v / self.h), 0, self.N - 1))

    def same_as(self, other: "Grid") -> bool:
        return self.N == other.N and self.V_max == other.V_max


def build_grid(B: float, N: int, vmax_multiple: float = 4.0) -> Grid:
    if not B > 0:
        raise BadParameters(f"promised payment B must be positive, got {B}")
    if not 3 <= vmax_multiple <= 4:
        raise BadParameters(f"vmax_multiple must lie in [3, 4], got {vmax_multiple}")
    return Grid(N=N, V_max=vmax_multiple * B)


# ---------------------------------------------------------------------------
# terminal payoff smoothing


@dataclass(frozen=True)
class PayoffSmoother:
    """C^4 degree-8 polynomial blend of ``max(x, 0)`` on ``(-eps, eps)``."""

    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise BadParameters("smoothing width must be positive")

    @property
    def coefficients(self) -> np.ndarray:
        e = self.epsilon
        c = np.zeros(10)
        c[0] = 35 * e / 256
        c[1] = 0.5
        c[2] = 35 / (64 * e)
        c[4] = -35 / (128 * e**3)
        c[6] = 7 / (64 * e**5)
        c[8] = -5 / (256 * e**7)
        return c

    def polynomial(self, x, derivative: int = 0):
        """The blending polynomial (or one of its derivatives), unrestricted in ``x``."""
        poly = np.polynomial.Polynomial(self.coefficients)
        return poly.deriv(derivative)(x) if derivative else poly(x)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        e = self.epsilon
        out = np.where(x >= e, x, 0.0)
        inside = np.abs(x) < e
        if np.any(inside):
            out = np.where(inside, self.polynomial(np.where(inside, x, 0.0)), out)
        return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# claims


@dataclass(frozen=True)
class ClaimSpec:
    """Equity (call on firm value, strike ``B``) or debt (``min(v, B)``)."""

    kind: str
    B: float

    def __post_init__(self):
        if self.kind not in ("equity", "debt"):
            raise BadParameters(f"claim kind must be 'equity' or 'debt', got {self.kind!r}")
        if self.B < 0:
            raise BadParameters("B must be >= 0")

    def terminal(self, v, smoother: PayoffSmoother | None = None):
        v = np.asarray(v, dtype=float)
        if smoother is None:
            call = np.maximum(v - self.B, 0.0)
        else:
            call = smoother(v - self.B)
        return call if self.kind == "equity" else v - call

    def lower_bc(self, tau: float = 0.0) -> float:
        return 0.0

    def upper_bc(self, V_max: float, discount: float) -> float:
        """Far-field value; ``discount`` is ``exp(-int_{T-tau}^T r)``."""
        if self.kind == "equity":
            return V_max - self.B * discount
        return self.B * discount

    def source(self, C: float, C_y: float) -> float:
        return C - C_y if self.kind == "equity" else C_y


# ---------------------------------------------------------------------------
# stencils


def diffusion_row(i: int, grid: Grid, sigma_eff: float):
    """Diffusion coefficients of (0-based) row ``i``.

    Returns ``(sub, diag, sup, w_lower, w_upper)``; the last two multiply the
    Dirichlet values at ``v = 0`` and ``v = V_max`` and go into ``k``.
    """
    N, h = grid.N, grid.h
    D = sigma_eff**2 * grid.centers[i] ** 2
    if i == 0:
        a = 2 * D / (3 * h * h)
        return 0.0, -3 * a, a, 2 * a, 0.0
    if i == N - 1:
        a = 2 * D / (3 * h * h)
        return a, -3 * a, 0.0, 0.0, 2 * a
    c = D / (2 * h * h)
    return c, -2 * c, c, 0.0, 0.0


def _face_cell(face_flux: float, left_cell: int, rule: str) -> int:
    """Cell index feeding the face between ``left_cell`` and ``left_cell + 1``."""
    if face_flux >= 0:
        return left_cell
    return left_cell - 1 if rule == "paper" else left_cell + 1


def convection_row(i: int, grid: Grid, r_tau: float, C_tau: float, rule: str = "paper"):
    """Upwinded conservative convection plus the ``-2 r`` reaction for row ``i``.

    Returns ``(sub, diag, sup, w_lower, w_upper)`` like :func:`diffusion_row`.
    Cell references beyond the domain take the Dirichlet value.  Under the
    ``paper`` rule a negative flux on the left face would reach two cells
    back; it is kept inside the stencil by using cell ``i - 1``.
    """
    if rule not in UPWIND_RULES:
        raise BadParameters(f"upwind rule must be one of {UPWIND_RULES}, got {rule!r}")
    N, h = grid.N, grid.h
    phi_right = r_tau * grid.faces[i + 1] - C_tau
    phi_left = r_tau * grid.faces[i] - C_tau
    weights = {i - 1: 0.0, i: -2.0 * r_tau, i + 1: 0.0}
    lower = upper = 0.0

    right = _face_cell(phi_right, i, rule)
    left = _face_cell(phi_left, i - 1, rule)
    left = min(max(left, i - 1), i)

    for cell, w in ((right, phi_right / h), (left, -phi_left / h)):
        if cell < 0:
            lower += w
        elif cell >= N:
            upper += w
        else:
            weights[cell] += w
    return weights[i - 1], weights[i], weights[i + 1], lower, upper


# ---------------------------------------------------------------------------
# assembly


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    A: Tridiagonal
    source: np.ndarray
    k: np.ndarray
    w_lower: np.ndarray | None = None
    w_upper: np.ndarray | None = None

    @property
    def sub(self) -> np.ndarray:
        return self.A.sub

    @property
    def diag(self) -> np.ndarray:
        return self.A.diag

    @property
    def sup(self) -> np.ndarray:
        return self.A.sup

    @property
    def b(self) -> np.ndarray:
        return self.source + self.k

    def b_with_boundary(self, lower: float, upper: float) -> np.ndarray:
        """Source with different Dirichlet values plugged into the same stencils."""
        return self.source + self.w_lower * lower + self.w_upper * upper

    def to_csv(self, target, comment: str | None = None) -> None:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["i", "sub", "diag", "super", "b"])
            b = self.b
            for i in range(self.A.N):
                row = (self.sub[i], self.diag[i], self.sup[i], b[i])
                writer.writerow([i + 1, *(format(float(x), ".17g") for x in row)])


def _convection_bands(grid: Grid, r: float, C: float, rule: str):
    """Vectorised form of :func:`convection_row` over all rows."""
    N, h = grid.N, grid.h
    phi = r * grid.faces - C  # phi[j]: face j (between cells j-1 and j)
    sub = np.zeros(N)
    diag = np.full(N, -2.0 * r)
    sup = np.zeros(N)
    w_lower = np.zeros(N)
    w_upper = np.zeros(N)
    idx = np.arange(N)

    # right face of row i is face i+1
    pr = phi[1:] / h
    pos = pr >= 0
    diag[pos] += pr[pos]
    neg = ~pos
    if rule == "paper":
        tgt = idx[neg] - 1
        inner = tgt >= 0
        sub[idx[neg][inner]] += pr[neg][inner]
        w_lower[idx[neg][~inner]] += pr[neg][~inner]
    else:
        tgt = idx[neg] + 1
        inner = tgt < N
        sup[idx[neg][inner]] += pr[neg][inner]
        w_upper[idx[neg][~inner]] += pr[neg][~inner]

    # left face of row i is face i; the default rule is clamped to cell i-1
    pl = -phi[:-1] / h
    use_left = (phi[:-1] >= 0) | (rule == "paper")
    rows_l = idx[use_left]
    ghost = rows_l == 0
    sub[rows_l[~ghost]] += pl[use_left][~ghost]
    w_lower[rows_l[ghost]] += pl[use_left][ghost]
    diag[idx[~use_left]] += pl[~use_left]
    return sub, diag, sup, w_lower, w_upper


def _diffusion_bands(grid: Grid, sigma_eff: float):
    N, h = grid.N, grid.h
    D = sigma_eff**2 * grid.centers**2
    c = D / (2 * h * h)
    sub, diag, sup = c.copy(), -2 * c, c.copy()
    a0 = 2 * D[0] / (3 * h * h)
    aN = 2 * D[-1] / (3 * h * h)
    sub[0], diag[0], sup[0] = 0.0, -3 * a0, a0
    sub[-1], diag[-1], sup[-1] = aN, -3 * aN, 0.0
    w_lower = np.zeros(N)
    w_upper = np.zeros(N)
    w_lower[0] = 2 * a0
    w_upper[-1] = 2 * aN
    return sub, diag, sup, w_lower, w_upper


def assemble(
    grid: Grid,
    claim: ClaimSpec,
    tau: float,
    sigma_eff: float,
    r_tau: float,
    C_tau: float,
    C_y_tau: float,
    discount: float = 1.0,
    rule: str = "paper",
) -> DiscreteOperator:
    """Build ``A(tau)`` and ``b(tau) = source + k(tau)``.

    ``discount`` is ``exp(-int_{T-tau}^T r(s) ds)`` and sets the far-field
    Dirichlet value.
    """
    if rule not in UPWIND_RULES:
        raise BadParameters(f"upwind rule must be one of {UPWIND_RULES}, got {rule!r}")
    coeffs = (tau, sigma_eff, r_tau, C_tau, C_y_tau, discount)
    if not np.all(np.isfinite(coeffs)):
        raise NonFiniteCoefficient(f"non-finite PDE coefficient at tau={tau}: {coeffs}")
    d = _diffusion_bands(grid, sigma_eff)
    c = _convection_bands(grid, r_tau, C_tau, rule)
    sub, diag, sup, w_lower, w_upper = (x + y for x, y in zip(d, c))
    sub[0] = 0.0
    sup[-1] = 0.0
    k = w_lower * claim.lower_bc(tau) + w_upper * claim.upper_bc(grid.V_max, discount)
    source = np.full(grid.N, claim.source(C_tau, C_y_tau))
    A = Tridiagonal(sub, diag, sup)
    if not (np.all(np.isfinite(diag)) and np.all(np.isfinite(k))):
        raise NonFiniteCoefficient(f"non-finite operator entries at tau={tau}")
    return DiscreteOperator(A=A, source=source, k=k, w_lower=w_lower, w_upper=w_upper)
