"""Exponential integrators for ``f' = A f + b(tau)`` with tridiagonal ``A``.

The workhorse is :func:`phi_action`, which evaluates

    phi_0(dt A) f + sum_{l>=1} dt**l phi_l(dt A) u_l

as one block of the exponential of an augmented matrix
``[[A, W], [0, J]]`` (``W`` holds the ``u_l`` in reverse order, ``J`` is the
nilpotent shift).  The exponential action is computed with an Arnoldi
projection and Expokit-style adaptive substepping, or densely for small
systems.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import BadParameters, BreakdownNotConverged

TAYLOR_THRESHOLD = 1.0
TAYLOR_TERMS = 20
DENSE_MAX_N = 64
MAX_REJECTIONS = 10
MAX_SUBSTEPS = 100_000


@dataclass(frozen=True)
class ExpIntConfig:
    krylov_dim: int = 10
    tol: float = 1e-6
    p: int = 2
    method: str = "auto"  # auto | krylov | dense

    def __post_init__(self):
        if self.krylov_dim < 2:
            raise BadParameters("krylov_dim must be >= 2")
        if not self.tol > 0:
            raise BadParameters("tol must be positive")
        if self.p not in (1, 2):
            raise BadParameters("p must be 1 or 2")
        if self.method not in ("auto", "krylov", "dense"):
            raise BadParameters(f"unknown method {self.method!r}")


# ---------------------------------------------------------------------------
# scalar phi functions


def phi_scalar(l: int, x: float) -> float:
    """``phi_l(x)`` with ``phi_0 = exp`` and ``phi_l(x) = x phi_{l+1}(x) + 1/l!``."""
    if l < 0:
        raise ValueError("order must be >= 0")
    x = float(x)
    if abs(x) < TAYLOR_THRESHOLD:
        # phi_l(x) = sum_k x^k / (k + l)!
        term = 1.0 / math.factorial(l)
        total = term
        for k in range(1, TAYLOR_TERMS):
            term *= x / (k + l)
            total += term
        return total
    value = math.exp(x)
    for j in range(l):
        value = (value - 1.0 / math.factorial(j)) / x
    return value


# ---------------------------------------------------------------------------
# tridiagonal operator


@dataclass(frozen=True, eq=False)
class Tridiagonal:
    """Row ``i`` reads ``sub[i] f[i-1] + diag[i] f[i] + sup[i] f[i+1]``.

    ``sub[0]`` and ``sup[-1]`` are ignored (kept at zero).
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray

    @property
    def N(self) -> int:
        return len(self.diag)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[1:] += self.sub[1:] * x[:-1]
        y[:-1] += self.sup[:-1] * x[1:]
        return y

    __matmul__ = matvec

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub[1:], -1) + np.diag(self.sup[:-1], 1)

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.sub) + np.abs(self.diag) + np.abs(self.sup)))

    @classmethod
    def from_dense(cls, M: np.ndarray) -> "Tridiagonal":
        n = M.shape[0]
        sub = np.zeros(n)
        sup = np.zeros(n)
        sub[1:] = np.diag(M, -1)
        sup[:-1] = np.diag(M, 1)
        return cls(sub, np.diag(M).copy(), sup)

    def scaled(self, c: float) -> "Tridiagonal":
        return Tridiagonal(c * self.sub, c * self.diag, c * self.sup)


@dataclass(frozen=True, eq=False)
class PhiCombination:
    """Right-hand side of a phi action: ``f`` and source terms ``u_1..u_p``."""

    f: np.ndarray
    terms: tuple[np.ndarray, ...]
    dt: float

    def __post_init__(self):
        n = len(self.f)
        if any(len(u) != n for u in self.terms):
            raise BadParameters("all phi-combination vectors must have the same length")
        if not self.dt > 0:
            raise BadParameters("step must be positive")

    def trimmed(self) -> "PhiCombination":
        terms = list(self.terms)
        while terms and not np.any(terms[-1]):
            terms.pop()
        return PhiCombination(self.f, tuple(terms), self.dt)


def _augmented(A, combo: PhiCombination):
    """Return ``(matvec, start, norm_inf, n)`` for the scaled augmented system."""
    n = len(combo.f)
    p = len(combo.terms)
    W = np.column_stack(combo.terms[::-1]) if p else np.zeros((n, 0))
    wmax = float(np.max(np.abs(W))) if p else 0.0
    eta = 2.0 ** -math.ceil(math.log2(wmax)) if wmax > 0 else 1.0
    W = eta * W
    start = np.zeros(n + p)
    start[:n] = combo.f
    if p:
        start[-1] = 1.0 / eta

    def matvec(x: np.ndarray) -> np.ndarray:
        y = np.empty_like(x)
        y[:n] = A.matvec(x[:n])
        if p:
            y[:n] += W @ x[n:]
            y[n:-1] = x[n + 1 :]
            y[-1] = 0.0
        return y

    rows = A.norm_inf() if isinstance(A, Tridiagonal) else float(np.max(np.sum(np.abs(A), 1)))
    wrow = float(np.max(np.sum(np.abs(W), 1))) if p else 0.0
    anorm = max(rows + wrow, 1.0 if p > 1 else 0.0)
    return matvec, start, anorm, n


def dense_phi_action(A, combo: PhiCombination) -> np.ndarray:
    """Dense evaluation through ``scipy.linalg.expm`` of the augmented matrix."""
    combo = combo.trimmed()
    dense = A.to_dense() if isinstance(A, Tridiagonal) else np.asarray(A, dtype=float)
    n = dense.shape[0]
    p = len(combo.terms)
    big = np.zeros((n + p, n + p))
    big[:n, :n] = dense
    for j, u in enumerate(combo.terms[::-1]):
        big[:n, n + j] = u
    for j in range(p - 1):
        big[n + j, n + j + 1] = 1.0
    start = np.zeros(n + p)
    start[:n] = combo.f
    if p:
        start[-1] = 1.0
    return (scipy.linalg.expm(combo.dt * big) @ start)[:n]


def _round_step(t: float) -> float:
    s = 10.0 ** (math.floor(math.log10(t)) - 1)
    return math.ceil(t / s) * s


def _expv(t: float, matvec, v: np.ndarray, anorm: float, m: int, tol: float) -> np.ndarray:
    """``exp(t A) v`` by Arnoldi with adaptive substeps; ``tol`` is absolute over [0, t]."""
    n = len(v)
    beta = float(np.linalg.norm(v))
    if beta == 0.0:
        return np.zeros_like(v)
    if anorm == 0.0:
        return v.copy()
    m = min(m, n)
    gamma, delta = 0.9, 1.2
    tol_rate = tol / t
    breakdown = 1e-12 * anorm
    fact = ((m + 1) / math.e) ** (m + 1) * math.sqrt(2 * math.pi * (m + 1))
    t_new = _round_step((1.0 / anorm) * ((fact * tol_rate) / (4 * beta * anorm)) ** (1.0 / m))

    w = v.copy()
    t_now = 0.0
    nstep = 0
    while t_now < t:
        nstep += 1
        if nstep > MAX_SUBSTEPS:
            raise BreakdownNotConverged(f"Krylov action did not finish in {MAX_SUBSTEPS} substeps")
        t_step = min(t - t_now, t_new)
        V = np.zeros((n, m + 1))
        H = np.zeros((m + 2, m + 2))
        V[:, 0] = w / beta
        k1, mb = 2, m
        for j in range(m):
            q = matvec(V[:, j])
            # classical Gram-Schmidt, applied twice
            Vj = V[:, : j + 1]
            h = Vj.T @ q
            q -= Vj @ h
            h2 = Vj.T @ q
            q -= Vj @ h2
            H[: j + 1, j] = h + h2
            s = float(np.linalg.norm(q))
            if s <= breakdown:
                k1, mb = 0, j + 1
                t_step = t - t_now
                break
            H[j + 1, j] = s
            V[:, j + 1] = q / s
        if k1:
            H[m + 1, m] = 1.0
            avnorm = float(np.linalg.norm(matvec(V[:, m])))

        xm = 1.0 / m
        for rejection in range(MAX_REJECTIONS + 1):
            mx = mb + k1
            F = scipy.linalg.expm(t_step * H[:mx, :mx])
            if k1 == 0:
                err_loc = 0.0
                break
            phi1 = abs(beta * F[m, 0])
            phi2 = abs(beta * F[m + 1, 0] * avnorm)
            if phi1 > 10 * phi2:
                err_loc, xm = phi2, 1.0 / m
            elif phi1 > phi2:
                err_loc, xm = phi1 * phi2 / (phi1 - phi2), 1.0 / m
            else:
                err_loc, xm = phi1, 1.0 / max(m - 1, 1)
            if err_loc <= delta * t_step * tol_rate:
                break
            if rejection == MAX_REJECTIONS:
                raise BreakdownNotConverged(
                    "Krylov step rejected too often; reduce the time step or raise krylov_dim"
                )
            t_step = _round_step(gamma * t_step * (t_step * tol_rate / err_loc) ** xm)

        mx = mb + max(0, k1 - 1)
        w = V[:, :mx] @ (beta * F[:mx, 0])
        beta = float(np.linalg.norm(w))
        if not math.isfinite(beta):
            raise BreakdownNotConverged("Krylov action produced non-finite values")
        t_now += t_step
        if k1 == 0 or beta == 0.0:
            break
        err_loc = max(err_loc, 1e-300)
        t_new = _round_step(gamma * t_step * (t_step * tol_rate / err_loc) ** xm)
    return w


def krylov_phi_action(A, combo: PhiCombination, config: ExpIntConfig = ExpIntConfig()) -> np.ndarray:
    """Phi-combination through the Arnoldi route regardless of system size."""
    combo = combo.trimmed()
    if not np.all(np.isfinite(combo.f)) or not all(np.all(np.isfinite(u)) for u in combo.terms):
        raise BadParameters("phi-combination vectors must be finite")
    matvec, start, anorm, n = _augmented(A, combo)
    # absolute tolerance scaled by the largest entry of the (scaled) start vector
    scale = max(float(np.max(np.abs(start))), np.finfo(float).tiny)
    return _expv(combo.dt, matvec, start, anorm, config.krylov_dim, config.tol * scale)[:n]


def phi_action(A, combo: PhiCombination, config: ExpIntConfig = ExpIntConfig()) -> np.ndarray:
    n = len(combo.f)
    if config.method == "dense" or (config.method == "auto" and n <= DENSE_MAX_N):
        return dense_phi_action(A, combo)
    return krylov_phi_action(A, combo, config)


# ---------------------------------------------------------------------------
# steppers


def etd1_step(f_n, A_n, b_n, dt: float, config: ExpIntConfig = ExpIntConfig()) -> np.ndarray:
    """First-order exponential step with the source frozen at the left end.

    Written as ``exp(dt A) f + dt phi_1(dt A) b``, which stays valid for a
    singular ``A``.
    """
    return phi_action(A_n, PhiCombination(np.asarray(f_n, float), (np.asarray(b_n, float),), dt), config)


def etd2_step(f_n, A_n, b_n, b_np1, dt: float, config: ExpIntConfig = ExpIntConfig()) -> np.ndarray:
    """Second-order exponential step with a linear-in-time source over the step.

    ``b`` is reconstructed as ``b_n + (tau - tau_n) (b_np1 - b_n) / dt``; the
    update is ``phi_0 f + dt phi_1 b_n + dt**2 phi_2 slope``.  A constant
    source reduces exactly to :func:`etd1_step`.
    """
    b_n = np.asarray(b_n, float)
    slope = (np.asarray(b_np1, float) - b_n) / dt
    combo = PhiCombination(np.asarray(f_n, float), (b_n, slope), dt)
    return phi_action(A_n, combo, config)


def etd_step(f_n, A_n, b_n, b_np1, dt: float, config: ExpIntConfig = ExpIntConfig()):
    if config.p == 1:
        return etd1_step(f_n, A_n, b_n, dt, config)
    return etd2_step(f_n, A_n, b_n, b_np1, dt, config)


def phi_combination_value(A, f, terms: Sequence[np.ndarray], dt: float, config=ExpIntConfig()):
    """Convenience wrapper around :func:`phi_action`."""
    return phi_action(A, PhiCombination(np.asarray(f, float), tuple(terms), dt), config)
