from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from delaycredit.errors import BadParameters, NonFiniteCoefficient
from delaycredit.pde import (
    ClaimSpec,
    Grid,
    PayoffSmoother,
    assemble,
    build_grid,
    convection_row,
    diffusion_row,
)


def test_grid_centers():
    grid = build_grid(100.0, 4, 4)
    assert grid.h == 100.0
    assert list(grid.centers) == [50.0, 150.0, 250.0, 350.0]
    assert grid.V_max == 400.0


def test_grid_too_small():
    with pytest.raises(BadParameters):
        build_grid(100.0, 2, 4)
    with pytest.raises(BadParameters):
        build_grid(100.0, 10, 5)


def test_smoother_values():
    s = PayoffSmoother(0.25)
    assert s(0.5) == 0.5
    assert s(-0.5) == 0.0
    assert s(0.0) == 35 * 0.25 / 256


@pytest.mark.parametrize("eps", [1e-3, 0.1, 1.0, 7.5])
def test_smoother_gluing(eps):
    s = PayoffSmoother(eps)
    assert abs(s.polynomial(eps) - eps) <= 1e-12 * eps
    assert abs(s.polynomial(-eps)) <= 1e-12 * eps
    for k in range(1, 5):
        scale = eps ** (1 - k)
        assert abs(s.polynomial(eps, k) - (1.0 if k == 1 else 0.0)) <= 1e-8 * scale
        assert abs(s.polynomial(-eps, k)) <= 1e-8 * scale


def test_smoother_is_convex_and_above_kink():
    s = PayoffSmoother(1.0)
    x = np.linspace(-1, 1, 201)
    y = s(x)
    assert np.all(y >= np.maximum(x, 0) - 1e-15)
    assert np.all(np.diff(y, 2) >= -1e-15)


def test_terminal_identity():
    grid = build_grid(1.0, 200, 4)
    smoother = PayoffSmoother(grid.h)
    v = grid.centers
    eq = ClaimSpec("equity", 1.0).terminal(v, smoother)
    debt = ClaimSpec("debt", 1.0).terminal(v, smoother)
    assert np.max(np.abs(eq + debt - v)) <= 4 * np.finfo(float).eps * grid.V_max


def test_diffusion_zero_sigma():
    grid = build_grid(1.0, 10)
    for i in range(10):
        assert diffusion_row(i, grid, 0.0) == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_diffusion_interior_rows_sum_zero():
    grid = build_grid(3.0, 17)
    for i in range(1, 16):
        sub, diag, sup, _, _ = diffusion_row(i, grid, 0.37)
        assert sub + diag + sup == pytest.approx(0.0, abs=1e-12 * abs(diag))


def test_diffusion_annihilates_linear_function():
    # dyadic grid so the arithmetic is exact
    grid = Grid(N=8, V_max=4.0)
    op = assemble(grid, ClaimSpec("debt", 0.0), 0.0, 0.5, 0.0, 0.0, 0.0)
    v = grid.centers
    Av = op.A.matvec(v)
    assert np.all(Av[1:-1] == 0.0)
    # with the Dirichlet data of the linear function the boundary rows vanish too
    full = Av + op.w_lower * 0.0 + op.w_upper * grid.V_max
    assert np.all(full == 0.0)


def test_convection_zero_transport():
    grid = build_grid(1.0, 12)
    for rule in ("paper", "standard"):
        for i in range(12):
            assert convection_row(i, grid, 0.0, 0.0, rule) == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_convection_nonnegative_flux_is_left_upwind():
    # both faces read from the left cell: the sub-diagonal carries -flux/h
    grid = build_grid(1.0, 12)
    r = 0.05
    for i in range(12):
        sub, diag, sup, lower, upper = convection_row(i, grid, r, 0.0)
        assert sup == 0 and upper == 0 and lower == 0
        assert sub == pytest.approx(-r * grid.faces[i] / grid.h, abs=1e-15)
        assert diag == pytest.approx(r * grid.faces[i + 1] / grid.h - 2 * r, abs=1e-14)


def test_convection_constant_vector_reaction():
    grid = build_grid(2.0, 20)
    r = 0.07
    i = 9
    sub, diag, sup, _, _ = convection_row(i, grid, r, 0.0)
    assert sub + diag + sup == pytest.approx(-r, rel=1e-12)


def _dense_from_rows(grid, claim, sigma, r, C, C_y, disc, rule):
    N = grid.N
    A = np.zeros((N, N))
    k = np.zeros(N)
    upper = claim.upper_bc(grid.V_max, disc)
    lower = claim.lower_bc()
    for i in range(N):
        for row in (diffusion_row(i, grid, sigma), convection_row(i, grid, r, C, rule)):
            sub, diag, sup, wl, wu = row
            if i > 0:
                A[i, i - 1] += sub
            A[i, i] += diag
            if i < N - 1:
                A[i, i + 1] += sup
            k[i] += wl * lower + wu * upper
    return A, k + claim.source(C, C_y)


@pytest.mark.parametrize("rule", ["paper", "standard"])
@pytest.mark.parametrize("kind", ["equity", "debt"])
@pytest.mark.parametrize("C", [0.0, 0.3])
def test_assembly_matches_row_by_row_construction(rule, kind, C):
    grid = build_grid(1.0, 25, 4)
    claim = ClaimSpec(kind, 1.0)
    op = assemble(grid, claim, 0.4, 0.3, 0.05, C, 0.02, 0.97, rule)
    A, b = _dense_from_rows(grid, claim, 0.3, 0.05, C, 0.02, 0.97, rule)
    assert np.allclose(op.A.to_dense(), A, rtol=1e-13, atol=1e-13)
    assert np.allclose(op.b, b, rtol=1e-13, atol=1e-13)


def test_all_physics_off():
    grid = build_grid(1.0, 10)
    op = assemble(grid, ClaimSpec("debt", 0.0), 0.0, 0.0, 0.0, 0.0, 0.0)
    assert not np.any(op.A.to_dense())
    assert not np.any(op.b)


def test_equity_source_only_at_boundary():
    grid = build_grid(100.0, 40)
    op = assemble(grid, ClaimSpec("equity", 100.0), 0.5, 0.3, 0.05, 0.0, 0.0, 0.97)
    assert not np.any(op.b[1:-1])
    assert op.b[-1] != 0


@settings(max_examples=40, deadline=None)
@given(
    sigma=st.floats(0.05, 1.0),
    r_ratio=st.floats(0.0, 1.0),
    N=st.integers(3, 60),
    rule=st.sampled_from(["paper", "standard"]),
)
def test_metzler_for_nonnegative_fluxes(sigma, r_ratio, N, rule):
    # diffusion has to outweigh the left-face convection weight: r <= sigma^2
    r = r_ratio * sigma * sigma
    grid = build_grid(1.0, N)
    op = assemble(grid, ClaimSpec("equity", 1.0), 0.0, sigma, r, 0.0, 0.0, 1.0, rule)
    assert np.all(op.sub[1:] >= 0) and np.all(op.sup[:-1] >= 0)


def test_metzler_needs_diffusion():
    op = assemble(build_grid(1.0, 10), ClaimSpec("equity", 1.0), 0.0, 0.0, 0.05, 0.0, 0.0)
    assert np.min(op.sub[1:]) < 0


def test_default_rule_negative_flux_stays_tridiagonal():
    grid = build_grid(1.0, 30)
    op = assemble(grid, ClaimSpec("equity", 1.0), 0.0, 0.3, 0.05, 0.5, 0.0, 1.0, "paper")
    assert op.A.to_dense().shape == (30, 30)
    std = assemble(grid, ClaimSpec("equity", 1.0), 0.0, 0.3, 0.05, 0.5, 0.0, 1.0, "standard")
    assert not np.allclose(op.A.to_dense(), std.A.to_dense())


def test_grid_scaling_invariance():
    a = assemble(build_grid(1.0, 30), ClaimSpec("equity", 1.0), 0.0, 0.3, 0.05, 0.0, 0.0)
    b = assemble(build_grid(2.0, 30), ClaimSpec("equity", 2.0), 0.0, 0.3, 0.05, 0.0, 0.0)
    assert np.allclose(a.A.to_dense(), b.A.to_dense(), rtol=1e-12, atol=0)


def test_non_finite_coefficient():
    with pytest.raises(NonFiniteCoefficient):
        assemble(build_grid(1.0, 10), ClaimSpec("equity", 1.0), 0.0, float("nan"), 0.05, 0.0, 0.0)


def test_operator_csv(tmp_path):
    op = assemble(build_grid(1.0, 5), ClaimSpec("equity", 1.0), 0.0, 0.3, 0.05, 0.0, 0.0)
    target = tmp_path / "op.csv"
    op.to_csv(target, "cfg")
    lines = target.read_text().splitlines()
    assert lines[:2] == ["# cfg", "i,sub,diag,super,b"]
    assert len(lines) == 7 and lines[2].startswith("1,")
