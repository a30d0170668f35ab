import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import perturbed_raw
from kkpdelay.grid import (
    Grid,
    antideriv_x,
    assemble_x_operator,
    bandwidths,
    diff,
    integral,
    nonlinear_flux,
    nonlocal_term,
    save_field_csv,
    x_derivative_matrix,
)
from kkpdelay.oracles import random_smooth_field
from kkpdelay.params import validate


def test_grid_geometry():
    g = Grid(11, 21, 2.0)
    assert g.dx == pytest.approx(0.2) and g.dy == pytest.approx(0.1)
    assert g.shape == (11, 21) and g.interior_shape == (9, 19)
    with pytest.raises(ValueError):
        Grid(5, 10, 1.0)


def test_first_derivative_of_quadratic_exact():
    g = Grid(17, 9, 1.0)
    d = diff(g.X**2, g, "x", 1)
    np.testing.assert_allclose(d[1:-1], 2 * g.X[1:-1], atol=1e-12)
    np.testing.assert_allclose(d, 2 * g.X, atol=1e-11)    # one-sided ends are exact too


def test_fifth_derivative_of_quintic():
    g = Grid(20, 9, 1.0)
    d = diff(g.X**5, g, "x", 5)
    np.testing.assert_allclose(d[3:-3], 120.0, rtol=1e-6)


def test_y_second_derivative_converges():
    errs = []
    for n in (33, 65):
        g = Grid(9, n, 1.0)
        f = np.sin(np.pi * g.Y)
        d = diff(f, g, "y", 2)
        errs.append(np.max(np.abs(d[:, 1:-1] + np.pi**2 * f[:, 1:-1])))
    assert 3.6 < errs[0] / errs[1] < 4.4


def test_unsupported_derivatives_raise():
    g = Grid(9, 9, 1.0)
    for axis, order in (("y", 1), ("x", 4), ("z", 1)):
        with pytest.raises(ValueError):
            diff(g.zeros(), g, axis, order)


def test_derivatives_annihilate_low_degree_polynomials():
    g = Grid(16, 9, 1.3)
    for order in (1, 2, 3, 5):
        for deg in range(order):
            d = diff(g.X**deg + 0.0 * g.Y, g, "x", order)
            scale = g.length ** max(deg - order, 0)
            start = {1: 1, 2: 1, 3: 2, 5: 3}[order]
            assert np.max(np.abs(d[start:-start])) <= 1e-8 * max(1.0, scale)


def test_closure_is_second_order_for_compatible_field():
    # u = sin^3(pi x / L) satisfies u = u_x = 0 at both ends and u_xx(L) = 0
    errs = {3: [], 5: []}
    for n in (41, 81):
        g = Grid(n, 9, 1.0)
        k = np.pi
        u = np.sin(k * g.X) ** 3
        # sin^3 = (3 sin kx - sin 3kx)/4
        d3 = (-3 * k**3 * np.cos(k * g.X) + 27 * k**3 * np.cos(3 * k * g.X)) / 4
        d5 = (3 * k**5 * np.cos(k * g.X) - 243 * k**5 * np.cos(3 * k * g.X)) / 4
        errs[3].append(np.max(np.abs(diff(u, g, "x", 3) - d3)))
        errs[5].append(np.max(np.abs(diff(u, g, "x", 5) - d5)))
    for order, (e1, e2) in errs.items():
        assert e1 / e2 > 3.3, (order, e1, e2)


def test_antiderivative_examples():
    g = Grid(11, 9, 1.0)
    psi = antideriv_x(np.ones(g.shape), g)
    np.testing.assert_allclose(psi, g.X - 1.0, atol=1e-14)
    assert np.all(psi[-1] == 0.0)
    np.testing.assert_allclose(diff(psi, g, "x", 1), 1.0, atol=1e-12)
    np.testing.assert_allclose(antideriv_x(g.X + 0 * g.Y, g), (g.X**2 - 1) / 2, atol=1e-14)


def test_antiderivative_inverts_derivative_at_second_order():
    errs = []
    for n in (33, 65):
        g = Grid(n, 12, 1.0)
        f = random_smooth_field(np.random.default_rng(3), g)
        errs.append(np.max(np.abs(diff(antideriv_x(f, g), g, "x", 1) - f)[1:-1]))
    assert errs[0] / errs[1] > 3.3


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (10, 9), elements=st.floats(-1e3, 1e3)))
def test_antiderivative_vanishes_at_right_end(f):
    assert np.all(antideriv_x(f, Grid(10, 9, 1.7))[-1] == 0.0)


def test_nonlocal_term_examples():
    g = Grid(17, 13, 1.0)
    assert np.all(nonlocal_term(g.zeros(), g) == 0.0)
    assert np.max(np.abs(nonlocal_term(np.sin(np.pi * g.X) ** 2 + 0 * g.Y, g))) <= 1e-10
    errs = []
    for n in (33, 65):
        g = Grid(n, n, 2.0)
        k = np.pi / g.length
        u = np.sin(k * g.X) * np.sin(k * g.Y)
        tail = (np.cos(k * g.X) - np.cos(k * g.length)) / k         # int_x^L sin(ks) ds
        # psi = -int_x^L u_yy with u_yy = -k^2 u  =>  +k^2 * tail * sin(k y)
        exact = k**2 * tail * np.sin(k * g.Y)
        errs.append(np.max(np.abs(nonlocal_term(u, g) - exact)[:, 1:-1]))
    assert errs[1] < 1e-2 and errs[0] / errs[1] > 3.3


def test_nonlinear_flux_examples():
    g = Grid(17, 9, 1.0)
    assert np.all(nonlinear_flux(np.full(g.shape, 2.5), g) == 0.0)
    np.testing.assert_allclose(nonlinear_flux(g.X + 0 * g.Y, g)[1:-1], g.X[1:-1], atol=1e-12)
    errs = []
    for n in (33, 65):
        g = Grid(n, 9, 1.0)
        u = np.sin(np.pi * g.X) + 0 * g.Y
        exact = np.pi * np.sin(np.pi * g.X) * np.cos(np.pi * g.X)
        errs.append(np.max(np.abs(nonlinear_flux(u, g) - exact)))
    assert errs[0] / errs[1] > 3.3


def test_integral_examples():
    g = Grid(9, 13, 1.0)
    assert integral(np.ones(g.shape), g) == pytest.approx(1.0, abs=1e-15)
    assert integral(g.X, g) == pytest.approx(0.5, abs=1e-15)
    errs = []
    for n in (33, 65):
        g = Grid(n, n, 1.0)
        errs.append(abs(integral(np.sin(np.pi * g.X) * np.sin(np.pi * g.Y), g) - 4 / np.pi**2))
    assert errs[1] < 1e-3 and errs[0] / errs[1] > 3.5


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (9, 10), elements=st.floats(-100, 100)),
    arrays(np.float64, (9, 10), elements=st.floats(-100, 100)),
    st.floats(-10, 10),
)
def test_integral_linear_and_monotone(f, h, c):
    g = Grid(9, 10, 1.4)
    lhs = integral(c * f + h, g)
    rhs = c * integral(f, g) + integral(h, g)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-9)
    upper = np.maximum(f, h)
    assert integral(f, g) <= integral(upper, g) + 1e-12


@pytest.mark.parametrize("length", [1.0, 2.0])
def test_discrete_poincare(length):
    rng = np.random.default_rng(7)
    g = Grid(40, 40, length)
    for _ in range(10):
        f = random_smooth_field(rng, g)
        fx = diff(f, g, "x", 1)
        assert integral(f * f, g) <= length**4 * integral(fx * fx, g) * (1 + g.dx)


def test_banded_operator_identity_limits():
    p = validate(perturbed_raw())
    g = Grid(16, 10, 1.0)
    rhs = np.random.default_rng(0).standard_normal(g.interior_shape)
    op = assemble_x_operator(p, g, 0.5, 1e-20)
    np.testing.assert_allclose(op.solve(rhs), rhs, atol=1e-12)
    # alpha = beta = 0, no reaction: exact identity at any dt
    trivial = p.with_(alpha=1e-300, beta=-1e-300)
    op = assemble_x_operator(trivial, g, 1.0, 10.0)
    np.testing.assert_allclose(op.solve(rhs), rhs, atol=1e-15)


def test_banded_solve_roundtrip_and_bandwidth():
    p = validate(perturbed_raw())
    g = Grid(12, 8, 1.0)
    a = np.random.default_rng(1).uniform(0, 2, g.shape)
    op = assemble_x_operator(p, g, 0.5, 0.05, reaction=a)
    assert (op.kl, op.ku) == bandwidths(op.matrices[0] - np.diag(np.diag(op.matrices[0])))
    assert op.kl <= 3 and op.ku <= 4
    u = np.random.default_rng(2).standard_normal(g.shape)
    u[[0, -1], :] = 0
    u[:, [0, -1]] = 0
    np.testing.assert_allclose(op.solve(op.apply(u)), u, atol=1e-12)
    assert x_derivative_matrix(12, 1.0, 5).shape == (10, 10)


def test_save_field_csv(tmp_path):
    g = Grid(8, 9, 1.0)
    f = g.X * g.Y
    path = tmp_path / "f.csv"
    save_field_csv(path, f, g, header_comment="config_hash=abc")
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash=abc" and lines[1] == "x,y,value"
    assert len(lines) == 2 + g.nx * g.ny
    x, y, v = (float(s) for s in lines[-1].split(","))
    assert (x, y, v) == (1.0, 1.0, 1.0)
    assert math.isclose(float(lines[3].split(",")[1]), g.y[1], rel_tol=0, abs_tol=0)
