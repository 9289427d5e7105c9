from math import factorial

import numpy as np
import pytest

from stagdg.basis import (
    monomial_exponents,
    nodal_coeffs,
    space_basis_count,
    taylor_eval,
    time_basis,
    time_matrices,
)
from stagdg.quadrature import MAX_DEGREE, quad_rule


def exact_tet_monomial(a, b, c):
    return factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)


def exact_tri_monomial(a, b):
    return factorial(a) * factorial(b) / factorial(a + b + 2)


# ---------------------------------------------------------------------------
# nodal basis

def test_linear_basis_closed_form(rng):
    nb = nodal_coeffs(1)
    pts = rng.random((20, 3)) / 3.0
    vals = nb.eval(pts)
    expect = np.column_stack([1 - pts.sum(axis=1), pts[:, 0], pts[:, 1], pts[:, 2]])
    assert np.abs(vals - expect).max() <= 1e-13


def test_basis_counts():
    assert space_basis_count(2) == 10
    assert nodal_coeffs(2).n == 10
    assert [space_basis_count(p) for p in range(4)] == [1, 4, 10, 20]


def test_interpolation_residual_p3():
    nb = nodal_coeffs(3)
    resid = np.abs(nb.eval(nb.nodes) - np.eye(nb.n)).max()
    assert resid <= 1e-12


@pytest.mark.parametrize("p", range(6))
def test_delta_property_up_to_p5(p):
    nb = nodal_coeffs(p)
    assert np.abs(nb.eval(nb.nodes) - np.eye(nb.n)).max() <= 1e-11


def test_partition_of_unity(rng):
    for p in (1, 2, 3, 4):
        nb = nodal_coeffs(p)
        pts = rng.random((100, 3))
        pts /= (pts.sum(axis=1)[:, None] + rng.random((100, 1)) + 1.0)
        assert np.abs(nb.eval(pts).sum(axis=1) - 1.0).max() <= 1e-12


def test_nodal_degree_validation():
    with pytest.raises(ValueError):
        nodal_coeffs(-1)
    with pytest.raises(ValueError):
        nodal_coeffs(6)


def test_nodal_gradient_matches_finite_differences(rng):
    nb = nodal_coeffs(3)
    pts = rng.random((10, 3)) / 3.0
    grads = nb.grad(pts)
    eps = 1e-6
    for d in range(3):
        shift = np.zeros(3)
        shift[d] = eps
        fd = (nb.eval(pts + shift) - nb.eval(pts - shift)) / (2 * eps)
        denom = np.maximum(np.abs(grads[:, :, d]), 1.0)
        assert (np.abs(fd - grads[:, :, d]) / denom).max() <= 1e-6


# ---------------------------------------------------------------------------
# shifted-monomial modes on dual elements

def test_taylor_values_at_center():
    vals = taylor_eval(np.array([[0.3, -0.2, 0.7]]), [0.3, -0.2, 0.7], 0.5, 2)
    assert vals[0, 0] == 1.0
    assert np.abs(vals[0, 1:]).max() == 0.0


def test_taylor_linear_offset():
    vals = taylor_eval(np.array([[1.5, 0.0, 0.0]]), [0.5, 0.0, 0.0], 1.0, 1)
    assert np.allclose(vals, [[1.0, 1.0, 0.0, 0.0]])


def test_taylor_gradient_linear_mode(rng):
    pts = rng.standard_normal((5, 3))
    _, grads = taylor_eval(pts, [0.1, 0.2, 0.3], 0.25, 1, with_gradients=True)
    assert np.allclose(grads[:, 1, :], [1 / 0.25, 0, 0])
    assert np.allclose(grads[:, 0, :], 0.0)


def test_taylor_gradient_matches_finite_differences(rng):
    pts = rng.standard_normal((8, 3))
    center, h = [0.2, -0.1, 0.4], 0.7
    _, grads = taylor_eval(pts, center, h, 3, with_gradients=True)
    eps = 1e-6 * h
    for d in range(3):
        shift = np.zeros(3)
        shift[d] = eps
        fd = (taylor_eval(pts + shift, center, h, 3)
              - taylor_eval(pts - shift, center, h, 3)) / (2 * eps)
        denom = np.maximum(np.abs(grads[:, :, d]), 1.0)
        assert (np.abs(fd - grads[:, :, d]) / denom).max() <= 1e-6


def test_taylor_rejects_bad_scaling():
    with pytest.raises(ValueError):
        taylor_eval(np.zeros((1, 3)), [0, 0, 0], 0.0, 1)


def test_exponent_enumeration_order():
    expo = monomial_exponents(1)
    assert expo.tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]


# ---------------------------------------------------------------------------
# time basis

def test_time_basis_constant():
    tb = time_basis(0)
    assert np.allclose(tb.nodes, [0.5])
    tau = np.linspace(0, 1, 7)
    assert np.allclose(tb.eval(tau), 1.0)
    assert np.allclose(tb.deriv(tau), 0.0)


def test_time_basis_two_point_nodes():
    tb = time_basis(1)
    expect = [(3 - np.sqrt(3)) / 6, (3 + np.sqrt(3)) / 6]
    assert np.allclose(tb.nodes, expect, atol=1e-15)
    assert np.abs(tb.eval(tb.nodes) - np.eye(2)).max() <= 1e-14


def test_time_partition_of_unity():
    tb = time_basis(3)
    assert tb.eval(np.array([0.37]))[0].sum() == pytest.approx(1.0, abs=1e-12)
    tau = np.linspace(0, 1, 11)
    assert np.abs(tb.eval(tau).sum(axis=1) - 1.0).max() <= 1e-12


def test_time_matrices_consistency():
    tb = time_basis(2)
    tm = time_matrices(tb)
    # integral of (gamma^2)' over [0,1] equals the end values minus start values
    lhs = tm["dgram"] + tm["dgram"].T
    rhs = tm["end"] - np.outer(tm["at0"], tm["at0"])
    assert np.abs(lhs - rhs).max() <= 1e-13


def test_time_degree_validation():
    with pytest.raises(ValueError):
        time_basis(-1)
    with pytest.raises(ValueError):
        time_basis(5)


# ---------------------------------------------------------------------------
# quadrature

def test_tet_rule_basics():
    r = quad_rule("tetrahedron", 0)
    assert r.weights.sum() == pytest.approx(1 / 6, abs=1e-14)
    r = quad_rule("tetrahedron", 2)
    xi, eta = r.points[:, 0], r.points[:, 1]
    assert (r.weights * xi).sum() == pytest.approx(1 / 24, abs=1e-15)
    assert (r.weights * xi * eta).sum() == pytest.approx(1 / 120, abs=1e-15)


def test_triangle_rule_basics():
    r = quad_rule("triangle", 1)
    assert r.weights.sum() == pytest.approx(0.5, abs=1e-14)
    assert (r.weights * r.points[:, 0]).sum() == pytest.approx(1 / 6, abs=1e-15)


@pytest.mark.parametrize("degree", [1, 3, 5, 8, 11])
def test_tet_rule_exactness(degree):
    r = quad_rule("tetrahedron", degree)
    assert r.degree >= degree
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            for c in range(degree + 1 - a - b):
                val = (r.weights * r.points[:, 0] ** a * r.points[:, 1] ** b
                       * r.points[:, 2] ** c).sum()
                exact = exact_tet_monomial(a, b, c)
                assert abs(val - exact) <= 1e-13 * max(abs(exact), 1e-3)


@pytest.mark.parametrize("degree", [1, 4, 9])
def test_triangle_rule_exactness(degree):
    r = quad_rule("triangle", degree)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            val = (r.weights * r.points[:, 0] ** a * r.points[:, 1] ** b).sum()
            exact = exact_tri_monomial(a, b)
            assert abs(val - exact) <= 1e-13 * max(abs(exact), 1e-3)


def test_interval_rule_exactness():
    r = quad_rule("interval", 7)
    for a in range(8):
        assert (r.weights * r.points[:, 0] ** a).sum() == pytest.approx(1 / (a + 1), abs=1e-14)


def test_quadrature_validation():
    with pytest.raises(ValueError):
        quad_rule("pyramid", 2)
    with pytest.raises(ValueError):
        quad_rule("tetrahedron", -1)
    with pytest.raises(ValueError, match=str(MAX_DEGREE)):
        quad_rule("tetrahedron", MAX_DEGREE + 1)
