"""Polynomial bases: nodal on the reference tetrahedron, shifted-monomial
(Taylor) modes on dual elements, and Lagrange-in-time bases at Gauss-Legendre
nodes on [0, 1].
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss

MAX_SPACE_DEGREE = 5
MAX_TIME_DEGREE = 4


def monomial_exponents(p: int) -> np.ndarray:
    """Exponent triples (k1, k2, k3) with 0 <= k1+k2+k3 <= p, graded order.

    Within each total degree the leading exponent decreases first, so the
    degree-1 block comes out as (1,0,0), (0,1,0), (0,0,1).
    """
    out = []
    for deg in range(p + 1):
        for k1 in range(deg, -1, -1):
            for k2 in range(deg - k1, -1, -1):
                out.append((k1, k2, deg - k1 - k2))
    return np.array(out, dtype=int)


def space_basis_count(p: int) -> int:
    return (p + 1) * (p + 2) * (p + 3) // 6


def _monomials(points, expo):
    """Evaluate all monomials x^k1 y^k2 z^k3 at points, shape (n, N)."""
    pts = np.asarray(points, dtype=float)
    return (
        pts[:, 0:1] ** expo[None, :, 0]
        * pts[:, 1:2] ** expo[None, :, 1]
        * pts[:, 2:3] ** expo[None, :, 2]
    )


def _monomial_gradients(points, expo):
    pts = np.asarray(points, dtype=float)
    n, nb = len(pts), len(expo)
    grads = np.zeros((n, nb, 3))
    for d in range(3):
        e = expo.copy()
        mask = e[:, d] > 0
        e[mask, d] -= 1
        vals = (
            pts[:, 0:1] ** e[None, :, 0]
            * pts[:, 1:2] ** e[None, :, 1]
            * pts[:, 2:3] ** e[None, :, 2]
        )
        grads[:, :, d] = vals * expo[None, :, d]
        grads[:, ~mask, d] = 0.0
    return grads


@dataclass
class NodalBasis:
    """Lagrange basis on the reference tetrahedron through the equispaced
    multi-index nodes (j1/p, j2/p, j3/p)."""

    p: int
    exponents: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    coeffs: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.exponents)

    def eval(self, points) -> np.ndarray:
        return _monomials(np.atleast_2d(points), self.exponents) @ self.coeffs.T

    def grad(self, points) -> np.ndarray:
        g = _monomial_gradients(np.atleast_2d(points), self.exponents)
        return np.einsum("qrd,kr->qkd", g, self.coeffs)


def nodal_coeffs(p: int) -> NodalBasis:
    """Solve the interpolation system for the nodal basis of degree p."""
    if p < 0:
        raise ValueError("polynomial degree must be >= 0")
    if p > MAX_SPACE_DEGREE:
        raise ValueError(f"polynomial degree {p} not supported (maximum {MAX_SPACE_DEGREE})")
    expo = monomial_exponents(p)
    if p == 0:
        nodes = np.array([[0.25, 0.25, 0.25]])
    else:
        nodes = expo.astype(float) / p
    vander = _monomials(nodes, expo)
    coeffs = np.linalg.solve(vander, np.eye(len(expo))).T
    return NodalBasis(p=p, exponents=expo, nodes=nodes, coeffs=coeffs)


def taylor_eval(points, center, h: float, p: int, with_gradients: bool = False):
    """Evaluate the shifted-monomial modes ((x-x0)/h)^k at given points.

    Gradients carry one factor 1/h per derivative.
    """
    if h <= 0:
        raise ValueError("scaling length h must be positive")
    expo = monomial_exponents(p)
    u = (np.atleast_2d(points) - np.asarray(center, dtype=float)) / h
    vals = _monomials(u, expo)
    if not with_gradients:
        return vals
    grads = _monomial_gradients(u, expo) / h
    return vals, grads


@dataclass
class TimeBasis:
    """Lagrange polynomials through the Gauss-Legendre nodes on [0, 1]."""

    p_gamma: int
    nodes: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.p_gamma + 1

    def eval(self, tau) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        t = self.nodes
        vals = np.ones((len(tau), len(t)))
        for k in range(len(t)):
            for m in range(len(t)):
                if m != k:
                    vals[:, k] *= (tau - t[m]) / (t[k] - t[m])
        return vals

    def deriv(self, tau) -> np.ndarray:
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        t = self.nodes
        out = np.zeros((len(tau), len(t)))
        for k in range(len(t)):
            for m in range(len(t)):
                if m == k:
                    continue
                term = np.full(len(tau), 1.0 / (t[k] - t[m]))
                for j in range(len(t)):
                    if j != k and j != m:
                        term *= (tau - t[j]) / (t[k] - t[j])
                out[:, k] += term
        return out


def time_basis(p_gamma: int) -> TimeBasis:
    if p_gamma < 0:
        raise ValueError("time degree must be >= 0")
    if p_gamma > MAX_TIME_DEGREE:
        raise ValueError(f"time degree {p_gamma} not supported (maximum {MAX_TIME_DEGREE})")
    x, _ = leggauss(p_gamma + 1)
    return TimeBasis(p_gamma=p_gamma, nodes=0.5 * (np.sort(x) + 1.0))


def time_matrices(tb: TimeBasis):
    """Coupling matrices of the slab time basis on [0, 1].

    Returns a dict with:
      gram      integral of gamma_k gamma_l
      dgram     integral of gamma_k' gamma_l
      end       gamma_k(1) gamma_l(1)
      upwind    gamma_k(0) gamma_l(1), coupling the new slab's start trace
                to the previous slab's end trace
      at0, at1  basis values at tau = 0 and tau = 1
    """
    nq = tb.n + 1
    x, w = leggauss(nq)
    tau = 0.5 * (x + 1.0)
    wq = 0.5 * w
    vals = tb.eval(tau)
    ders = tb.deriv(tau)
    gram = np.einsum("q,qk,ql->kl", wq, vals, vals)
    dgram = np.einsum("q,qk,ql->kl", wq, ders, vals)
    at0 = tb.eval(0.0)[0]
    at1 = tb.eval(1.0)[0]
    return {
        "gram": gram,
        "dgram": dgram,
        "end": np.outer(at1, at1),
        "upwind": np.outer(at0, at1),
        "at0": at0,
        "at1": at1,
    }
