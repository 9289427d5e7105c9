"""Quadrature rules on the reference tetrahedron, triangle and unit interval.

Rules are conical (collapsed-coordinate) Gauss products, so a rule of any
requested exactness degree can be generated deterministically.  Reference
domains: the tetrahedron {xi, eta, zeta >= 0, xi+eta+zeta <= 1} with measure
1/6, the triangle {xi, eta >= 0, xi+eta <= 1} with measure 1/2, and the
interval [0, 1].
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import roots_jacobi

MAX_DEGREE = 40

_DOMAIN_MEASURE = {"tetrahedron": 1.0 / 6.0, "triangle": 0.5, "interval": 1.0}


@dataclass(frozen=True)
class QuadratureRule:
    domain: str
    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def n(self) -> int:
        return len(self.weights)


def _gauss01(n):
    """Gauss-Legendre nodes/weights on [0, 1]."""
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _jacobi01(n, alpha):
    """Gauss-Jacobi nodes/weights on [0, 1] for the weight (1-t)^alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1)


def quad_rule(domain: str, degree: int) -> QuadratureRule:
    """Return a rule exact for all polynomials up to ``degree`` on ``domain``."""
    if domain not in _DOMAIN_MEASURE:
        raise ValueError(f"unknown quadrature domain {domain!r}")
    if degree < 0:
        raise ValueError("quadrature degree must be >= 0")
    if degree > MAX_DEGREE:
        raise ValueError(
            f"quadrature degree {degree} not supported (maximum is {MAX_DEGREE})"
        )
    n = degree // 2 + 1

    if domain == "interval":
        x, w = _gauss01(n)
        return QuadratureRule(domain, x[:, None].copy(), w.copy(), 2 * n - 1)

    if domain == "triangle":
        a, wa = _gauss01(n)
        b, wb = _jacobi01(n, 1)
        # Duffy map: xi = a (1-b), eta = b; the (1-b) Jacobian sits in the
        # Jacobi weight.
        A, B = np.meshgrid(a, b, indexing="ij")
        pts = np.column_stack([(A * (1.0 - B)).ravel(), B.ravel()])
        w = np.outer(wa, wb).ravel()
        return QuadratureRule(domain, pts, w, 2 * n - 1)

    a, wa = _gauss01(n)
    b, wb = _jacobi01(n, 1)
    c, wc = _jacobi01(n, 2)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    xi = A * (1.0 - B) * (1.0 - C)
    eta = B * (1.0 - C)
    zeta = C
    pts = np.column_stack([xi.ravel(), eta.ravel(), zeta.ravel()])
    w = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel()
    return QuadratureRule(domain, pts, w, 2 * n - 1)
