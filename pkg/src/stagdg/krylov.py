"""Matrix-free iterative linear solvers: restarted GMRES and CG.

Both solvers are deterministic, unpreconditioned, and work on flat float
arrays with a user-supplied operator callback.  A consistent singular system
(right side in the operator range) converges with the null-space component of
the initial guess carried through unchanged.
"""

from dataclasses import dataclass, field

import numpy as np


class NumericalBreakdownError(RuntimeError):
    """Non-finite values appeared during the iteration."""


@dataclass
class SolverConfig:
    tolerance: float = 1e-8
    restart: int = 40
    max_iterations: int = 10000
    kind: str = "auto"  # gmres | cg | auto

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.restart < 1:
            raise ValueError("restart length must be >= 1")


@dataclass
class SolveStats:
    iterations: int
    residual: float
    converged: bool
    history: tuple = field(default_factory=tuple, repr=False)


def resolve_kind(config: SolverConfig, p_gamma: int) -> str:
    """Pick CG for the symmetric piecewise-constant-in-time regime."""
    if config.kind != "auto":
        return config.kind
    return "cg" if p_gamma == 0 else "gmres"


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise NumericalBreakdownError("non-finite values during Krylov iteration")


def gmres(apply, rhs, x0=None, config: SolverConfig | None = None):
    """Restarted GMRES with Givens rotations; residuals are non-increasing
    within each restart cycle."""
    config = config or SolverConfig()
    b = np.asarray(rhs, dtype=float).ravel()
    _check_finite(b)
    n = b.size
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        res = np.linalg.norm(apply(x))
        if res == 0.0 or x0 is None:
            return np.zeros(n), SolveStats(0, 0.0, True, (0.0,))
        bnorm = 1.0

    m = config.restart
    history = []
    total = 0
    while total < config.max_iterations:
        r = b - apply(x)
        _check_finite(r)
        beta = np.linalg.norm(r)
        if beta / bnorm <= config.tolerance:
            history.append(beta / bnorm)
            return x, SolveStats(total, beta / bnorm, True, tuple(history))
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        while k < m and total < config.max_iterations:
            # copy: the in-place orthogonalization must not alias the
            # operator output (an identity-like apply returns its input)
            w = np.array(apply(V[k]), dtype=float)
            _check_finite(w)
            for i in range(k + 1):
                H[i, k] = V[i] @ w
                w -= H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            breakdown = H[k + 1, k] < 1e-14 * bnorm
            if not breakdown:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k += 1
            history.append(abs(g[k]) / bnorm)
            if breakdown or abs(g[k]) / bnorm <= config.tolerance:
                break
        y = np.linalg.solve(H[:k, :k], g[:k])
        x = x + V[:k].T @ y
        res = np.linalg.norm(b - apply(x)) / bnorm
        if res <= config.tolerance:
            return x, SolveStats(total, res, True, tuple(history))
    res = np.linalg.norm(b - apply(x)) / bnorm
    return x, SolveStats(total, res, res <= config.tolerance, tuple(history))


def cg(apply, rhs, x0=None, config: SolverConfig | None = None):
    """Conjugate gradients for symmetric positive (semi-)definite operators.

    The recursive residual drives the iteration; convergence is verified
    against the true residual and the iteration restarts if round-off drift
    left it above tolerance.
    """
    config = config or SolverConfig()
    b = np.asarray(rhs, dtype=float).ravel()
    _check_finite(b)
    n = b.size
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).ravel().copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x if x0 is not None else np.zeros(n), SolveStats(0, 0.0, True, (0.0,))

    history = []
    total = 0
    stalled = False
    while total < config.max_iterations and not stalled:
        r = b - apply(x)
        _check_finite(r)
        res = np.linalg.norm(r) / bnorm
        history.append(res)
        if res <= config.tolerance:
            return x, SolveStats(total, res, True, tuple(history))
        d = r.copy()
        rr = r @ r
        while total < config.max_iterations:
            q = apply(d)
            _check_finite(q)
            dq = d @ q
            if dq <= 1e-14 * np.linalg.norm(d) * np.linalg.norm(q):
                stalled = True  # operator annihilated the search direction
                break
            alpha = rr / dq
            x += alpha * d
            r -= alpha * q
            rr_new = r @ r
            total += 1
            history.append(np.sqrt(rr_new) / bnorm)
            if np.sqrt(rr_new) / bnorm <= 0.5 * config.tolerance:
                break
            d = r + (rr_new / rr) * d
            rr = rr_new
    res = np.linalg.norm(b - apply(x)) / bnorm
    return x, SolveStats(total, res, res <= config.tolerance, tuple(history))


def solve(apply, rhs, x0=None, config: SolverConfig | None = None, p_gamma: int = 0):
    """Dispatch to CG or GMRES according to the configured kind."""
    config = config or SolverConfig()
    kind = resolve_kind(config, p_gamma)
    if kind == "cg":
        return cg(apply, rhs, x0=x0, config=config)
    if kind == "gmres":
        return gmres(apply, rhs, x0=x0, config=config)
    raise ValueError(f"unknown solver kind {config.kind!r}")
