"""L2 error measurement against exact solutions and the mesh-refinement
order harness.

Velocity errors integrate over the dual elements (where the discrete
velocity lives), pressure errors over the tets.  The free pressure constant
is fixed by shifting the exact field so both fields share the same domain
mean.  Observed orders compare consecutive rows of a mesh sequence using the
effective spacing (domain volume / cell count)^(1/3).
"""

import csv
from dataclasses import dataclass

import numpy as np

from .assembly import ElementOperators, _taylor_values
from .operators import SolutionState, end_trace
from .quadrature import quad_rule


def _dual_quadrature(ops: ElementOperators, degree: int):
    """Sub-tet rule of the requested degree over every dual element."""
    rule = quad_rule("tetrahedron", degree)
    dual, mesh = ops.dual, ops.mesh
    for side, verts in ((0, dual.sub_left), (1, dual.sub_right)):
        js = np.transpose(verts[:, 1:] - verts[:, 0:1], (0, 2, 1))
        dets = np.abs(np.linalg.det(js))
        pts = verts[:, None, 0, :] + np.einsum("qb,fdb->fqd", rule.points, js)
        w = rule.weights[None, :] * dets[:, None]
        if side == 1:
            w = w * dual.is_interior[:, None]
        psi = _taylor_values(pts, dual.center, dual.h, ops.expo)
        xtrue = pts - mesh.face_shift[:, None, :] if side == 1 else pts
        yield w, psi, xtrue


def l2_errors(ops: ElementOperators, state: SolutionState, exact_velocity,
              exact_pressure, t: float | None = None, degree: int | None = None):
    """Domain L2 errors (pressure, velocity) of a state's end-of-slab trace."""
    if t is None:
        t = state.t
    if degree is None:
        degree = 2 * ops.p + 4

    err_v = 0.0
    vend = end_trace(ops, state.v_dual)
    for w, psi, pts in _dual_quadrature(ops, degree):
        vh = np.einsum("fqk,fkc->fqc", psi, vend)
        vex = exact_velocity(pts.reshape(-1, 3), t).reshape(vh.shape)
        err_v += float(np.einsum("fq,fqc->", w, (vh - vex) ** 2))

    rule = quad_rule("tetrahedron", degree)
    phi = ops.nodal.eval(rule.points)
    pts = ops.tet_origin[:, None, :] + np.einsum("qb,edb->eqd", rule.points, ops.jac)
    w = rule.weights[None, :] * ops.detj[:, None]
    pend = end_trace(ops, state.p)
    ph = np.einsum("qk,ek->eq", phi, pend)
    pex = np.asarray(exact_pressure(pts.reshape(-1, 3), t)).reshape(ph.shape)
    vol = float(ops.mesh.volumes.sum())
    gauge = (float(np.einsum("eq,eq->", w, ph)) - float(np.einsum("eq,eq->", w, pex))) / vol
    err_p = float(np.einsum("eq,eq->", w, (ph - (pex + gauge)) ** 2))
    return np.sqrt(err_p), np.sqrt(err_v)


@dataclass
class ConvergenceRow:
    p: int
    p_gamma: int
    n_elements: int
    err_p: float
    err_v: float
    order_p: float = float("nan")
    order_v: float = float("nan")

    def as_list(self):
        return [self.p, self.p_gamma, self.n_elements,
                self.err_p, self.err_v, self.order_p, self.order_v]


def observed_orders(rows):
    """Fill observed orders in place from consecutive rows of one sweep."""
    for prev, cur in zip(rows, rows[1:]):
        h_prev = prev.n_elements ** (-1.0 / 3.0)
        h_cur = cur.n_elements ** (-1.0 / 3.0)
        denom = np.log(h_prev / h_cur)
        cur.order_p = float(np.log(prev.err_p / cur.err_p) / denom)
        cur.order_v = float(np.log(prev.err_v / cur.err_v) / denom)
    return rows


def convergence_harness(config, meshes, out_csv=None, keep_going=True):
    """Run one case on a mesh sequence and tabulate errors and orders.

    ``meshes`` holds mesh specs (``cube:n`` strings) or PrimalMesh objects of
    increasing size.  Failed rows are reported and skipped; remaining rows
    still run.
    """
    from .cases import case_mesh
    from .meshing import PrimalMesh
    from .stepping import prepare, run

    if config.exact_velocity is None or config.exact_pressure is None:
        raise ValueError("convergence runs need a case with an exact solution")

    rows = []
    failures = []
    for spec in meshes:
        mesh = spec if isinstance(spec, PrimalMesh) else case_mesh(config, spec)
        try:
            result = run(config, mesh)
            ops, _ = prepare(mesh, config)
            ep, ev = l2_errors(ops, result.state, config.exact_velocity,
                               config.exact_pressure)
            rows.append(ConvergenceRow(config.p, config.p_gamma, mesh.n_tets, ep, ev))
        except Exception as exc:  # noqa: BLE001 - rows are independent
            failures.append((spec, exc))
            if not keep_going:
                raise
    observed_orders(rows)
    if out_csv is not None:
        write_convergence_csv(out_csv, rows)
    if failures and not rows:
        raise RuntimeError(f"all convergence rows failed; first error: {failures[0][1]}")
    return rows, failures


_CSV_HEADER = ["p", "p_gamma", "N_e", "err_p", "err_v", "order_p", "order_v"]


def write_convergence_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for r in rows:
            w.writerow([r.p, r.p_gamma, r.n_elements,
                        f"{r.err_p:.17E}", f"{r.err_v:.17E}",
                        f"{r.order_p:.17E}", f"{r.order_v:.17E}"])
    return path


def read_convergence_csv(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _CSV_HEADER:
            raise ValueError(f"unexpected convergence table header: {header}")
        for rec in reader:
            rows.append(ConvergenceRow(int(rec[0]), int(rec[1]), int(rec[2]),
                                       float(rec[3]), float(rec[4]),
                                       float(rec[5]), float(rec[6])))
    return rows


def evaluate_velocity(ops: ElementOperators, state: SolutionState, points):
    """Point values of the end-of-slab primal velocity (for sampling lines).

    Points are located by brute force; each must lie in some tet.
    """
    points = np.atleast_2d(points)
    vend = end_trace(ops, state.v_primal)
    out = np.empty((len(points), 3))
    rel = points[:, None, :] - ops.tet_origin[None, :, :]
    ref = np.einsum("ebd,ped->peb", ops.jinv, rel)
    inside = (ref.min(axis=2) > -1e-9) & (ref.sum(axis=2) < 1.0 + 1e-9)
    for i, x in enumerate(points):
        cands = np.flatnonzero(inside[i])
        if len(cands) == 0:
            raise ValueError(f"point {x} lies outside the mesh")
        e = int(cands[0])
        out[i] = ops.nodal.eval(ref[i, e][None, :])[0] @ vend[e]
    return out
