"""Matrix-free application of the discrete operators.

All functions are pure: they combine the immutable block store from
``assembly`` with coefficient arrays.  Shapes used throughout:

    pressure        (n_tets, n_time, n_phi)
    dual velocity   (n_faces, n_time, n_psi, 3)
    primal velocity (n_tets, n_time, n_phi, 3)

The pressure operator is oriented so that it is symmetric positive
semi-definite for piecewise-constant-in-time bases (it acts like the negative
discrete pressure Laplacian scaled by the squared slab size).
"""

from dataclasses import dataclass, field

import numpy as np

from .assembly import FACE_INTERIOR, FACE_PRESSURE, FACE_SLIP, FACE_VELOCITY, ElementOperators
from .meshing import PrimalMesh


@dataclass
class SolutionState:
    """Space-time coefficients of one slab plus the slab's time window."""

    p: np.ndarray
    v_dual: np.ndarray
    v_primal: np.ndarray
    t: float
    dt: float

    def copy(self) -> "SolutionState":
        return SolutionState(self.p.copy(), self.v_dual.copy(), self.v_primal.copy(),
                             self.t, self.dt)

    def check_finite(self):
        for name, arr in (("pressure", self.p), ("dual velocity", self.v_dual),
                          ("primal velocity", self.v_primal)):
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite {name} coefficients")


def end_trace(ops: ElementOperators, coeffs: np.ndarray) -> np.ndarray:
    """Contract the time modes with their values at the end of the slab."""
    return np.einsum("t,ft...->f...", ops.g1, coeffs)


def constant_in_time(ops: ElementOperators, spatial: np.ndarray) -> np.ndarray:
    """Lift spatial coefficients to a slab field that is constant in time."""
    shape = (spatial.shape[0], ops.ngamma) + spatial.shape[1:]
    out = np.empty(shape)
    out[:, :] = spatial[:, None]
    return out


# ---------------------------------------------------------------------------
# boundary conditions

@dataclass
class BoundaryCondition:
    kind: str  # velocity | no-slip | slip | pressure
    velocity: object = None  # fn(points, t) -> (n, 3)
    pressure: object = None  # fn(points, t) -> (n,)


def velocity_bc(fn) -> BoundaryCondition:
    return BoundaryCondition("velocity", velocity=fn)


def no_slip() -> BoundaryCondition:
    return BoundaryCondition("no-slip", velocity=lambda x, t: np.zeros_like(x))


def slip_bc() -> BoundaryCondition:
    return BoundaryCondition("slip")


def pressure_outlet(fn) -> BoundaryCondition:
    if not callable(fn):
        value = float(fn)
        fn = lambda x, t: np.full(len(x), value)
    return BoundaryCondition("pressure", pressure=fn)


_KIND_CODE = {"velocity": FACE_VELOCITY, "no-slip": FACE_VELOCITY,
              "slip": FACE_SLIP, "pressure": FACE_PRESSURE}


def face_kinds_from_spec(mesh: PrimalMesh, spec: dict) -> np.ndarray:
    """Map boundary tags to face closure kinds; every tag needs a condition."""
    kinds = np.full(mesh.n_faces, FACE_INTERIOR, dtype=int)
    for j in mesh.boundary_faces:
        tag = int(mesh.face_tag[j])
        if tag not in spec:
            raise KeyError(f"boundary tag {tag} has no boundary condition")
        kinds[j] = _KIND_CODE[spec[tag].kind]
    return kinds


class BoundaryHandler:
    """Groups boundary faces of a mesh by condition for batched evaluation."""

    def __init__(self, ops: ElementOperators, spec: dict):
        mesh = ops.mesh
        self.ops = ops
        self.spec = dict(spec)
        kinds = face_kinds_from_spec(mesh, spec)
        if not np.array_equal(kinds, ops.face_kinds):
            raise ValueError("operator store was assembled with different face kinds")
        self.velocity_groups = []
        self.pressure_groups = []
        self.slip_faces = np.array([], dtype=int)
        bnd = mesh.boundary_faces
        tags = mesh.face_tag[bnd]
        for tag in np.unique(tags):
            faces = bnd[tags == tag]
            cond = spec[int(tag)]
            if cond.kind in ("velocity", "no-slip"):
                self.velocity_groups.append((faces, cond.velocity))
            elif cond.kind == "pressure":
                self.pressure_groups.append((faces, cond.pressure))
            elif cond.kind == "slip":
                self.slip_faces = np.concatenate([self.slip_faces, faces])
        self.has_velocity = any(len(f) for f, _ in self.velocity_groups)
        self.has_pressure = any(len(f) for f, _ in self.pressure_groups)
        self.has_slip = len(self.slip_faces) > 0
        # gauge is free when no pressure value is imposed anywhere
        self.pins_pressure = self.has_pressure


# ---------------------------------------------------------------------------
# projections between the grids

def dual_to_primal(ops: ElementOperators, v_dual: np.ndarray) -> np.ndarray:
    """L2 projection of the dual velocity onto the tet nodal basis."""
    f = ops.mesh.tet_faces
    s = ops.tet_side
    m = np.einsum("eqkl,eqtlc->etkc", ops.mix_blocks[f, s], v_dual[f])
    return np.einsum("ekm,etmc->etkc", ops.tet_gram_inv, m)


def primal_to_dual(ops: ElementOperators, v_primal: np.ndarray) -> np.ndarray:
    """L2 projection of the primal velocity back onto the dual elements.

    Boundary faces receive only their interior side's contribution.
    """
    mesh = ops.mesh
    right = np.maximum(mesh.face_right, 0)
    m = np.einsum("flk,ftlc->ftkc", ops.mix_blocks[:, 0], v_primal[mesh.face_left])
    m += np.einsum("flk,ftlc->ftkc", ops.mix_blocks[:, 1], v_primal[right])
    return np.einsum("fkm,ftmc->ftkc", ops.taylor_gram_inv, m)


# ---------------------------------------------------------------------------
# discrete divergence and pressure operator

def divergence(ops: ElementOperators, v_dual: np.ndarray, dt: float) -> np.ndarray:
    """Discrete space-time divergence residual per tet, shape (E, nt, nphi)."""
    f = ops.mesh.tet_faces
    s = ops.tet_side
    r = np.einsum("eqdkl,eqtld->etk", ops.div_blocks[f, s], v_dual[f])
    return dt * np.einsum("at,etk->eak", ops.t_gram, r)


def pressure_apply(ops: ElementOperators, q: np.ndarray, dt: float) -> np.ndarray:
    """Five-point pressure operator (positive semi-definite orientation)."""
    tmp = np.matmul(q, ops.lap_press_diag_sum_t)
    tmp += np.matmul(q[ops.neighbor_safe], ops.lap_press_off_t).sum(axis=1)
    tfac = ops.t_gram @ ops.t_mass_inv @ ops.t_gram
    if ops.ngamma == 1:
        return (dt * dt * tfac[0, 0]) * tmp
    return dt * dt * np.einsum("at,etk->eak", tfac, tmp)


def pressure_gradient_dual(ops: ElementOperators, p_hat: np.ndarray, dt: float,
                           outlet_moment: np.ndarray | None = None) -> np.ndarray:
    """Slab mass inverse applied to the pressure-gradient moments per face.

    This is the velocity decrement caused by a pressure field; rows of
    prescribed-velocity and slip faces are zero because their velocity does
    not respond to the pressure.
    """
    mesh = ops.mesh
    right = np.maximum(mesh.face_right, 0)
    m = np.einsum("fdkl,ftl->ftkd", ops.grad_blocks[:, 0], p_hat[mesh.face_left])
    m += np.einsum("fdkl,ftl->ftkd", ops.grad_blocks[:, 1], p_hat[right])
    m = np.einsum("fkm,ftmd->ftkd", ops.taylor_gram_inv, m)
    out = dt * np.einsum("at,ftkd->fakd", ops.t_mass_inv @ ops.t_gram, m)
    if outlet_moment is not None:
        om = np.einsum("fkm,ftmd->ftkd", ops.taylor_gram_inv, outlet_moment)
        out += np.einsum("at,ftkd->fakd", ops.t_mass_inv, om)
    constrained = (ops.face_kinds == FACE_VELOCITY) | (ops.face_kinds == FACE_SLIP)
    out[constrained] = 0.0
    return out


def pressure_gradient_primal(ops: ElementOperators, p_hat: np.ndarray, dt: float,
                             outlet_moment: np.ndarray | None = None) -> np.ndarray:
    """Pressure-gradient contribution averaged onto the primal grid."""
    return dual_to_primal(ops, pressure_gradient_dual(ops, p_hat, dt, outlet_moment))


def velocity_update(ops: ElementOperators, v_face: np.ndarray, dp: np.ndarray,
                    dt: float) -> np.ndarray:
    """Correct the dual velocity with a pressure increment."""
    return v_face - pressure_gradient_dual(ops, dp, dt)


# ---------------------------------------------------------------------------
# viscous operator

def viscous_apply(ops: ElementOperators, v_primal: np.ndarray, nu: float,
                  dt: float) -> np.ndarray:
    """Implicit convection-free momentum operator on the primal grid.

    For nu = 0 this reduces to the slab mass matrix applied block-wise; the
    viscous part reuses the five-point Laplacian blocks with the viscous
    boundary closure.
    """
    if nu < 0:
        raise ValueError("viscosity must be non-negative")
    mass = np.einsum("ekl,etlc->etkc", ops.tet_gram, v_primal)
    out = np.einsum("at,etkc->eakc", ops.t_mass, mass)
    if nu > 0:
        tmp = np.einsum("eqkl,etlc->etkc", ops.lap_visc_diag, v_primal)
        tmp += np.einsum("eqkl,eqtlc->etkc", ops.lap_visc_off, v_primal[ops.neighbor_safe])
        out += nu * dt * np.einsum("at,etkc->eakc", ops.t_gram, tmp)
    return out


def viscous_apply_component(ops: ElementOperators, w: np.ndarray, nu: float,
                            dt: float) -> np.ndarray:
    """Scalar-component fast path of ``viscous_apply`` (batched matmuls)."""
    mass = np.matmul(w, ops.tet_gram)  # tet_gram is symmetric
    if ops.ngamma == 1:
        out = ops.t_mass[0, 0] * mass
    else:
        out = np.einsum("at,etk->eak", ops.t_mass, mass)
    if nu > 0:
        tmp = np.matmul(w, ops.lap_visc_diag_sum_t)
        tmp += np.matmul(w[ops.neighbor_safe], ops.lap_visc_off_t).sum(axis=1)
        if ops.ngamma == 1:
            out += (nu * dt * ops.t_gram[0, 0]) * tmp
        else:
            out += nu * dt * np.einsum("at,etk->eak", ops.t_gram, tmp)
    return out


def viscous_apply_stacked(ops: ElementOperators, v: np.ndarray, nu: float,
                          dt: float) -> np.ndarray:
    """All-components fast path: one batched-matmul pass over the blocks.

    Time and component axes are folded into the matmul columns; the small
    time couplings are applied afterwards.
    """
    ne, ng, nf, nc = v.shape
    vm = v.transpose(0, 2, 1, 3).reshape(ne, nf, ng * nc)
    mass = np.matmul(ops.tet_gram, vm)
    if nu > 0:
        tmp = np.matmul(ops.lap_visc_diag_sum, vm)
        tmp += np.matmul(ops.lap_visc_off, vm[ops.neighbor_safe]).sum(axis=1)
    if ops.ngamma == 1:
        out = ops.t_mass[0, 0] * mass
        if nu > 0:
            out += (nu * dt * ops.t_gram[0, 0]) * tmp
        return out.reshape(ne, nf, ng, nc).transpose(0, 2, 1, 3)
    mass = mass.reshape(ne, nf, ng, nc)
    out = np.einsum("at,ektc->eakc", ops.t_mass, mass)
    if nu > 0:
        out += nu * dt * np.einsum("at,ektc->eakc", ops.t_gram, tmp.reshape(ne, nf, ng, nc))
    return out


def viscous_boundary_rhs(ops: ElementOperators, bh: BoundaryHandler, t_n: float,
                         dt: float, nu: float) -> np.ndarray:
    """Prescribed-velocity data entering the viscous jump, moved to the right
    side of the momentum system."""
    out = np.zeros((ops.mesh.n_tets, ops.ngamma, ops.nphi, 3))
    if nu == 0 or not bh.has_velocity:
        return out
    for faces, fn in bh.velocity_groups:
        pts = ops.face_pts[faces]
        w = ops.face_w[faces]
        psi = ops.face_psi[faces]
        nrm = ops.mesh.face_normal[faces]
        moment = np.zeros((len(faces), ops.ngamma, ops.npsi, 3, 3))
        for qt, tau in enumerate(ops.tq_tau):
            g = fn(pts.reshape(-1, 3), t_n + tau * dt).reshape(len(faces), -1, 3)
            moment += dt * ops.tq_w[qt] * np.einsum(
                "a,fq,fqk,fqc,fm->fakcm", ops.tq_vals[qt], w, psi, g, nrm)
        # the slab-mass inverse's time factor cancels against the divergence
        # block's, so only the spatial inverse is applied
        sig = np.einsum("fkl,ftlcm->ftkcm", ops.taylor_gram_inv[faces], moment)
        contrib = nu * np.einsum("fmkl,ftlcm->ftkc", ops.div_blocks[faces, 0], sig)
        np.add.at(out, ops.mesh.face_left[faces], contrib)
    return out


# ---------------------------------------------------------------------------
# boundary data on the dual grid

def boundary_dual_coeffs(ops: ElementOperators, bh: BoundaryHandler, t_n: float,
                         dt: float) -> list:
    """Space-time L2 projection of prescribed boundary velocities onto the
    single-sub-tet dual elements.  Returns [(faces, coeffs)] per group."""
    out = []
    for faces, fn in bh.velocity_groups:
        pts = ops.sub_pts[faces, 0]
        w = ops.sub_w[faces, 0]
        psi = ops.sub_psi[faces, 0]
        moment = np.zeros((len(faces), ops.ngamma, ops.npsi, 3))
        for qt, tau in enumerate(ops.tq_tau):
            g = fn(pts.reshape(-1, 3), t_n + tau * dt).reshape(len(faces), -1, 3)
            moment += dt * ops.tq_w[qt] * np.einsum(
                "a,fq,fqk,fqc->fakc", ops.tq_vals[qt], w, psi, g)
        coeffs = np.einsum("ts,fskc->ftkc", ops.t_gram_inv, moment) / dt
        coeffs = np.einsum("fkl,ftlc->ftkc", ops.taylor_gram_inv[faces], coeffs)
        out.append((faces, coeffs))
    return out


def boundary_dual_coeffs_spatial(ops: ElementOperators, bh: BoundaryHandler,
                                 t: float) -> list:
    """Spatial L2 projection of the boundary data at one instant (used to
    make initial states honor the velocity boundary conditions)."""
    out = []
    for faces, fn in bh.velocity_groups:
        pts = ops.sub_pts[faces, 0]
        w = ops.sub_w[faces, 0]
        psi = ops.sub_psi[faces, 0]
        g = fn(pts.reshape(-1, 3), t).reshape(len(faces), -1, 3)
        moment = np.einsum("fq,fqk,fqc->fkc", w, psi, g)
        out.append((faces, np.einsum("fkl,flc->fkc", ops.taylor_gram_inv[faces], moment)))
    return out


def slip_dual_coeffs(ops: ElementOperators, bh: BoundaryHandler,
                     v_primal: np.ndarray) -> tuple:
    """Tangential projection of the interior trace onto slip dual elements.

    The normal velocity is removed mode-wise; this lags one Picard iteration
    behind the interior field.
    """
    faces = bh.slip_faces
    if len(faces) == 0:
        return faces, None
    pts = ops.sub_pts[faces, 0]
    w = ops.sub_w[faces, 0]
    psi = ops.sub_psi[faces, 0]
    phi = ops._parent_nodal(pts, ops.mesh.face_left[faces])
    vals = np.einsum("fqk,ftkc->ftqc", phi, v_primal[ops.mesh.face_left[faces]])
    nrm = ops.mesh.face_normal[faces]
    vals -= np.einsum("ftq,fc->ftqc", np.einsum("ftqc,fc->ftq", vals, nrm), nrm)
    m = np.einsum("fq,fqk,ftqc->ftkc", w, psi, vals)
    return faces, np.einsum("fkl,ftlc->ftkc", ops.taylor_gram_inv[faces], m)


def apply_boundary_velocity(ops: ElementOperators, v_dual: np.ndarray, groups,
                            slip=None) -> np.ndarray:
    """Overwrite constrained dual rows with their prescribed coefficients."""
    for faces, coeffs in groups:
        v_dual[faces] = coeffs
    if slip is not None and slip[1] is not None:
        v_dual[slip[0]] = slip[1]
    return v_dual


def outlet_pressure_moment(ops: ElementOperators, bh: BoundaryHandler, t_n: float,
                           dt: float) -> np.ndarray | None:
    """Exterior pressure trace moments at outlet faces (jump-term data)."""
    if not bh.has_pressure:
        return None
    out = np.zeros((ops.mesh.n_faces, ops.ngamma, ops.npsi, 3))
    for faces, fn in bh.pressure_groups:
        pts = ops.face_pts[faces]
        w = ops.face_w[faces]
        psi = ops.face_psi[faces]
        nrm = ops.mesh.face_normal[faces]
        for qt, tau in enumerate(ops.tq_tau):
            pb = np.asarray(fn(pts.reshape(-1, 3), t_n + tau * dt)).reshape(len(faces), -1)
            out[faces] += dt * ops.tq_w[qt] * np.einsum(
                "a,fq,fqk,fq,fd->fakd", ops.tq_vals[qt], w, psi, pb, nrm)
    return out


# ---------------------------------------------------------------------------
# convective terms

def rusanov(v_minus, v_plus, n):
    """Local Lax-Friedrichs flux of the momentum advection tensor.

    ``v_minus`` is the interior trace, ``v_plus`` the exterior one, ``n`` the
    outward normal; all arrays broadcast over leading axes with a trailing
    component axis of length 3.
    """
    v_minus = np.asarray(v_minus, dtype=float)
    v_plus = np.asarray(v_plus, dtype=float)
    n = np.asarray(n, dtype=float)
    fm = np.sum(v_minus * n, axis=-1)[..., None] * v_minus
    fp = np.sum(v_plus * n, axis=-1)[..., None] * v_plus
    smax = 2.0 * np.maximum(np.linalg.norm(v_minus, axis=-1),
                            np.linalg.norm(v_plus, axis=-1))
    return 0.5 * (fp + fm) - 0.5 * smax[..., None] * (v_plus - v_minus)


def convective_residual(ops: ElementOperators, v_primal: np.ndarray, dt: float,
                        t_n: float, bh: BoundaryHandler | None = None) -> np.ndarray:
    """Space-time convective residual per tet: upwind surface flux minus the
    volume integral of the flux against the test-function gradient."""
    mesh = ops.mesh
    f = mesh.tet_faces
    s = ops.tet_side
    phi_own = ops.trace_phi[f, s]
    phi_other = ops.trace_phi[f, 1 - s]
    nrm_out = (ops.tet_sigma[:, :, None] * mesh.face_normal[f])[:, :, None, :]
    wface = ops.face_w[f]
    wvol = ops.conv_ref.weights[None, :] * ops.detj[:, None]

    kinds_tf = ops.face_kinds[f]
    mask_slip = kinds_tf == FACE_SLIP
    mask_out = kinds_tf == FACE_PRESSURE
    vel_eval = []
    if bh is not None and bh.has_velocity:
        for faces, fn in bh.velocity_groups:
            owner = mesh.face_left[faces]
            local = np.argmax(f[owner] == faces[:, None], axis=1)
            vel_eval.append((owner, local, ops.face_pts[faces], fn))

    res = np.zeros((mesh.n_tets, ops.ngamma, ops.nphi, 3))
    for qt, tau in enumerate(ops.tq_tau):
        gam = ops.tq_vals[qt]
        vst = np.einsum("l,elkc->ekc", gam, v_primal)  # slab field at this tau
        # volume: flux tensor contracted with physical test gradients
        vv = np.matmul(ops.conv_phi[None, :, :], vst)
        u = np.matmul(vv, ops.jinv.transpose(0, 2, 1))
        fg = np.einsum("qkb,eqb->eqk", ops.conv_gref, u)
        contrib = -np.einsum("eqk,eqc->ekc", fg * wvol[:, :, None], vv)

        # surface: one-sided traces and upwind flux per (tet, local face)
        v_in = np.einsum("epqk,ekc->epqc", phi_own, vst)
        v_ex = np.einsum("epqk,epkc->epqc", phi_other, vst[ops.neighbor_safe])
        if bh is not None:
            t_phys = t_n + tau * dt
            for owner, local, pts, fn in vel_eval:
                g = fn(pts.reshape(-1, 3), t_phys).reshape(len(owner), -1, 3)
                v_ex[owner, local] = g
            if np.any(mask_slip):
                vn = np.sum(v_in * nrm_out, axis=-1)
                mirror = v_in - 2.0 * vn[..., None] * nrm_out
                v_ex[mask_slip] = mirror[mask_slip]
            if np.any(mask_out):
                v_ex[mask_out] = v_in[mask_out]
        flux = rusanov(v_in, v_ex, nrm_out)
        contrib += np.einsum("epqk,epqc->ekc", phi_own, flux * wface[..., None])
        res += dt * ops.tq_w[qt] * np.einsum("a,ekc->eakc", gam, contrib)
    return res
