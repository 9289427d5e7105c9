"""Precomputed element blocks for the staggered space-time scheme.

All space-time element matrices factor into a time coupling matrix (built
from the slab time basis on [0, 1]) and a spatial block, because every basis
function is a tensor product of a spatial polynomial and a time polynomial.
The spatial blocks are assembled once per mesh here; slab size enters only
through scalar factors applied at run time.

Conventions.  Space-time coefficient arrays are indexed (element, time mode,
space mode[, component]).  Flattened space-time matrices returned by
``face_blocks``/``tet_blocks`` use time-major ordering, i.e. entry
``lt * n_space + ls``.  The sign of a face with respect to an adjacent tet is
+1 for the left element and -1 for the right one; face normals point out of
the left element, so ``sign * normal`` is the outward normal of the tet.
"""

import numpy as np

from .basis import monomial_exponents, nodal_coeffs, time_basis, time_matrices
from .meshing import DualMesh, PrimalMesh, TopologyError
from .quadrature import quad_rule


class ConditioningError(RuntimeError):
    """A local mass block is numerically singular."""


# face closure kinds; boundary faces default to prescribed velocity
FACE_INTERIOR = 0
FACE_VELOCITY = 1
FACE_SLIP = 2
FACE_PRESSURE = 3

_COND_LIMIT = 1e14
_CHUNK = 2048


def orientation_sign(left: int, right: int, tet: int) -> float:
    """Side sign of a tet with respect to a face: +1 left, -1 right.

    Follows the rational form (right - 2 tet + left) / (right - left), which
    also yields +1 for boundary faces where right is the -1 marker.
    """
    if tet != left and tet != right:
        raise TopologyError(f"tet {tet} is not adjacent to a face with sides ({left}, {right})")
    return (right - 2 * tet + left) / (right - left)


def _taylor_values(points, center, h, expo):
    """Shifted-monomial values at (n_faces, nq, 3) point batches."""
    u = (points - center[:, None, :]) / h[:, None, None]
    return (
        u[:, :, None, 0] ** expo[None, None, :, 0]
        * u[:, :, None, 1] ** expo[None, None, :, 1]
        * u[:, :, None, 2] ** expo[None, None, :, 2]
    )


class ElementOperators:
    """Spatial blocks plus time couplings for one mesh and degree pair.

    face_kinds optionally classifies each face (FACE_* constants); by default
    every boundary face is treated as prescribed-velocity, which only affects
    the boundary closure of the five-point Laplacian blocks.
    """

    def __init__(self, mesh: PrimalMesh, dual: DualMesh, p: int, p_gamma: int,
                 face_kinds=None, quad_extra: int = 0):
        self.mesh = mesh
        self.dual = dual
        self.p = p
        self.p_gamma = p_gamma
        self.nodal = nodal_coeffs(p)
        self.expo = monomial_exponents(p)
        self.nphi = self.nodal.n
        self.npsi = len(self.expo)
        self.tbasis = time_basis(p_gamma)
        self.ngamma = self.tbasis.n

        tm = time_matrices(self.tbasis)
        self.t_gram = tm["gram"]
        self.t_dgram = tm["dgram"]
        self.t_end = tm["end"]
        self.t_upwind = tm["upwind"]
        self.g0 = tm["at0"]
        self.g1 = tm["at1"]
        self.t_mass = self.t_end - self.t_dgram
        self.t_mass_inv = np.linalg.inv(self.t_mass)
        self.t_gram_inv = np.linalg.inv(self.t_gram)

        if face_kinds is None:
            face_kinds = np.where(mesh.face_right < 0, FACE_VELOCITY, FACE_INTERIOR)
        self.face_kinds = np.asarray(face_kinds, dtype=int)
        if np.any((self.face_kinds != FACE_INTERIOR) & (mesh.face_right >= 0)):
            raise TopologyError("interior faces cannot carry a boundary closure")

        self.quad_degree = 2 * p + p_gamma + 2 + quad_extra
        self.conv_degree = 3 * p + quad_extra

        self._build_time_quadrature()
        self._build_tets()
        self._build_faces()
        self._build_runtime_tables()

    # ------------------------------------------------------------------
    # construction

    def _build_time_quadrature(self):
        nq = max(self.ngamma + 1, (3 * self.p_gamma + 2) // 2 + 1)
        rule = quad_rule("interval", 2 * nq - 1)
        self.tq_tau = rule.points[:, 0]
        self.tq_w = rule.weights
        self.tq_vals = self.tbasis.eval(self.tq_tau)

    def _build_tets(self):
        mesh = self.mesh
        v0 = mesh.nodes[mesh.tets[:, 0]]
        edges = mesh.nodes[mesh.tets[:, 1:]] - v0[:, None, :]
        self.jac = np.transpose(edges, (0, 2, 1))  # x = v0 + J @ xi
        self.jinv = np.linalg.inv(self.jac)
        self.detj = np.abs(np.linalg.det(self.jac))
        self.tet_origin = v0

        rule = quad_rule("tetrahedron", self.quad_degree)
        phi = self.nodal.eval(rule.points)
        gram_ref = np.einsum("q,qk,ql->kl", rule.weights, phi, phi)
        self.tet_gram = self.detj[:, None, None] * gram_ref[None, :, :]
        gram_ref_inv = np.linalg.inv(gram_ref)
        self.tet_gram_inv = gram_ref_inv[None, :, :] / self.detj[:, None, None]
        self.phi_moment = self.detj[:, None] * np.einsum("q,qk->k", rule.weights, phi)[None, :]

        self.tet_sigma = np.where(
            mesh.face_left[mesh.tet_faces] == np.arange(mesh.n_tets)[:, None], 1.0, -1.0
        )
        self.tet_side = (self.tet_sigma < 0).astype(int)
        self.neighbor_safe = np.where(mesh.neighbor >= 0, mesh.neighbor, np.arange(mesh.n_tets)[:, None])

    def _parent_nodal(self, pts, parents, shift=None, gradients=False):
        """Nodal basis of the parent tets evaluated at physical points.

        pts has shape (nf, nq, 3) in the face frame; ``shift`` moves points
        into the parents' own frame (periodic right sides).
        """
        x = pts if shift is None else pts - shift[:, None, :]
        rel = x - self.tet_origin[parents][:, None, :]
        ref = np.einsum("fbd,fqd->fqb", self.jinv[parents], rel)
        flat = ref.reshape(-1, 3)
        vals = self.nodal.eval(flat).reshape(ref.shape[0], ref.shape[1], self.nphi)
        if not gradients:
            return vals
        gref = self.nodal.grad(flat).reshape(ref.shape[0], ref.shape[1], self.nphi, 3)
        gphys = np.einsum("fqkb,fbd->fqkd", gref, self.jinv[parents])
        return vals, gphys

    def _build_faces(self):
        mesh, dual = self.mesh, self.dual
        nd = mesh.n_faces
        nphi, npsi = self.nphi, self.npsi

        vol_rule = quad_rule("tetrahedron", self.quad_degree)
        tri_rule = quad_rule("triangle", self.quad_degree)
        nqs, nqf = vol_rule.n, tri_rule.n

        self.taylor_gram = np.zeros((nd, npsi, npsi))
        self.grad_blocks = np.zeros((nd, 2, 3, npsi, nphi))
        self.div_blocks = np.zeros((nd, 2, 3, nphi, npsi))
        self.mix_blocks = np.zeros((nd, 2, nphi, npsi))
        self.sub_pts = np.zeros((nd, 2, nqs, 3))
        self.sub_w = np.zeros((nd, 2, nqs))
        self.sub_psi = np.zeros((nd, 2, nqs, npsi))
        grad_vol = np.zeros((nd, 2, 3, npsi, nphi))
        div_vol = np.zeros((nd, 2, 3, nphi, npsi))

        parents = np.stack([mesh.face_left, np.maximum(mesh.face_right, 0)], axis=1)
        subverts = (dual.sub_left, dual.sub_right)
        interior = dual.is_interior

        for lo in range(0, nd, _CHUNK):
            sl = slice(lo, min(lo + _CHUNK, nd))
            nsl = sl.stop - sl.start
            center, h = dual.center[sl], dual.h[sl]
            shift = mesh.face_shift[sl]

            # face (jump) integrals, shared by both sides
            fnodes = mesh.nodes[mesh.face_nodes[sl]]
            e1 = fnodes[:, 1] - fnodes[:, 0]
            e2 = fnodes[:, 2] - fnodes[:, 0]
            scale = np.linalg.norm(np.cross(e1, e2), axis=1)
            fpts = (fnodes[:, None, 0, :]
                    + tri_rule.points[None, :, 0, None] * e1[:, None, :]
                    + tri_rule.points[None, :, 1, None] * e2[:, None, :])
            fw = tri_rule.weights[None, :] * scale[:, None]
            psi_f = _taylor_values(fpts, center, h, self.expo)
            normal = mesh.face_normal[sl]

            for side in range(2):
                par = parents[sl, side]
                mask = interior[sl] if side == 1 else np.ones(nsl, dtype=bool)
                verts = subverts[side][sl]
                js = np.transpose(verts[:, 1:] - verts[:, 0:1], (0, 2, 1))
                dets = np.abs(np.linalg.det(js))
                pts = verts[:, None, 0, :] + np.einsum("qb,fdb->fqd", vol_rule.points, js)
                w = vol_rule.weights[None, :] * dets[:, None]
                w[~mask] = 0.0
                psi = _taylor_values(pts, center, h, self.expo)
                sshift = shift if side == 1 else None
                phi, gphi = self._parent_nodal(pts, par, shift=sshift, gradients=True)

                self.sub_pts[sl, side] = pts
                self.sub_w[sl, side] = w
                self.sub_psi[sl, side] = psi
                self.taylor_gram[sl] += np.einsum("fq,fqk,fql->fkl", w, psi, psi)
                self.mix_blocks[sl, side] = np.einsum("fq,fqk,fql->fkl", w, phi, psi)
                gv = np.einsum("fq,fqk,fqld->fdkl", w, psi, gphi)
                dv = -np.einsum("fq,fqkd,fql->fdkl", w, gphi, psi)
                grad_vol[sl, side] = gv
                div_vol[sl, side] = dv

                # jump terms on the face itself
                fshift = shift if side == 1 else None
                phi_f = self._parent_nodal(fpts, par, shift=fshift)
                jump_pf = np.einsum("fq,fqk,fql->fkl", fw, psi_f, phi_f)
                jump_fp = np.einsum("fq,fqk,fql->fkl", fw, phi_f, psi_f)
                sigma = 1.0 if side == 0 else -1.0
                jgrad = -sigma * np.einsum("fd,fkl->fdkl", normal, jump_pf)
                jdiv = sigma * np.einsum("fd,fkl->fdkl", normal, jump_fp)
                if side == 1:
                    jgrad[~mask] = 0.0
                    jdiv[~mask] = 0.0
                self.grad_blocks[sl, side] = gv + jgrad
                self.div_blocks[sl, side] = dv + jdiv

        self.taylor_gram_inv = np.linalg.inv(self.taylor_gram)
        cond = (np.abs(self.taylor_gram).sum(axis=1).max(axis=1)
                * np.abs(self.taylor_gram_inv).sum(axis=1).max(axis=1))
        if np.any(cond > _COND_LIMIT):
            j = int(np.argmax(cond))
            raise ConditioningError(
                f"dual mass block at face {j} is numerically singular (cond {cond[j]:.3e})"
            )

        self._build_laplacian(grad_vol, div_vol)

    def _build_laplacian(self, grad_vol, div_vol):
        """Five-point Laplacian blocks, gathered per (tet, local face).

        The sign convention makes the blocks positive semi-definite, i.e.
        ``lap`` acts like the negative discrete pressure Laplacian.
        """
        mesh = self.mesh
        kinds = self.face_kinds

        lap_full = -np.einsum("fadkl,flm,fbdmn->fabkn",
                              self.div_blocks, self.taylor_gram_inv, self.grad_blocks)
        # volume-only variant: natural (do-nothing) viscous closure
        lap_vol = -np.einsum("fadkl,flm,fbdmn->fabkn", div_vol, self.taylor_gram_inv, grad_vol)

        press = lap_full.copy()
        press[kinds == FACE_VELOCITY] = 0.0
        press[kinds == FACE_SLIP] = 0.0
        visc = lap_full.copy()
        natural = (kinds == FACE_SLIP) | (kinds == FACE_PRESSURE)
        visc[natural] = lap_vol[natural]

        s = self.tet_side
        f = mesh.tet_faces
        self.lap_press_diag = press[f, s, s]
        self.lap_press_off = press[f, s, 1 - s]
        self.lap_visc_diag = visc[f, s, s]
        self.lap_visc_off = visc[f, s, 1 - s]
        # summed/transposed variants for the batched-matmul fast path
        self.lap_press_diag_sum = self.lap_press_diag.sum(axis=1).copy()
        self.lap_visc_diag_sum = self.lap_visc_diag.sum(axis=1).copy()
        self.lap_press_diag_sum_t = self.lap_press_diag_sum.transpose(0, 2, 1).copy()
        self.lap_visc_diag_sum_t = self.lap_visc_diag_sum.transpose(0, 2, 1).copy()
        self.lap_press_off_t = self.lap_press_off.transpose(0, 1, 3, 2).copy()
        self.lap_visc_off_t = self.lap_visc_off.transpose(0, 1, 3, 2).copy()

    def _build_runtime_tables(self):
        """Face-trace tables at the convective quadrature degree."""
        mesh, dual = self.mesh, self.dual
        nd = mesh.n_faces
        tri_rule = quad_rule("triangle", self.conv_degree)
        nqf = tri_rule.n

        fnodes = mesh.nodes[mesh.face_nodes]
        e1 = fnodes[:, 1] - fnodes[:, 0]
        e2 = fnodes[:, 2] - fnodes[:, 0]
        scale = np.linalg.norm(np.cross(e1, e2), axis=1)
        self.face_pts = (fnodes[:, None, 0, :]
                         + tri_rule.points[None, :, 0, None] * e1[:, None, :]
                         + tri_rule.points[None, :, 1, None] * e2[:, None, :])
        self.face_w = tri_rule.weights[None, :] * scale[:, None]

        self.trace_phi = np.zeros((nd, 2, nqf, self.nphi))
        self.trace_phi[:, 0] = self._parent_nodal(self.face_pts, mesh.face_left)
        right = np.maximum(mesh.face_right, 0)
        self.trace_phi[:, 1] = self._parent_nodal(self.face_pts, right, shift=mesh.face_shift)
        self.trace_phi[mesh.face_right < 0, 1] = 0.0
        self.face_psi = _taylor_values(self.face_pts, dual.center, dual.h, self.expo)

        rule = quad_rule("tetrahedron", self.conv_degree)
        self.conv_ref = rule
        self.conv_phi = self.nodal.eval(rule.points)
        self.conv_gref = self.nodal.grad(rule.points)

    # ------------------------------------------------------------------
    # full space-time blocks (time-major kron layout)

    def _kron(self, tmat, smat):
        return np.kron(tmat, smat)

    def face_blocks(self, j: int, dt: float) -> dict:
        """Space-time matrices attached to face j for a slab of size dt."""
        a = self.taylor_gram[j]
        out = {
            "mass_end": self._kron(self.t_end, a),
            "mass_upwind": self._kron(self.t_upwind, a),
            "mass_dt": self._kron(self.t_dgram, a),
            "mass_slab": self._kron(self.t_mass, a),
            "mass_st": dt * self._kron(self.t_gram, a),
        }
        for side, name in ((0, "left"), (1, "right")):
            out[f"grad_{name}"] = np.stack(
                [dt * self._kron(self.t_gram, self.grad_blocks[j, side, d]) for d in range(3)]
            )
            out[f"mix_{name}"] = dt * self._kron(self.t_gram, self.mix_blocks[j, side])
        return out

    def tet_blocks(self, i: int, dt: float) -> dict:
        """Space-time matrices attached to tet i for a slab of size dt."""
        g = self.tet_gram[i]
        out = {
            "gram_st": dt * self._kron(self.t_gram, g),
            "mass_end": self._kron(self.t_end, g),
            "mass_upwind": self._kron(self.t_upwind, g),
            "mass_dt": self._kron(self.t_dgram, g),
            "mass_slab": self._kron(self.t_mass, g),
            "div": [],
            "mix": [],
        }
        for q in range(4):
            f = self.mesh.tet_faces[i, q]
            s = self.tet_side[i, q]
            out["div"].append(np.stack(
                [dt * self._kron(self.t_gram, self.div_blocks[f, s, d]) for d in range(3)]
            ))
            out["mix"].append(dt * self._kron(self.t_gram, self.mix_blocks[f, s]))
        return out

    # ------------------------------------------------------------------
    # source moments

    def source_moments_dual(self, fn, t_n: float, dt: float, faces=None) -> np.ndarray:
        """Space-time moments of a source field over the dual elements.

        Returns (n_faces, n_time, n_psi, 3); ``fn(points, t)`` must accept an
        (n, 3) point array and a scalar time.
        """
        idx = np.arange(self.mesh.n_faces) if faces is None else np.atleast_1d(faces)
        out = np.zeros((len(idx), self.ngamma, self.npsi, 3))
        shift = self.mesh.face_shift[idx]
        for side in range(2):
            pts = self.sub_pts[idx, side]
            w = self.sub_w[idx, side]
            psi = self.sub_psi[idx, side]
            xtrue = pts - shift[:, None, :] if side == 1 else pts
            for qt, tau in enumerate(self.tq_tau):
                vals = fn(xtrue.reshape(-1, 3), t_n + tau * dt).reshape(len(idx), -1, 3)
                out += dt * self.tq_w[qt] * np.einsum(
                    "a,fq,fqk,fqc->fakc", self.tq_vals[qt], w, psi, vals
                )
        return out

    def source_moments_primal(self, fn, t_n: float, dt: float) -> np.ndarray:
        """Space-time moments of a source field against the tet test basis."""
        mesh = self.mesh
        rule = self.conv_ref
        pts = (self.tet_origin[:, None, :]
               + np.einsum("qb,edb->eqd", rule.points, self.jac))
        w = rule.weights[None, :] * self.detj[:, None]
        out = np.zeros((mesh.n_tets, self.ngamma, self.nphi, 3))
        for qt, tau in enumerate(self.tq_tau):
            vals = fn(pts.reshape(-1, 3), t_n + tau * dt).reshape(mesh.n_tets, -1, 3)
            out += dt * self.tq_w[qt] * np.einsum(
                "a,eq,qk,eqc->eakc", self.tq_vals[qt], w, self.conv_phi, vals
            )
        return out

    # ------------------------------------------------------------------
    # spatial L2 projections (used for initial data)

    def project_dual(self, fn) -> np.ndarray:
        """Spatial L2 projection of a velocity field onto the dual elements."""
        moments = np.zeros((self.mesh.n_faces, self.npsi, 3))
        shift = self.mesh.face_shift
        for side in range(2):
            pts = self.sub_pts[:, side]
            xtrue = pts - shift[:, None, :] if side == 1 else pts
            vals = fn(xtrue.reshape(-1, 3)).reshape(self.mesh.n_faces, -1, 3)
            moments += np.einsum("fq,fqk,fqc->fkc", self.sub_w[:, side], self.sub_psi[:, side], vals)
        return np.einsum("fkl,flc->fkc", self.taylor_gram_inv, moments)

    def project_primal(self, fn, vector: bool = True) -> np.ndarray:
        """Spatial L2 projection of a field onto the tet nodal basis."""
        rule = self.conv_ref
        pts = (self.tet_origin[:, None, :]
               + np.einsum("qb,edb->eqd", rule.points, self.jac))
        w = rule.weights[None, :] * self.detj[:, None]
        vals = fn(pts.reshape(-1, 3))
        if vector:
            vals = vals.reshape(self.mesh.n_tets, -1, 3)
            m = np.einsum("eq,qk,eqc->ekc", w, self.conv_phi, vals)
            return np.einsum("ekl,elc->ekc", self.tet_gram_inv, m)
        vals = np.asarray(vals).reshape(self.mesh.n_tets, -1)
        m = np.einsum("eq,qk,eq->ek", w, self.conv_phi, vals)
        return np.einsum("ekl,el->ek", self.tet_gram_inv, m)
