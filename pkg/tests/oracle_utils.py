"""Brute-force space-time quadrature oracles for the element blocks.

These rebuild every block from its defining integral with an independent
integration path: explicit space-time point sets at an over-integration
degree, no tensor-product factorization and no reuse of the assembly
routines.  Basis values come from the public basis evaluators, which are
delta-property-tested on their own.
"""

import numpy as np

from stagdg.basis import nodal_coeffs, taylor_eval, time_basis
from stagdg.quadrature import quad_rule


def tet_points(verts, degree):
    """Quadrature points/weights on a physical tetrahedron."""
    rule = quad_rule("tetrahedron", degree)
    e = np.asarray(verts[1:]) - verts[0]
    pts = verts[0] + rule.points @ e
    det = abs(np.linalg.det(e.T))
    return pts, rule.weights * det


def tri_points(verts, degree):
    rule = quad_rule("triangle", degree)
    e = np.asarray(verts[1:]) - verts[0]
    pts = verts[0] + rule.points @ e
    scale = np.linalg.norm(np.cross(e[0], e[1]))
    return pts, rule.weights * scale


def time_points(degree):
    rule = quad_rule("interval", degree)
    return rule.points[:, 0], rule.weights


class NodalOnTet:
    """Physical-frame nodal basis of one tet."""

    def __init__(self, nodes, tet, p):
        self.basis = nodal_coeffs(p)
        v = nodes[tet]
        self.origin = v[0]
        self.jac = (v[1:] - v[0]).T
        self.jinv = np.linalg.inv(self.jac)

    def eval(self, x):
        ref = (np.atleast_2d(x) - self.origin) @ self.jinv.T
        return self.basis.eval(ref)

    def grad(self, x):
        ref = (np.atleast_2d(x) - self.origin) @ self.jinv.T
        return np.einsum("qkb,bd->qkd", self.basis.grad(ref), self.jinv)


class FaceOracle:
    """All space-time blocks attached to one face, from first principles.

    Flattened space-time indices are time-major: entry lt * n_space + ls.
    """

    def __init__(self, mesh, dual, j, p, p_gamma, dt, degree):
        self.mesh, self.dual, self.j = mesh, dual, j
        self.p, self.dt, self.degree = p, dt, degree
        self.tb = time_basis(p_gamma)
        self.ng = self.tb.n
        self.tau, self.tw = time_points(degree)
        self.gam = self.tb.eval(self.tau)
        self.dgam = self.tb.deriv(self.tau)
        self.gam0 = self.tb.eval(0.0)[0]
        self.gam1 = self.tb.eval(1.0)[0]
        self.t_gram = np.einsum("t,ta,tb->ab", self.tw, self.gam, self.gam)

        self.center = dual.center[j]
        self.h = dual.h[j]
        self.interior = bool(dual.is_interior[j])
        self.sides = [(0, dual.sub_left[j], int(mesh.face_left[j]), np.zeros(3))]
        if self.interior:
            self.sides.append((1, dual.sub_right[j], int(mesh.face_right[j]),
                               mesh.face_shift[j]))
        self.nodal = {parent: NodalOnTet(mesh.nodes, mesh.tets[parent], p)
                      for _, _, parent, _ in self.sides}
        self.npsi = taylor_eval(np.zeros((1, 3)), self.center, self.h, p).shape[1]

        fn = mesh.nodes[mesh.face_nodes[j]]
        self.fpts, self.fw = tri_points(fn, degree)
        self.normal = mesh.face_normal[j]

    def psi(self, x):
        return taylor_eval(x, self.center, self.h, self.p)

    def _spatial_gram(self):
        g = np.zeros((self.npsi, self.npsi))
        for _, verts, _, _ in self.sides:
            pts, w = tet_points(verts, self.degree)
            vals = self.psi(pts)
            g += np.einsum("q,qk,ql->kl", w, vals, vals)
        return g

    def mass_end(self):
        return np.kron(np.outer(self.gam1, self.gam1), self._spatial_gram())

    def mass_upwind(self):
        return np.kron(np.outer(self.gam0, self.gam1), self._spatial_gram())

    def mass_dt(self):
        tmat = np.einsum("t,ta,tb->ab", self.tw, self.dgam, self.gam)
        return np.kron(tmat, self._spatial_gram())

    def mass_st(self):
        return self.dt * np.kron(self.t_gram, self._spatial_gram())

    def _side_tables(self, side):
        _, verts, parent, shift = self.sides[side]
        nod = self.nodal[parent]
        pts, w = tet_points(verts, self.degree)
        return {
            "w": w,
            "psi": self.psi(pts),
            "gphi": nod.grad(pts - shift),
            "phi_f": nod.eval(self.fpts - shift),
            "psi_f": self.psi(self.fpts),
        }

    def grad_block(self, side):
        """Volume gradient moments minus the side-signed jump term."""
        t = self._side_tables(side)
        sigma = 1.0 if side == 0 else -1.0
        out = []
        for d in range(3):
            vol = np.einsum("q,qk,ql->kl", t["w"], t["psi"], t["gphi"][:, :, d])
            jump = sigma * self.normal[d] * np.einsum(
                "q,qk,ql->kl", self.fw, t["psi_f"], t["phi_f"])
            out.append(self.dt * np.kron(self.t_gram, vol - jump))
        return np.stack(out)

    def left_right_blocks(self, side):
        """Pressure block straight from the weak form: face term plus the
        volume term for the right side, face minus volume for the left."""
        t = self._side_tables(side)
        out = []
        for d in range(3):
            surf = self.normal[d] * np.einsum("q,qk,ql->kl", self.fw, t["psi_f"], t["phi_f"])
            vol = np.einsum("q,qk,ql->kl", t["w"], t["psi"], t["gphi"][:, :, d])
            spatial = surf + vol if side == 1 else surf - vol
            out.append(self.dt * np.kron(self.t_gram, spatial))
        return np.stack(out)

    def div_block(self, side):
        """Outward-signed face moments minus the volume term."""
        t = self._side_tables(side)
        sigma = 1.0 if side == 0 else -1.0
        out = []
        for d in range(3):
            surf = sigma * self.normal[d] * np.einsum(
                "q,qk,ql->kl", self.fw, t["phi_f"], t["psi_f"])
            vol = np.einsum("q,qkd,ql->kl", t["w"], t["gphi"][:, :, [d]], t["psi"])
            out.append(self.dt * np.kron(self.t_gram, surf - vol))
        return np.stack(out)

    def mix_block(self, side):
        _, verts, parent, shift = self.sides[side]
        nod = self.nodal[parent]
        pts, w = tet_points(verts, self.degree)
        phi = nod.eval(pts - shift)
        psi = self.psi(pts)
        return self.dt * np.kron(self.t_gram, np.einsum("q,qk,ql->kl", w, phi, psi))

    def source_moments(self, fn, t_n):
        """Space-time moments of a source field, (n_time * n_psi, 3)."""
        out = np.zeros((self.ng * self.npsi, 3))
        for _, verts, _, shift in self.sides:
            pts, w = tet_points(verts, self.degree)
            psi = self.psi(pts)
            for qt in range(len(self.tau)):
                vals = fn(pts - shift, t_n + self.tau[qt] * self.dt)
                stv = np.einsum("a,qk->qak", self.gam[qt], psi).reshape(len(pts), -1)
                out += self.dt * self.tw[qt] * np.einsum("q,qA,qc->Ac", w, stv, vals)
        return out


class TetOracle:
    """Space-time blocks attached to one tet."""

    def __init__(self, mesh, dual, i, p, p_gamma, dt, degree):
        self.mesh, self.i, self.dt = mesh, i, dt
        self.tb = time_basis(p_gamma)
        self.tau, self.tw = time_points(degree)
        self.gam = self.tb.eval(self.tau)
        self.dgam = self.tb.deriv(self.tau)
        self.gam0 = self.tb.eval(0.0)[0]
        self.gam1 = self.tb.eval(1.0)[0]
        self.t_gram = np.einsum("t,ta,tb->ab", self.tw, self.gam, self.gam)
        self.nodal = NodalOnTet(mesh.nodes, mesh.tets[i], p)
        self.pts, self.w = tet_points(mesh.nodes[mesh.tets[i]], degree)

    def _spatial_gram(self):
        phi = self.nodal.eval(self.pts)
        return np.einsum("q,qk,ql->kl", self.w, phi, phi)

    def gram_st(self):
        return self.dt * np.kron(self.t_gram, self._spatial_gram())

    def mass_end(self):
        return np.kron(np.outer(self.gam1, self.gam1), self._spatial_gram())

    def mass_upwind(self):
        return np.kron(np.outer(self.gam0, self.gam1), self._spatial_gram())

    def mass_dt(self):
        tmat = np.einsum("t,ta,tb->ab", self.tw, self.dgam, self.gam)
        return np.kron(tmat, self._spatial_gram())


def rel_err(a, b):
    """Frobenius difference relative to the oracle scale (absolute when the
    oracle block vanishes)."""
    scale = np.linalg.norm(b)
    diff = np.linalg.norm(np.asarray(a) - np.asarray(b))
    return diff / scale if scale > 1e-13 else diff
