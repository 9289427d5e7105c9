"""Primal tetrahedral mesh topology and the face-based staggered dual mesh.

The primal mesh carries the discrete pressure; every face owns a dual element
made of two sub-tetrahedra (the three face vertices plus the barycenter of
each adjacent tetrahedron) which carries the discrete velocity.  Periodic
boundaries are realized by merging matched boundary face pairs into interior
faces whose right side lives in a translated frame.
"""

from dataclasses import dataclass, field

import numpy as np


class TopologyError(ValueError):
    """Invalid mesh connectivity (non-manifold faces, duplicate cells, ...)."""


class GeometryError(ValueError):
    """Degenerate or inconsistent mesh geometry."""


class PairingError(ValueError):
    """Periodic face pairing failed."""


# local face m of a tet is the triangle opposite vertex m
_LOCAL_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])

_AXES = {"x": 0, "y": 1, "z": 2}


def signed_volumes(nodes, tets):
    a = nodes[tets[:, 1]] - nodes[tets[:, 0]]
    b = nodes[tets[:, 2]] - nodes[tets[:, 0]]
    c = nodes[tets[:, 3]] - nodes[tets[:, 0]]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


@dataclass
class PrimalMesh:
    nodes: np.ndarray
    tets: np.ndarray
    volumes: np.ndarray = field(repr=False)
    barycenters: np.ndarray = field(repr=False)
    # face tables; node triples are stored for the left-side realization
    face_nodes: np.ndarray = field(repr=False)
    face_nodes_right: np.ndarray = field(repr=False)
    face_left: np.ndarray = field(repr=False)
    face_right: np.ndarray = field(repr=False)  # -1 on boundary faces
    face_normal: np.ndarray = field(repr=False)
    face_area: np.ndarray = field(repr=False)
    face_tag: np.ndarray = field(repr=False)
    # translation taking right-frame coordinates into the left frame
    face_shift: np.ndarray = field(repr=False)
    tet_faces: np.ndarray = field(repr=False)
    neighbor: np.ndarray = field(repr=False)  # -1 across boundary faces

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_faces(self) -> int:
        return len(self.face_left)

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_right < 0)

    @property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_right >= 0)

    def face_side(self, tet: int, face: int) -> int:
        """0 if the tet is the left element of the face, 1 if the right."""
        if self.face_left[face] == tet:
            return 0
        if self.face_right[face] == tet:
            return 1
        raise TopologyError(f"tet {tet} is not adjacent to face {face}")


def _face_geometry(nodes, tri):
    e1 = nodes[tri[:, 1]] - nodes[tri[:, 0]]
    e2 = nodes[tri[:, 2]] - nodes[tri[:, 0]]
    cr = np.cross(e1, e2)
    nrm = np.linalg.norm(cr, axis=1)
    return cr / nrm[:, None], 0.5 * nrm


def build_connectivity(nodes, tets, boundary_faces=None) -> PrimalMesh:
    """Deduplicate faces, assign left/right sides and orient normals.

    The left element of each face is the adjacent tet with the smaller index;
    boundary faces keep their unique tet as left.  Normals point out of the
    left element.  ``boundary_faces`` optionally lists (n0, n1, n2, tag)
    records assigning integer tags to boundary faces.
    """
    nodes = np.asarray(nodes, dtype=float)
    tets = np.asarray(tets, dtype=int)
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise TopologyError("tets must be an (n, 4) index array")
    if tets.size and (tets.min() < 0 or tets.max() >= len(nodes)):
        raise TopologyError("tet references a node index out of range")
    if len(np.unique(np.sort(tets, axis=1), axis=0)) != len(tets):
        raise TopologyError("duplicated tets in input")

    # flip node order where the signed volume is negative
    tets = tets.copy()
    vol = signed_volumes(nodes, tets)
    flip = vol < 0
    tets[np.ix_(flip, [2, 3])] = tets[np.ix_(flip, [3, 2])]
    vol = signed_volumes(nodes, tets)
    if np.any(vol <= 0):
        bad = int(np.argmin(vol))
        raise GeometryError(f"tet {bad} has non-positive volume {vol[bad]:.3e}")

    n_tets = len(tets)
    tris = tets[:, _LOCAL_FACES].reshape(-1, 3)  # (4*n_tets, 3), tet-major
    key = np.sort(tris, axis=1)
    uniq, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    if np.any(counts > 2):
        bad = np.flatnonzero(counts > 2)[0]
        raise TopologyError(f"face {tuple(uniq[bad])} shared by more than two tets")

    n_faces = len(uniq)
    owner = np.tile(np.arange(n_tets)[:, None], (1, 4)).ravel()
    local = np.tile(np.arange(4)[None, :], (n_tets, 1)).ravel()

    order = np.argsort(inverse, kind="stable")
    face_sorted = inverse[order]
    first = np.searchsorted(face_sorted, np.arange(n_faces))
    slot0, slot1 = order[first], np.where(counts == 2, order[np.minimum(first + 1, len(order) - 1)], -1)

    t0 = owner[slot0]
    t1 = np.where(slot1 >= 0, owner[slot1], -1)
    # left = smaller tet index
    swap = (t1 >= 0) & (t1 < t0)
    left = np.where(swap, t1, t0)
    right = np.where(swap, t0, t1)
    left_slot = np.where(swap, slot1, slot0)

    face_nodes = tris[left_slot]
    bary = (nodes[tets[:, 0]] + nodes[tets[:, 1]] + nodes[tets[:, 2]] + nodes[tets[:, 3]]) / 4.0
    normal, area = _face_geometry(nodes, face_nodes)
    # orient out of the left tet
    out = np.einsum("ij,ij->i", normal, nodes[face_nodes[:, 0]] - bary[left])
    normal[out < 0] *= -1.0

    tet_faces = np.empty((n_tets, 4), dtype=int)
    tet_faces[owner, local] = inverse
    neighbor = np.where(left[tet_faces] == np.arange(n_tets)[:, None], right[tet_faces], left[tet_faces])

    tag = np.zeros(n_faces, dtype=int)
    if boundary_faces is not None:
        lookup = {}
        boundary_set = {tuple(k) for k in key[left_slot[right < 0]].tolist()} if np.any(right < 0) else set()
        for rec in boundary_faces:
            tri_key = tuple(sorted(int(v) for v in rec[:3]))
            lookup[tri_key] = int(rec[3])
        face_keys = np.sort(face_nodes, axis=1)
        for j in np.flatnonzero(right < 0):
            t = lookup.pop(tuple(face_keys[j].tolist()), None)
            if t is not None:
                tag[j] = t
        if lookup:
            tri_key = next(iter(lookup))
            raise TopologyError(f"boundary face record {tri_key} does not match a boundary face")
        del boundary_set

    mesh = PrimalMesh(
        nodes=nodes,
        tets=tets,
        volumes=vol,
        barycenters=bary,
        face_nodes=face_nodes,
        face_nodes_right=face_nodes.copy(),
        face_left=left,
        face_right=right,
        face_normal=normal,
        face_area=area,
        face_tag=tag,
        face_shift=np.zeros((n_faces, 3)),
        tet_faces=tet_faces,
        neighbor=neighbor,
    )
    _check_closed_surfaces(mesh)
    return mesh


def _check_closed_surfaces(mesh, rtol=1e-12):
    """Area-weighted outward normals of every tet must sum to zero."""
    sign = np.where(
        mesh.face_left[mesh.tet_faces] == np.arange(mesh.n_tets)[:, None], 1.0, -1.0
    )
    vec = np.einsum(
        "eq,eq,eqd->ed", sign, mesh.face_area[mesh.tet_faces], mesh.face_normal[mesh.tet_faces]
    )
    scale = np.sum(mesh.face_area[mesh.tet_faces], axis=1)
    worst = np.max(np.linalg.norm(vec, axis=1) / scale)
    if worst > rtol:
        raise GeometryError(f"tet surface normals do not close (residual {worst:.3e})")


def pair_periodic_faces(mesh: PrimalMesh, directions, tolerance=None) -> PrimalMesh:
    """Merge translation-matched boundary faces into interior faces.

    ``directions`` lists axes ("x", "y", "z") in which the boundary is
    identified periodically.  Matching is by translated face centroid within
    ``tolerance`` (default 1e-8 of the domain diagonal).
    """
    axes = sorted({_AXES[d] if isinstance(d, str) else int(d) for d in directions})
    lo = mesh.nodes.min(axis=0)
    hi = mesh.nodes.max(axis=0)
    if tolerance is None:
        tolerance = 1e-8 * float(np.linalg.norm(hi - lo))

    centroids = mesh.nodes[mesh.face_nodes].mean(axis=1)
    bnd = mesh.boundary_faces.tolist()
    merged = {}  # face kept -> (partner face, shift right->left)
    drop = set()

    for ax in axes:
        span = hi[ax] - lo[ax]
        low_side = [j for j in bnd if j not in drop and j not in merged
                    and abs(centroids[j, ax] - lo[ax]) <= tolerance]
        high_side = [j for j in bnd if j not in drop and j not in merged
                     and abs(centroids[j, ax] - hi[ax]) <= tolerance]
        if len(low_side) != len(high_side):
            raise PairingError(
                f"axis {ax}: {len(low_side)} faces on the low side, {len(high_side)} on the high side"
            )
        used = set()
        for j in low_side:
            target = centroids[j].copy()
            target[ax] += span
            best, dist = -1, np.inf
            for k in high_side:
                if k in used:
                    continue
                d = np.linalg.norm(centroids[k] - target)
                if d < dist:
                    best, dist = k, d
            if best < 0 or dist > tolerance:
                raise PairingError(
                    f"no periodic partner for face {j} with centroid {centroids[j]} "
                    f"(translated target {target}, best mismatch {dist:.3e})"
                )
            used.add(best)
            # keep the copy adjacent to the smaller tet index as the left side
            ta, tb = int(mesh.face_left[j]), int(mesh.face_left[best])
            if ta <= tb:
                merged[j] = (best, centroids[j] - centroids[best])
                drop.add(best)
            else:
                merged[best] = (j, centroids[best] - centroids[j])
                drop.add(j)

    keep = np.array([j for j in range(mesh.n_faces) if j not in drop], dtype=int)
    remap = -np.ones(mesh.n_faces, dtype=int)
    remap[keep] = np.arange(len(keep))
    for j, (partner, _) in merged.items():
        remap[partner] = remap[j]

    face_nodes = mesh.face_nodes[keep].copy()
    face_nodes_right = mesh.face_nodes_right[keep].copy()
    left = mesh.face_left[keep].copy()
    right = mesh.face_right[keep].copy()
    normal = mesh.face_normal[keep].copy()
    area = mesh.face_area[keep].copy()
    tag = mesh.face_tag[keep].copy()
    shift = mesh.face_shift[keep].copy()

    for j, (partner, sh) in merged.items():
        new = remap[j]
        right[new] = mesh.face_left[partner]
        shift[new] = sh
        tag[new] = 0
        # order the partner's nodes to match the kept copy under translation
        pn = mesh.face_nodes[partner]
        pcoords = mesh.nodes[pn] + sh
        kcoords = mesh.nodes[face_nodes[new]]
        perm = []
        for m in range(3):
            d = np.linalg.norm(pcoords - kcoords[m], axis=1)
            a = int(np.argmin(d))
            if d[a] > tolerance:
                raise PairingError(
                    f"periodic faces {j} and {partner} are not translation-conforming "
                    f"(node mismatch {d[a]:.3e})"
                )
            perm.append(a)
        if len(set(perm)) != 3:
            raise PairingError(f"ambiguous node matching between faces {j} and {partner}")
        face_nodes_right[new] = pn[perm]

    tet_faces = remap[mesh.tet_faces]
    neighbor = np.where(
        left[tet_faces] == np.arange(mesh.n_tets)[:, None], right[tet_faces], left[tet_faces]
    )

    return PrimalMesh(
        nodes=mesh.nodes,
        tets=mesh.tets,
        volumes=mesh.volumes,
        barycenters=mesh.barycenters,
        face_nodes=face_nodes,
        face_nodes_right=face_nodes_right,
        face_left=left,
        face_right=right,
        face_normal=normal,
        face_area=area,
        face_tag=tag,
        face_shift=shift,
        tet_faces=tet_faces,
        neighbor=neighbor,
    )


@dataclass
class DualMesh:
    """Per-face dual elements: pairs of sub-tetrahedra joined at the face.

    ``sub_left``/``sub_right`` hold the four vertex coordinates of each
    sub-tet in the face's left frame (periodic right sides are translated).
    Boundary faces have only the left sub-tet; their right volume is zero.
    """

    sub_left: np.ndarray = field(repr=False)
    sub_right: np.ndarray = field(repr=False)
    vol_left: np.ndarray = field(repr=False)
    vol_right: np.ndarray = field(repr=False)
    volume: np.ndarray = field(repr=False)
    center: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)
    is_interior: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.volume)


def _subtet_volume(verts):
    a = verts[:, 1] - verts[:, 0]
    b = verts[:, 2] - verts[:, 0]
    c = verts[:, 3] - verts[:, 0]
    return np.abs(np.einsum("ij,ij->i", a, np.cross(b, c))) / 6.0


def build_dual(mesh: PrimalMesh) -> DualMesh:
    """Construct the face-based dual elements of a primal mesh."""
    fn = mesh.nodes[mesh.face_nodes]  # (n_faces, 3, 3)
    interior = mesh.face_right >= 0

    sub_left = np.concatenate([fn, mesh.barycenters[mesh.face_left][:, None, :]], axis=1)
    bary_r = np.where(
        interior[:, None],
        mesh.barycenters[np.maximum(mesh.face_right, 0)] + mesh.face_shift,
        mesh.barycenters[mesh.face_left],
    )
    sub_right = np.concatenate([fn, bary_r[:, None, :]], axis=1)

    vol_left = _subtet_volume(sub_left)
    vol_right = np.where(interior, _subtet_volume(sub_right), 0.0)
    volume = vol_left + vol_right

    cen_left = sub_left.mean(axis=1)
    cen_right = sub_right.mean(axis=1)
    center = (vol_left[:, None] * cen_left + vol_right[:, None] * cen_right) / volume[:, None]

    verts = np.concatenate([sub_left, sub_right[:, 3:4, :]], axis=1)  # 5 distinct points
    diff = verts[:, :, None, :] - verts[:, None, :, :]
    h = np.sqrt(np.max(np.einsum("fabd,fabd->fab", diff, diff), axis=(1, 2)))

    min_vol = np.where(interior, np.minimum(vol_left, vol_right), vol_left)
    bad = min_vol < 1e-14 * h**3
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        raise GeometryError(
            f"degenerate dual sub-tetrahedron at face {j} (volume {min_vol[j]:.3e})"
        )

    return DualMesh(
        sub_left=sub_left,
        sub_right=sub_right,
        vol_left=vol_left,
        vol_right=vol_right,
        volume=volume,
        center=center,
        h=h,
        is_interior=interior,
    )


def cube_mesh(n: int, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> PrimalMesh:
    """Structured n x n x n x 6 tetrahedral mesh of a box.

    Every cell is split into six tets sharing the cell diagonal, so adjacent
    cells conform.  Boundary faces are tagged 1..6 for the sides
    x-, x+, y-, y+, z-, z+.
    """
    if n < 1:
        raise ValueError("cube mesh needs n >= 1")
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    ticks = [np.linspace(lo[d], hi[d], n + 1) for d in range(3)]
    X, Y, Z = np.meshgrid(*ticks, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return (i * (n + 1) + j) * (n + 1) + k

    corner_paths = [
        ((1, 0, 0), (1, 1, 0)), ((1, 0, 0), (1, 0, 1)),
        ((0, 1, 0), (1, 1, 0)), ((0, 1, 0), (0, 1, 1)),
        ((0, 0, 1), (1, 0, 1)), ((0, 0, 1), (0, 1, 1)),
    ]
    tets = []
    for i in range(n):
        for j in range(n):
            for k in range(n):
                base = (i, j, k)
                full = (i + 1, j + 1, k + 1)
                for p1, p2 in corner_paths:
                    quad = [
                        base,
                        (i + p1[0], j + p1[1], k + p1[2]),
                        (i + p2[0], j + p2[1], k + p2[2]),
                        full,
                    ]
                    tets.append([nid(*q) for q in quad])
    mesh = build_connectivity(nodes, np.array(tets, dtype=int))

    centroids = mesh.nodes[mesh.face_nodes].mean(axis=1)
    tol = 1e-10 * float(np.linalg.norm(hi - lo))
    tag = mesh.face_tag
    for j in mesh.boundary_faces:
        c = centroids[j]
        for d in range(3):
            if abs(c[d] - lo[d]) <= tol:
                tag[j] = 2 * d + 1
            elif abs(c[d] - hi[d]) <= tol:
                tag[j] = 2 * d + 2
    return mesh
