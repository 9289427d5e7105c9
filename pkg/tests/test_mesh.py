import numpy as np
import pytest

from stagdg.meshing import (
    GeometryError,
    PairingError,
    TopologyError,
    build_connectivity,
    build_dual,
    cube_mesh,
    pair_periodic_faces,
    signed_volumes,
)

from conftest import REF_TET_NODES, TWO_TET_CELLS, TWO_TET_NODES


def test_single_tet_census(single_tet):
    m = single_tet
    assert m.n_tets == 1
    assert m.n_faces == 4
    assert len(m.boundary_faces) == 4
    assert len(m.interior_faces) == 0
    assert m.tet_faces.shape == (1, 4)
    assert sorted(m.tet_faces[0].tolist()) == [0, 1, 2, 3]
    assert np.all(m.neighbor == -1)


def test_two_tets_share_one_face(two_tets):
    m = two_tets
    assert m.n_tets == 2
    interior = m.interior_faces
    assert len(interior) == 1
    j = interior[0]
    assert m.face_left[j] == 0 and m.face_right[j] == 1
    # neighbor map points across the shared face
    q = np.where(m.tet_faces[0] == j)[0][0]
    assert m.neighbor[0, q] == 1
    q = np.where(m.tet_faces[1] == j)[0][0]
    assert m.neighbor[1, q] == 0


def test_cube_volume_and_normals():
    m = cube_mesh(1)
    assert m.n_tets == 6
    assert abs(m.volumes.sum() - 1.0) <= 1e-14
    # interior normals point from the left to the right barycenter
    for j in m.interior_faces:
        d = m.barycenters[m.face_right[j]] - m.barycenters[m.face_left[j]]
        assert m.face_normal[j] @ d > 0
    # unit normals
    assert np.abs(np.linalg.norm(m.face_normal, axis=1) - 1.0).max() <= 1e-14


def test_closed_surface_identity():
    m = cube_mesh(2)
    sign = np.where(m.face_left[m.tet_faces] == np.arange(m.n_tets)[:, None], 1.0, -1.0)
    vec = np.einsum("eq,eq,eqd->ed", sign, m.face_area[m.tet_faces],
                    m.face_normal[m.tet_faces])
    scale = m.face_area[m.tet_faces].sum(axis=1)
    assert (np.linalg.norm(vec, axis=1) / scale).max() <= 1e-12


def test_connectivity_idempotent():
    a = cube_mesh(2)
    b = build_connectivity(a.nodes, a.tets)
    assert np.array_equal(a.face_nodes, b.face_nodes)
    assert np.array_equal(a.face_left, b.face_left)
    assert np.array_equal(a.face_right, b.face_right)
    assert np.array_equal(a.tet_faces, b.tet_faces)


def test_node_reordering_fixes_negative_volume():
    tets = np.array([[0, 2, 1, 3]])  # negatively oriented reference tet
    m = build_connectivity(REF_TET_NODES, tets)
    assert m.volumes[0] > 0
    assert signed_volumes(m.nodes, m.tets)[0] > 0


def test_nonmanifold_face_rejected():
    nodes = np.vstack([TWO_TET_NODES, [[0.5, 0.5, -1.0]]])
    tets = np.vstack([TWO_TET_CELLS, [[1, 2, 3, 5]]])  # face (1,2,3) used thrice
    with pytest.raises(TopologyError):
        build_connectivity(nodes, tets)


def test_degenerate_tet_rejected():
    nodes = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])  # coplanar
    with pytest.raises(GeometryError):
        build_connectivity(nodes, np.array([[0, 1, 2, 3]]))


def test_duplicate_tets_rejected():
    with pytest.raises(TopologyError):
        build_connectivity(TWO_TET_NODES, np.array([[0, 1, 2, 3], [1, 0, 2, 3]]))


# ---------------------------------------------------------------------------
# dual mesh

def test_dual_subtet_volumes_quarter(two_tets):
    d = build_dual(two_tets)
    j = two_tets.interior_faces[0]
    vols = two_tets.volumes
    assert d.vol_left[j] == pytest.approx(vols[0] / 4.0, rel=1e-13)
    assert d.vol_right[j] == pytest.approx(vols[1] / 4.0, rel=1e-13)
    assert d.volume[j] == pytest.approx(d.vol_left[j] + d.vol_right[j], rel=1e-14)


def test_dual_boundary_single_subtet(single_tet):
    d = build_dual(single_tet)
    for j in single_tet.boundary_faces:
        assert d.vol_right[j] == 0.0
        assert d.volume[j] == pytest.approx(single_tet.volumes[0] / 4.0, rel=1e-13)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_dual_tiling(n):
    m = cube_mesh(n)
    d = build_dual(m)
    assert d.volume.sum() == pytest.approx(m.volumes.sum(), rel=1e-12)


def test_dual_center_inside_hull():
    m = cube_mesh(2)
    d = build_dual(m)
    for j in range(m.n_faces):
        verts = [d.sub_left[j]]
        if d.is_interior[j]:
            verts.append(d.sub_right[j])
        verts = np.unique(np.vstack(verts), axis=0)
        # center = convex combination of vertices -> solvable nonneg least squares
        lo = verts.min(axis=0) - 1e-12
        hi = verts.max(axis=0) + 1e-12
        assert np.all(d.center[j] >= lo) and np.all(d.center[j] <= hi)
    assert np.all(d.h > 0)


# ---------------------------------------------------------------------------
# periodic pairing

def test_periodic_pairing_full():
    m = pair_periodic_faces(cube_mesh(1), ("x", "y", "z"))
    assert len(m.boundary_faces) == 0
    d = build_dual(m)
    assert d.volume.sum() == pytest.approx(1.0, rel=1e-12)
    # orientation across a periodic face uses the translated barycenter
    for j in range(m.n_faces):
        br = m.barycenters[m.face_right[j]] + m.face_shift[j]
        assert m.face_normal[j] @ (br - m.barycenters[m.face_left[j]]) > 0


def test_periodic_pairing_single_axis():
    m = pair_periodic_faces(cube_mesh(2), ("x",))
    cen = m.nodes[m.face_nodes[m.boundary_faces]].mean(axis=1)
    assert len(m.boundary_faces) == 32  # y and z extremes remain
    assert np.all((np.abs(cen[:, 1]) < 1e-12) | (np.abs(cen[:, 1] - 1) < 1e-12)
                  | (np.abs(cen[:, 2]) < 1e-12) | (np.abs(cen[:, 2] - 1) < 1e-12))


def test_periodic_pairing_nonconforming_errors():
    # two tets do not tile a box, so opposite sides cannot match
    with pytest.raises(PairingError):
        pair_periodic_faces(build_connectivity(TWO_TET_NODES, TWO_TET_CELLS), ("x",))


def test_cube_boundary_tags():
    m = cube_mesh(2, lo=(-1, -1, -1), hi=(1, 1, 1))
    cen = m.nodes[m.face_nodes].mean(axis=1)
    for j in m.boundary_faces:
        tag = m.face_tag[j]
        axis, side = (tag - 1) // 2, (tag - 1) % 2
        assert cen[j, axis] == pytest.approx(-1.0 if side == 0 else 1.0, abs=1e-12)
