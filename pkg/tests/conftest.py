import numpy as np
import pytest

from stagdg.meshing import build_connectivity, build_dual, cube_mesh, pair_periodic_faces

REF_TET_NODES = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
])

TWO_TET_NODES = np.array([
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.9, 0.8, 0.9],
])
TWO_TET_CELLS = np.array([[0, 1, 2, 3], [1, 2, 3, 4]])


@pytest.fixture(scope="session")
def single_tet():
    return build_connectivity(REF_TET_NODES, np.array([[0, 1, 2, 3]]))


@pytest.fixture(scope="session")
def two_tets():
    return build_connectivity(TWO_TET_NODES, TWO_TET_CELLS)


@pytest.fixture(scope="session")
def cube6():
    return cube_mesh(1)


@pytest.fixture(scope="session")
def cube6_periodic():
    return pair_periodic_faces(cube_mesh(1), ("x", "y", "z"))


@pytest.fixture(scope="session")
def cube2_periodic():
    return pair_periodic_faces(cube_mesh(2), ("x", "y", "z"))


@pytest.fixture
def rng():
    return np.random.default_rng(20260809)
