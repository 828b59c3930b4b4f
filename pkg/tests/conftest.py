import numpy as np
import pytest
from hypothesis import settings

from cellflux.geometry import Circle, Mesh, build_full_mesh, extract_annulus

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def coarse_full():
    return build_full_mesh(5.0, Circle((0.0, 0.0), 1.0), 64, 0.3)


@pytest.fixture(scope="session")
def coarse_annulus(coarse_full):
    return extract_annulus(coarse_full)


def _plain_mesh(nodes, triangles):
    nodes = np.asarray(nodes, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    return Mesh(nodes, triangles, np.empty((0, 2), np.int64), np.empty(0, np.int64),
                np.empty(0, np.int64), Circle((0.5, 0.5), 0.1), 1.0,
                np.zeros(len(triangles), np.int64), np.arange(len(nodes)))


@pytest.fixture
def unit_triangle():
    return _plain_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])


@pytest.fixture
def unit_square():
    return _plain_mesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
