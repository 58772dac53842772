import numpy as np
import pytest

from chdg.mesh import BoundaryKind, RawMesh, build_box_mesh, build_connectivity, two_tet_raw_mesh
from chdg.reference import FACE_VERTICES, TET_VERTICES

ACCEPTANCE_LINES = []


def random_tet(rng, min_quality=0.15):
    """Vertices of a random, reasonably shaped tetrahedron (any orientation)."""
    while True:
        v = rng.uniform(-1.0, 1.0, (4, 3)) * rng.uniform(0.2, 2.0)
        edges = [np.linalg.norm(v[i] - v[j]) for i in range(4) for j in range(i + 1, 4)]
        vol = abs(np.linalg.det(v[1:] - v[0])) / 6.0
        if vol / max(edges) ** 3 > min_quality * np.sqrt(2) / 12:
            return v


def single_tet_raw(vertices=TET_VERTICES, tag=1):
    tris = np.array([[0, 1, 2, 3][i] for fv in FACE_VERTICES for i in fv]).reshape(4, 3)
    return RawMesh(np.asarray(vertices, dtype=float), np.array([[0, 1, 2, 3]]), tris,
                   np.full(4, tag), {tag: "boundary"})


@pytest.fixture
def rng():
    return np.random.default_rng(20241015)


@pytest.fixture(scope="session")
def two_tet():
    return build_connectivity(two_tet_raw_mesh(), {1: BoundaryKind.I})


@pytest.fixture(scope="session")
def box1():
    return build_connectivity(build_box_mesh(1))


@pytest.fixture(scope="session")
def box2_meshes():
    mixed = {"xmin": BoundaryKind.E, "xmax": BoundaryKind.H, "ymin": BoundaryKind.I,
             "ymax": BoundaryKind.E, "zmin": BoundaryKind.H, "zmax": BoundaryKind.I}
    return {
        "all-I": build_connectivity(build_box_mesh(2, tags=BoundaryKind.I)),
        "all-E": build_connectivity(build_box_mesh(2, tags=BoundaryKind.E)),
        "mixed": build_connectivity(build_box_mesh(2, tags=mixed)),
    }


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
