"""Shared pytest fixtures: meshes, weak spaces and seeded random generators."""
from pathlib import Path

import numpy as np
import pytest

from services.mesh import load_mesh_file, uniform_rectangles, uniform_triangles
from services.weak_deriv import WeakSpace

ROOT = Path(__file__).resolve().parent
FIXTURES = ROOT / "fixtures"
MESHES = FIXTURES / "meshes"


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def polygon_mesh():
    """Unit square split into two quadrilaterals and four pentagons."""
    return load_mesh_file(MESHES / "polygons6.wgmesh")


@pytest.fixture(scope="session")
def tri4():
    return uniform_triangles(4)


@pytest.fixture(scope="session")
def rect4():
    return uniform_rectangles(4)


@pytest.fixture(scope="session")
def tri4_space(tri4):
    return WeakSpace(tri4, 2)


@pytest.fixture(scope="session")
def element_shapes(polygon_mesh):
    """One local space per element shape: triangle, square and irregular pentagon (k = 2)."""
    return {
        "triangle": WeakSpace(uniform_triangles(1), 2).local_spaces[0],
        "square": WeakSpace(uniform_rectangles(1), 2).local_spaces[0],
        "pentagon": WeakSpace(polygon_mesh, 2).local_spaces[0],
    }
