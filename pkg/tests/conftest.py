import numpy as np
import pytest

from shapemetric.mesh import TriMesh
from shapemetric.spectral import cotan_laplacian, eigendecompose
from shapemetric.synth import icosphere


@pytest.fixture(scope="session")
def tetrahedron():
    """Regular tetrahedron with edge length 1."""
    verts = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float
    ) / np.sqrt(8.0)
    faces = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(verts, faces, name="tetra")


@pytest.fixture(scope="session")
def unit_icosphere():
    return icosphere(subdivisions=3, radius=1.0)


@pytest.fixture(scope="session")
def unit_icosphere_spectrum(unit_icosphere):
    return eigendecompose(cotan_laplacian(unit_icosphere), k=10)


@pytest.fixture(scope="session")
def small_sphere_spectrum():
    """Coarser sphere with a deeper spectrum, for descriptor tests."""
    mesh = icosphere(subdivisions=2, radius=1.0)
    return eigendecompose(cotan_laplacian(mesh), k=40)
