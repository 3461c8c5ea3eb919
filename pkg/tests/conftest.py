import numpy as np
import pytest

from gkdv import mesh


def make_ops(a, b, num_cells, degree):
    return mesh.assemble_operators(mesh.build_mesh(a, b, num_cells, degree))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def p1_ops():
    return make_ops(0.0, 2.0, 4, 1)
