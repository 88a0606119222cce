import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from src.core.grid import grid_locations
from src.core.rng import SeededRng
from src.core.sbnn import build_architecture, centroid_embedding

torch.set_default_dtype(torch.float64)


@pytest.fixture
def rng():
    return SeededRng(1234)


@pytest.fixture
def grid_4x4():
    return grid_locations([(-4.0, 4.0), (-4.0, 4.0)], (4, 4))


@pytest.fixture
def grid_8x8():
    return grid_locations([(-4.0, 4.0), (-4.0, 4.0)], (8, 8))


@pytest.fixture
def grid_1d():
    return grid_locations([(-4.0, 4.0)], (32,))


@pytest.fixture
def tiny_sbnn_il(grid_4x4):
    embedding = centroid_embedding(grid_4x4.bounds, (3, 3), tau=1.0)
    return build_architecture("SBNN-IL", (3, 3), spatial_dim=2, embedding=embedding)


@pytest.fixture
def tiny_bnn_ip():
    return build_architecture("BNN-IP", (3, 3), spatial_dim=2)


@pytest.fixture
def full_scale_embedding():
    return centroid_embedding([(-4.0, 4.0), (-4.0, 4.0)], (15, 15), tau=1.0)
