import numpy as np
import pytest

from doatrack.steering import ArrayGeometry


@pytest.fixture
def square_array() -> ArrayGeometry:
    """4-microphone planar square, 10 cm side, centered at the origin."""
    return ArrayGeometry(mic_positions=np.array([
        [0.05, 0.05, 0.0],
        [-0.05, 0.05, 0.0],
        [-0.05, -0.05, 0.0],
        [0.05, -0.05, 0.0],
    ]))


@pytest.fixture
def pair_array() -> ArrayGeometry:
    """Two microphones 10 cm apart on the x axis."""
    return ArrayGeometry(mic_positions=np.array([
        [0.0, 0.0, 0.0],
        [0.1, 0.0, 0.0],
    ]))
