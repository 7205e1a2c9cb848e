import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from varpose.liegroup import Pose, exp_so3

settings.register_profile(
    "varpose", deadline=None, max_examples=60, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("varpose")

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
vec6 = arrays(np.float64, 6, elements=finite)
small_vec3 = arrays(np.float64, 3, elements=st.floats(-1.0, 1.0, allow_nan=False))


@st.composite
def rotvecs(draw, max_angle=math.pi - 1e-3):
    """Rotation vectors with norm strictly below ``max_angle``."""
    axis = draw(arrays(np.float64, 3, elements=st.floats(-1.0, 1.0, allow_nan=False)))
    n = np.linalg.norm(axis)
    if n < 1e-3:
        axis, n = np.array([0.0, 0.0, 1.0]), 1.0
    angle = draw(st.floats(0.0, max_angle, allow_nan=False))
    return axis / n * angle


@st.composite
def poses(draw):
    return Pose(exp_so3(draw(rotvecs())), draw(vec3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    axis = rng.normal(size=3)
    return exp_so3(rng.uniform(0.0, math.pi) * axis / np.linalg.norm(axis))


def random_pose(rng, scale=3.0):
    return Pose(random_rotation(rng), rng.normal(scale=scale, size=3))
