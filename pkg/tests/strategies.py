"""Shared hypothesis strategies."""
import numpy as np
from hypothesis import strategies as st

from canopynav.geometry import Pose, UnitQuaternion

finite = st.floats(-50.0, 50.0, allow_nan=False, allow_infinity=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


@st.composite
def unit_quats(draw):
    v = np.array(draw(st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 4)))
    n = np.linalg.norm(v)
    if n < 1e-3:
        v, n = np.array([1.0, 0, 0, 0]), 1.0
    return UnitQuaternion.from_array(v / n)


@st.composite
def poses(draw):
    return Pose(draw(unit_quats()), draw(vec3))
