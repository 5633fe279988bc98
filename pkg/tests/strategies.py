"""Shared hypothesis strategies."""

import numpy as np
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def matrices(rows, cols, elements=finite):
    return hnp.arrays(np.float64, (rows, cols), elements=elements)


@st.composite
def symmetric(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    a = draw(matrices(n, n))
    return 0.5 * (a + a.T)


@st.composite
def seeds(draw):
    return draw(st.integers(0, 2**32 - 1))
