"""Hypothesis strategies for matrices used across the test modules."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from projmech.verification import random_jacobian, random_spd

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@st.composite
def spd_and_jacobian(draw, max_n=8):
    """``(M, A)`` with ``A`` possibly rank deficient or empty."""
    n = draw(st.integers(2, max_n))
    rng = np.random.default_rng(draw(seeds))
    M = random_spd(rng, n)
    m = draw(st.integers(0, n + 2))
    rank = draw(st.integers(0, min(m, n)))
    A = random_jacobian(rng, n, m, rank)
    return M, A
