import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ccn.bumps import BumpError, build_bump_basis, c1_bound, profile


def circle(m=400, turns=0.8):
    s = np.linspace(0.0, 2 * np.pi * turns, m)
    return np.column_stack([np.cos(s), np.sin(s), 0.3 * s])


def test_profile():
    assert profile(np.array([0.0, 0.25, 1.0, 4.0])).tolist() == [1.0, 0.5625, 0.0, 0.0]


def test_c1_bound():
    assert c1_bound(1.0, 1) == pytest.approx(1 + 8 / (3 * math.sqrt(3)))


def test_basis_shape_and_geometry():
    b = build_bump_basis(circle(), 6)
    assert b.n == 6 and b.dim == 3
    assert b.disjoint() and b.inside_ball()
    assert np.all(np.diff(b.params) < 0)  # centers approach t* geometrically
    np.testing.assert_allclose(b.c1_norms(), 1.0)


def test_errors():
    with pytest.raises(BumpError):
        build_bump_basis(circle(), 0)
    with pytest.raises(BumpError):
        build_bump_basis(np.zeros((1, 2)), 2)
    with pytest.raises(BumpError):
        build_bump_basis(circle(), 3, normalization="l2")
    with pytest.raises(BumpError):
        build_bump_basis(np.zeros((10, 2)), 3)


def test_seeded_t_star_is_reproducible():
    a = build_bump_basis(circle(), 4, seed=3)
    b = build_bump_basis(circle(), 4, seed=3)
    assert np.array_equal(a.centers, b.centers)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.floats(0.2, 1.5), st.integers(0, 2**31))
def test_bumps_are_disjoint(n, turns, seed):
    b = build_bump_basis(circle(turns=turns), n, seed=seed)
    assert b.disjoint()
    # at most one bump is nonzero anywhere
    p = np.random.default_rng(seed).normal(size=(200, 3))
    assert np.all(np.count_nonzero(b.values(np.vstack([p, b.centers])), axis=1) <= 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_sup_identity(n, seed):
    b = build_bump_basis(circle(), n, normalization="sup")
    z = np.random.default_rng(seed).uniform(-2, 2, size=n)
    # the sup of each bump is attained at its center and the supports are disjoint
    vals = [b.combine(z, c) for c in b.centers]
    assert max(abs(v) for v in vals) == pytest.approx(np.max(np.abs(z)), rel=1e-15)
    grid = np.random.default_rng(seed).normal(size=(500, 3))
    assert np.max(np.abs(b.combine(z, grid))) <= np.max(np.abs(z)) * (1 + 1e-15)
