import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conformal_sympow.sympow import build_basis, embed, embed_dim, embed_jacobian, kernel

R2 = math.sqrt(2)


def brute_dim(d, p):
    # count non-decreasing index tuples by enumeration
    import itertools

    return sum(1 for _ in itertools.combinations_with_replacement(range(d), p))


@pytest.mark.parametrize("d,p,expected", [(1, 4, 1), (2, 2, 3), (64, 2, 2080)])
def test_embed_dim_examples(d, p, expected):
    assert embed_dim(d, p) == expected


@pytest.mark.parametrize("d,p", [(3, 3), (5, 2), (4, 4), (7, 1)])
def test_embed_dim_matches_enumeration(d, p):
    assert embed_dim(d, p) == brute_dim(d, p)


def test_embed_dim_overflow_and_invalid():
    with pytest.raises(OverflowError):
        embed_dim(10**6, 10)
    with pytest.raises(ValueError):
        embed_dim(0, 2)
    with pytest.raises(ValueError):
        embed_dim(2, 0)


def test_basis_d2_p2():
    b = build_basis(2, 2)
    assert b.entries.tolist() == [[0, 0], [0, 1], [1, 1]]
    np.testing.assert_allclose(b.coeffs, [1, R2, 1], rtol=0, atol=1e-15)


def test_basis_p1_is_identity():
    b = build_basis(3, 1)
    assert b.entries.ravel().tolist() == [0, 1, 2]
    assert b.coeffs.tolist() == [1, 1, 1]
    v = np.array([0.3, -2.0, 5.0])
    assert np.array_equal(embed(v, b), v)
    assert np.array_equal(embed_jacobian(v, b), np.eye(3))


def test_basis_d2_p4():
    b = build_basis(2, 4)
    assert b.D == 5
    np.testing.assert_allclose(b.coeffs, [1, 2, math.sqrt(6), 2, 1], atol=1e-15)


def test_embed_examples():
    b = build_basis(2, 2)
    assert embed([1, 0], b).tolist() == [1, 0, 0]
    e = embed([1, 1], b)
    np.testing.assert_allclose(e, [1, R2, 1], atol=1e-15)
    assert abs(e @ e - 4) < 1e-12


def test_embed_length_mismatch():
    with pytest.raises(ValueError):
        embed([1.0, 2.0, 3.0], build_basis(2, 2))
    with pytest.raises(ValueError):
        embed_jacobian([1.0], build_basis(2, 2))


def test_embed_random_d8_p4(nprng):
    b = build_basis(8, 4)
    for _ in range(100):
        v, w = nprng.standard_normal((2, 8))
        ref = kernel(v, w, 4)
        assert abs(embed(v, b) @ embed(w, b) - ref) <= 1e-10 * max(1, abs(ref))


def test_jacobian_hand_example():
    J = embed_jacobian([1.0, 0.0], build_basis(2, 2))
    np.testing.assert_allclose(J, [[2, 0], [0, R2], [0, 0]], atol=1e-15)


def test_jacobian_finite_difference(nprng):
    b = build_basis(4, 2)
    h = 1e-5
    for _ in range(10):
        v = nprng.standard_normal(4)
        fd = np.stack([(embed(v + h * e, b) - embed(v - h * e, b)) / (2 * h) for e in np.eye(4)], axis=1)
        assert np.max(np.abs(embed_jacobian(v, b) - fd)) <= 1e-6


def test_multinomials_sum_to_power_of_d():
    # sum of multinomial coefficients over all multisets is d^p
    for d, p in [(3, 2), (4, 3), (2, 5)]:
        assert build_basis(d, p).multinomials().sum() == d**p


vecs = st.integers(1, 6).flatmap(
    lambda d: st.tuples(
        arrays(np.float64, d, elements=st.floats(-3, 3)),
        arrays(np.float64, d, elements=st.floats(-3, 3)),
    )
)


@settings(max_examples=200, deadline=None)
@given(vecs, st.sampled_from([1, 2, 3, 4]))
def test_kernel_property(vw, p):
    v, w = vw
    b = build_basis(len(v), p)
    ref = kernel(v, w, p)
    assert embed(v, b).shape == (embed_dim(len(v), p),)
    assert abs(embed(v, b) @ embed(w, b) - ref) <= 1e-10 * max(1, abs(ref))


@settings(max_examples=200, deadline=None)
@given(vecs, st.sampled_from([2, 4]))
def test_even_power_positivity(vw, p):
    v, w = vw
    b = build_basis(len(v), p)
    assert embed(v, b) @ embed(w, b) >= -1e-12


@settings(max_examples=100, deadline=None)
@given(vecs, st.floats(-4, 4), st.sampled_from([1, 2, 3, 4]))
def test_homogeneity(vw, c, p):
    v = vw[0]
    b = build_basis(len(v), p)
    lhs, rhs = embed(c * v, b), c**p * embed(v, b)
    assert np.max(np.abs(lhs - rhs), initial=0) <= 1e-12 * max(1, np.max(np.abs(rhs), initial=0))
