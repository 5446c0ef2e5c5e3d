import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conformal_sympow.numerics import RngStream, gauss, matmul, sigmoid, tanh_act


def triple_loop(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for r in range(k):
                s = s + a[i, r] * b[r, j]
            out[i, j] = s
    return out


def test_matmul_identity():
    assert matmul(np.eye(2), [[1, 2], [3, 4]]).tolist() == [[1, 2], [3, 4]]


def test_matmul_annihilation():
    assert matmul([[1, 0], [0, 0]], [[0], [5]]).tolist() == [[0], [0]]


def test_matmul_bitwise_matches_triple_loop(nprng):
    for _ in range(20):
        a, b = nprng.standard_normal((3, 3)), nprng.standard_normal((3, 3))
        assert np.array_equal(matmul(a, b), triple_loop(a, b))
    a, b = nprng.standard_normal((5, 7)), nprng.standard_normal((7, 4))
    assert np.array_equal(matmul(a, b), triple_loop(a, b))


def test_matmul_dimension_mismatch():
    with pytest.raises(ValueError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_associative(nprng):
    for _ in range(20):
        a, b, c = (nprng.standard_normal((4, 4)) for _ in range(3))
        lhs, rhs = matmul(matmul(a, b), c), matmul(a, matmul(b, c))
        assert np.max(np.abs(lhs - rhs)) <= 1e-10 * max(1.0, np.max(np.abs(lhs)))


def test_sigmoid_values():
    assert sigmoid(0.0) == 0.5
    assert tanh_act(0.0) == 0.0
    # exp(-100) / (1 + exp(-100)) ~ 3.7e-44
    v = sigmoid(-100.0)
    assert 0.0 < v < 1e-40
    assert sigmoid(100.0) == 1.0 or sigmoid(100.0) < 1.0


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_sigmoid_monotone_and_bounded(x, y):
    sx, sy = sigmoid(x), sigmoid(y)
    assert 0.0 <= sx <= 1.0
    if x < y:
        assert sx <= sy
    assert -1.0 <= tanh_act(x) <= 1.0


def test_gauss_deterministic():
    a = gauss(RngStream(7, 3), (4, 5))
    b = gauss(RngStream(7, 3), (4, 5))
    c = gauss(RngStream(7, 4), (4, 5))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_gauss_moments():
    x = gauss(RngStream(11), 100_000)
    # standard error of the mean is ~0.003; of the variance ~0.0045
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.05
