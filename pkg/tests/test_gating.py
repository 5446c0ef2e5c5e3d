import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conformal_sympow.gating import (
    alibi_gamma,
    beta_values,
    constant_track,
    cumulate,
    gate_values,
    log_gate_values,
)


def rows_with_logit(target, d=3):
    # X_i with w.X_i == target for w = e_0
    X = np.zeros((1, d))
    X[0, 0] = target
    return X, np.eye(d)[0]


def test_gate_values_examples(nprng):
    X = nprng.standard_normal((5, 4))
    assert np.all(gate_values(X, np.zeros(4)) == 0.5)
    X1, w = rows_with_logit(20.0)
    assert gate_values(X1, w)[0] > 1 - 1e-8
    g = gate_values(10 * X, nprng.standard_normal(4))
    assert np.all((g > 0) & (g < 1))


def test_beta_values_examples(nprng):
    X = nprng.standard_normal((5, 4))
    assert np.all(beta_values(X, np.zeros(4)) == 1.0)
    X1, w = rows_with_logit(-20.0)
    assert beta_values(X1, w)[0] < 1e-8
    X1, w = rows_with_logit(20.0)
    assert beta_values(X1, w)[0] > 2 - 1e-8


def test_shape_mismatch():
    with pytest.raises(ValueError):
        gate_values(np.ones((3, 4)), np.ones(5))
    with pytest.raises(ValueError):
        beta_values(np.ones((3, 4)), np.ones(3))


def test_log_gate_values_matches_log_of_gate(nprng):
    X = nprng.standard_normal((20, 4))
    w = nprng.standard_normal(4)
    np.testing.assert_allclose(log_gate_values(X, w), np.log(gate_values(X, w)), rtol=1e-13)
    # deep in the tail log(sigmoid) stays finite
    X1, w1 = rows_with_logit(-800.0)
    assert log_gate_values(X1, w1)[0] == pytest.approx(-800.0)


def test_cumulate_examples():
    tr = constant_track(6, gamma=0.5)
    assert tr.b[4, 1] == pytest.approx(0.125, rel=1e-14)
    assert np.all(np.diag(tr.b) == 1) and np.all(np.diag(tr.c) == 0)
    tr = constant_track(6, beta=1.0)
    i, j = np.tril_indices(6)
    assert np.array_equal(tr.c[i, j], (i - j).astype(float))
    # upper triangle is masked out
    assert tr.b[1, 4] == 0.0


def test_cumulate_errors():
    with pytest.raises(ValueError):
        cumulate(np.array([0.5, 0.0]), np.ones(2))
    with pytest.raises(ValueError):
        cumulate(np.ones(3), np.ones(2))


def test_alibi_gamma():
    assert alibi_gamma(math.log(2)) == pytest.approx(0.5, rel=1e-15)
    assert alibi_gamma(1e-12) == pytest.approx(1.0)
    for m in (0.0, -1.0):
        with pytest.raises(ValueError):
            alibi_gamma(m)


def test_alibi_identity(nprng):
    for m in (0.1, math.log(2), 1.0):
        g = alibi_gamma(m)
        for _ in range(50):
            q, k = nprng.standard_normal((2, 4))
            i, j = sorted(nprng.integers(0, 100, 2))[::-1]
            lhs = math.exp(q @ k + m * (j - i))
            rhs = g ** (i - j) * math.exp(q @ k)
            assert abs(lhs - rhs) <= 1e-12 * abs(lhs)


gates = st.integers(2, 30).flatmap(
    lambda t: st.tuples(
        arrays(np.float64, t, elements=st.floats(1e-3, 1.0)),
        arrays(np.float64, t, elements=st.floats(0.0, 2.0)),
    )
)


@settings(max_examples=100, deadline=None)
@given(gates, st.data())
def test_factorization_and_additivity(gb, data):
    gamma, beta = gb
    t = len(gamma)
    tr = cumulate(gamma, beta)
    j = data.draw(st.integers(0, t - 1))
    k = data.draw(st.integers(j, t - 1))
    i = data.draw(st.integers(k, t - 1))
    lhs = tr.log_b[i, j]
    rhs = tr.log_b[i, k] + tr.log_b[k, j]
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))
    assert abs(tr.c[i, j] - (tr.c[i, k] + tr.c[k, j])) <= 1e-12 * max(1.0, abs(tr.c[i, j]))
    # direct product oracle
    assert tr.b[i, j] == pytest.approx(np.prod(gamma[j + 1 : i + 1]), rel=1e-12)
    assert tr.c[i, j] == pytest.approx(np.sum(beta[j + 1 : i + 1]), rel=1e-12, abs=1e-12)
