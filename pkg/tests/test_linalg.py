import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from idg import linalg


def low_rank(seed, m, n, r):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((m, r)) @ rng.standard_normal((r, n))


shapes = st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31 - 1))


@settings(max_examples=200, deadline=None)
@given(shapes, st.data())
def test_moore_penrose_axioms(shape, data):
    m, n, seed = shape
    r = data.draw(st.integers(1, min(m, n)))
    A = low_rank(seed, m, n, r)
    P = linalg.pinv(A)
    nA, nP = np.linalg.norm(A), np.linalg.norm(P)
    assert np.linalg.norm(A @ P @ A - A) <= 1e-9 * nA
    assert np.linalg.norm(P @ A @ P - P) <= 1e-9 * nP
    assert np.linalg.norm((A @ P).T - A @ P) <= 1e-9 * max(1.0, nA * nP)
    assert np.linalg.norm((P @ A).T - P @ A) <= 1e-9 * max(1.0, nA * nP)


@settings(max_examples=100, deadline=None)
@given(shapes, st.data())
def test_rank_nullity(shape, data):
    m, n, seed = shape
    r = data.draw(st.integers(1, min(m, n)))
    A = low_rank(seed, m, n, r)
    N = linalg.nullspace(A)
    assert linalg.numerical_rank(A) == r
    assert N.shape == (n, n - r)
    np.testing.assert_allclose(N.T @ N, np.eye(n - r), atol=1e-10)
    assert np.linalg.norm(A @ N) <= 1e-9 * max(1.0, np.linalg.norm(A))


# exact zeros or moderate magnitudes: squaring tiny entries in M^T M would underflow
entries = st.floats(-10, 10).filter(lambda v: v == 0 or abs(v) > 1e-6)


@settings(max_examples=100, deadline=None)
@given(arrays(float, (6, 3), elements=entries), arrays(float, 6, elements=entries))
def test_min_norm_solution_routes_agree(M, z):
    if linalg.numerical_rank(M) == 0:
        return
    # well-conditioned inputs only: the normal-equation route squares the condition number
    s = np.linalg.svd(M, compute_uv=False)
    s = s[s > 1e-8 * s[0]]
    if s[0] / s[-1] > 1e3:
        return
    a = linalg.lstsq_min_norm(M, z)
    b = linalg.normal_equation_solve(M, z)
    np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-6 * max(1.0, np.linalg.norm(a)))
    # minimum norm: no component in the null space
    N = linalg.nullspace(M)
    assert np.linalg.norm(N.T @ a) <= 1e-8 * max(1.0, np.linalg.norm(a))


def test_known_nullspace():
    M = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    N = linalg.nullspace(M)
    np.testing.assert_allclose(N[:, 0], np.array([1.0, -1.0, 0.0]) / np.sqrt(2))  # sign: largest entry positive


def test_full_rank_has_empty_nullspace():
    assert linalg.nullspace(np.eye(3)).shape == (3, 0)


def test_pinv_of_zero():
    np.testing.assert_array_equal(linalg.pinv(np.zeros((2, 3))), np.zeros((3, 2)))


def test_tall_matrix_uses_thin_factors():
    fac = linalg.factorize(np.ones((1000, 3)))
    assert fac.U.shape == (1000, 3)
    assert fac.rank == 1
    assert fac.null_basis.shape == (3, 2)


@pytest.mark.parametrize("bad", [np.zeros((0, 2)), np.zeros((2, 0))])
def test_empty_rejected(bad):
    with pytest.raises(ValueError):
        linalg.factorize(bad)


def test_rtol_positive_and_rows_match():
    with pytest.raises(ValueError):
        linalg.factorize(np.eye(2), rtol=0)
    with pytest.raises(ValueError):
        linalg.lstsq_min_norm(np.eye(2), np.ones(3))


def test_cutoff_is_relative():
    A = np.diag([1.0, 1e-9])
    assert linalg.numerical_rank(A, 1e-8) == 1
    assert linalg.numerical_rank(1e6 * A, 1e-8) == 1
    assert linalg.numerical_rank(A, 1e-10) == 2
