import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgdlab.errors import DimensionMismatch, NonFinite
from sgdlab.linalg import alignment, alignment_vectors, operator_norm, row_basis, row_space_projector, svd


def matrices(rows=st.integers(1, 5), cols=st.integers(1, 8)):
    return st.tuples(rows, cols).flatmap(
        lambda s: arrays(np.float64, s, elements=st.floats(-1e3, 1e3, allow_nan=False, width=64))
    )


def test_svd_identity_and_diag():
    assert np.allclose(svd(np.eye(3)).singular_values, [1, 1, 1])
    assert np.allclose(svd(np.diag([3.0, 0.0])).singular_values, [3, 0])


def test_svd_reconstruction_seed7():
    A = np.random.default_rng(7).standard_normal((4, 6))
    r = svd(A)
    assert np.linalg.norm(A - r.reconstruct()) <= 1e-8 * np.linalg.norm(A)
    assert np.linalg.norm(r.left.T @ r.left - np.eye(4)) <= 1e-8
    assert np.linalg.norm(r.right.T @ r.right - np.eye(4)) <= 1e-8


@settings(max_examples=60, deadline=None)
@given(matrices())
def test_svd_invariants(A):
    r = svd(A)
    s = r.singular_values
    assert np.all(np.diff(s) <= 1e-12 * max(1.0, s[0]))
    assert np.all(s >= 0)
    assert np.linalg.norm(A - r.reconstruct()) <= 1e-8 * max(np.linalg.norm(A), 1e-300)
    k = s.size
    assert np.linalg.norm(r.left.T @ r.left - np.eye(k)) <= 1e-8
    assert np.linalg.norm(r.right.T @ r.right - np.eye(k)) <= 1e-8


def test_svd_deterministic():
    A = np.random.default_rng(1).standard_normal((5, 7))
    a, b = svd(A), svd(A)
    assert np.array_equal(a.left, b.left) and np.array_equal(a.singular_values, b.singular_values)


def test_svd_rejects_nonfinite():
    with pytest.raises(NonFinite):
        svd(np.array([[1.0, np.nan]]))
    with pytest.raises(NonFinite):
        operator_norm(np.array([[np.inf]]))


def test_projector_examples():
    assert np.allclose(row_space_projector(np.array([[1.0, 0, 0]])), np.diag([1.0, 0, 0]))
    assert np.array_equal(row_space_projector(np.zeros((2, 3))), np.zeros((3, 3)))
    A = np.random.default_rng(3).standard_normal((2, 5))
    P = row_space_projector(A)
    assert abs(np.trace(P) - 2) < 1e-10
    assert np.abs(P @ P - P).max() < 1e-10


@settings(max_examples=60, deadline=None)
@given(matrices())
def test_projector_identities(A):
    P = row_space_projector(A)
    assert np.abs(P - P.T).max() == 0.0
    assert np.abs(P @ P - P).max() <= 1e-10
    assert np.linalg.norm(P @ A.T - A.T) <= 1e-8 * max(np.linalg.norm(A), 1e-300)
    s = np.linalg.svd(A, compute_uv=False)
    rank = 0 if s[0] == 0 else int(np.sum(s > 1e-10 * s[0]))
    assert round(np.trace(P)) == rank


def test_projector_rank_tol_must_be_positive():
    with pytest.raises(ValueError):
        row_basis(np.eye(2), rank_tol=0.0)


def test_alignment_examples():
    e = np.eye(3)
    assert alignment(e[[0]], e[[1]]) == 0.0
    W = np.random.default_rng(0).standard_normal((2, 8))
    assert abs(alignment(W, W) - 1.0) < 1e-12
    g = np.random.default_rng(11)
    W, U = g.standard_normal((3, 40)), g.standard_normal((2, 40))
    # oracle: full d x d projector product
    ref = np.linalg.svd(row_space_projector(W) @ row_space_projector(U), compute_uv=False)[0]
    assert abs(alignment(W, U) - ref) <= 1e-8


def test_alignment_errors_and_zero():
    with pytest.raises(DimensionMismatch):
        alignment(np.ones((1, 3)), np.ones((1, 4)))
    with pytest.raises(NonFinite):
        alignment(np.array([[np.nan, 1.0]]), np.ones((1, 2)))
    assert alignment(np.zeros((2, 4)), np.ones((1, 4))) == 0.0


def test_operator_norm_examples():
    assert operator_norm(np.diag([2.0, 5.0])) == pytest.approx(5.0)
    u = np.array([0.6, 0.8])
    v = np.array([1.0, 0.0, 0.0])
    assert operator_norm(np.outer(u, v)) == pytest.approx(1.0)
    A = np.random.default_rng(1).standard_normal((5, 5))
    assert abs(operator_norm(A) - svd(A).singular_values[0]) <= 1e-9


pair = st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(4, 9), st.integers(0, 2**32 - 1))


@settings(max_examples=60, deadline=None)
@given(pair, st.floats(0.01, 100.0))
def test_alignment_invariants(shape, c):
    m, p, d, seed = shape
    g = np.random.default_rng(seed)
    W, U = g.standard_normal((m, d)), g.standard_normal((p, d))
    r = alignment(W, U)
    assert 0.0 <= r <= 1.0
    assert abs(r - alignment(U, W)) <= 1e-10
    assert abs(alignment(W, W) - 1.0) <= 1e-10
    assert abs(alignment(c * W, U) - r) <= 1e-10
    assert abs(alignment(-c * W, U) - r) <= 1e-10
    Q, _ = np.linalg.qr(g.standard_normal((d, d)))
    assert abs(alignment(W @ Q, U @ Q) - r) <= 1e-8


def test_alignment_vectors_matches_general():
    g = np.random.default_rng(5)
    for _ in range(20):
        w, u = g.standard_normal(9), g.standard_normal(9)
        assert abs(alignment_vectors(w, u) - alignment(w, u)) < 1e-12
    assert alignment_vectors(np.zeros(3), np.ones(3)) == 0.0
