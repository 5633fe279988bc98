import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrvae.errors import DimensionError, NumericalError
from mrvae.linalg import (
    RngStream,
    SpectrumDecomp,
    gaussian_sample,
    random_orthogonal,
    sample_covariance,
    svd,
    sym_eig,
)

from strategies import matrices, seeds, symmetric


def test_sym_eig_identity():
    e = sym_eig(np.eye(3))
    np.testing.assert_array_equal(e.eigvals, [1, 1, 1])
    np.testing.assert_array_equal(e.eigvecs, np.eye(3))


def test_sym_eig_diagonal():
    e = sym_eig(np.diag([4.0, 1.0]))
    np.testing.assert_array_equal(e.eigvals, [4, 1])
    np.testing.assert_array_equal(e.eigvecs, np.eye(2))


def test_sym_eig_sorts_diagonal_input():
    e = sym_eig(np.diag([1.0, 4.0]))
    np.testing.assert_array_equal(e.eigvals, [4, 1])
    np.testing.assert_array_equal(e.eigvecs, [[0, 1], [1, 0]])


def test_sym_eig_random_8x8_reconstructs():
    rng = RngStream(3)
    a = rng.normal((8, 8))
    a = a + a.T
    e = sym_eig(a)
    assert np.max(np.abs(e.reconstruct() - a)) <= 1e-9


@given(symmetric())
def test_sym_eig_properties(a):
    e = sym_eig(a)
    scale = max(1.0, np.max(np.abs(a)))
    assert np.max(np.abs(e.reconstruct() - a)) <= 1e-9 * scale
    assert np.max(np.abs(e.eigvecs.T @ e.eigvecs - np.eye(a.shape[0]))) <= 1e-10
    assert np.all(np.diff(e.eigvals) <= 0)
    idx = np.argmax(np.abs(e.eigvecs), axis=0)
    assert np.all(e.eigvecs[idx, np.arange(a.shape[0])] > 0)


@given(symmetric())
def test_jacobi_and_lapack_eigenvalues_agree(a):
    j = sym_eig(a, method="jacobi")
    lp = sym_eig(a, method="lapack")
    np.testing.assert_allclose(j.eigvals, lp.eigvals, atol=1e-9 * max(1.0, np.max(np.abs(a))))


def test_sym_eig_large_uses_lapack_and_reconstructs():
    rng = RngStream(0)
    a = rng.normal((150, 150))
    a = a + a.T
    e = sym_eig(a)
    assert np.max(np.abs(e.reconstruct() - a)) <= 1e-9


def test_sym_eig_rejects_bad_input():
    with pytest.raises(DimensionError):
        sym_eig(np.ones((2, 3)))
    with pytest.raises(DimensionError):
        sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(NumericalError):
        sym_eig(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_sym_eig_nonconvergence_is_reported():
    from mrvae.linalg import _jacobi_eig

    a = np.array([[1.0, 2.0, 3.0], [2.0, 5.0, 1.0], [3.0, 1.0, 7.0]])
    with pytest.raises(NumericalError):
        _jacobi_eig(a, max_sweeps=1)


def test_svd_zero_matrix():
    left, s, right = svd(np.zeros((3, 2)))
    np.testing.assert_array_equal(s, [0, 0])
    np.testing.assert_allclose(left.T @ left, np.eye(2), atol=1e-12)


def test_svd_diagonal():
    _, s, _ = svd(np.diag([3.0, 2.0]))
    np.testing.assert_allclose(s, [3, 2], atol=1e-14)


def test_svd_random_6x4():
    m = RngStream(1).normal((6, 4))
    left, s, right = svd(m)
    assert np.max(np.abs(left @ np.diag(s) @ right.T - m)) <= 1e-9


@given(st.integers(1, 7), st.integers(1, 7), st.data())
def test_svd_properties(n, p, data):
    m = data.draw(matrices(n, p))
    left, s, right = svd(m)
    r = min(n, p)
    assert left.shape == (n, r) and s.shape == (r,) and right.shape == (p, r)
    scale = max(1.0, np.max(np.abs(m)))
    assert np.max(np.abs(left @ np.diag(s) @ right.T - m)) <= 1e-9 * scale
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)
    assert np.max(np.abs(left.T @ left - np.eye(r))) <= 1e-9
    assert np.max(np.abs(right.T @ right - np.eye(r))) <= 1e-10
    np.testing.assert_allclose(s, np.linalg.svd(m, compute_uv=False), atol=1e-9 * scale)


def test_svd_rank_deficient_has_orthonormal_left():
    m = np.outer([1.0, 2.0, 3.0, 4.0], [1.0, -1.0, 2.0])
    left, s, right = svd(m)
    assert s[1] == 0 and s[2] == 0
    np.testing.assert_allclose(left.T @ left, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(left @ np.diag(s) @ right.T, m, atol=1e-12)


def test_svd_ill_conditioned():
    rng = RngStream(5)
    q1, q2 = random_orthogonal(rng.split("a"), 5), random_orthogonal(rng.split("b"), 5)
    m = q1 @ np.diag(np.geomspace(1, 1e-6, 5)) @ q2.T
    left, s, right = svd(m)
    assert np.max(np.abs(left @ np.diag(s) @ right.T - m)) <= 1e-9
    np.testing.assert_allclose(left.T @ left, np.eye(5), atol=1e-9)


def test_sample_covariance_examples():
    x = np.array([[1.0, 2.0]])
    np.testing.assert_array_equal(sample_covariance(x, x[0]), np.zeros((2, 2)))
    c = sample_covariance(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.zeros(2))
    np.testing.assert_array_equal(c, np.diag([1.0, 0.0]))


def test_sample_covariance_matches_two_pass_oracle():
    x = RngStream(2).normal((100, 5))
    mu = x.mean(axis=0)
    oracle = np.zeros((5, 5))
    for row in x:
        diff = row - mu
        for i in range(5):
            for j in range(5):
                oracle[i, j] += diff[i] * diff[j]
    oracle /= 100
    np.testing.assert_allclose(sample_covariance(x, mu), oracle, atol=1e-12)


def test_sample_covariance_dimension_errors():
    with pytest.raises(DimensionError):
        sample_covariance(np.ones((3, 2)), np.zeros(3))
    with pytest.raises(DimensionError):
        sample_covariance(np.ones((0, 2)), np.zeros(2))


def test_gaussian_sample_examples():
    mu = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(gaussian_sample(RngStream(0), mu, np.zeros(3)), mu)
    a = gaussian_sample(RngStream(7), np.zeros(4), np.ones(4))
    b = gaussian_sample(RngStream(7), np.zeros(4), np.ones(4))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(DimensionError):
        gaussian_sample(RngStream(0), np.zeros(2), np.ones(3))


def test_gaussian_sample_clt():
    rng = RngStream(11)
    draws = np.array([gaussian_sample(rng, np.zeros(3), np.ones(3)) for _ in range(20000)])
    draws = np.vstack([draws, rng.normal((80000, 3))])
    assert np.all(np.abs(draws.mean(axis=0)) <= 3 / np.sqrt(draws.shape[0]))


@given(seeds(), st.text(min_size=1, max_size=8))
def test_rng_streams_are_reproducible(seed, label):
    a, b = RngStream(seed), RngStream(seed)
    np.testing.assert_array_equal(a.normal(5), b.normal(5))
    # a split does not depend on how much the parent has consumed
    np.testing.assert_array_equal(a.split(label).normal(4), RngStream(seed).split(label).normal(4))


def test_rng_split_labels_differ():
    root = RngStream(0)
    x, y = root.split("init").normal(1000), root.split("beta").normal(1000)
    assert not np.array_equal(x, y)
    assert abs(np.corrcoef(x, y)[0, 1]) < 4 / np.sqrt(1000)


def test_rng_state_roundtrip():
    r = RngStream(4)
    r.normal(3)
    st_ = r.get_state()
    a = r.normal(5)
    r.set_state(st_)
    np.testing.assert_array_equal(a, r.normal(5))


def test_spectrum_from_eigvals():
    sp = SpectrumDecomp.from_eigvals([3.0, 1.0])
    np.testing.assert_array_equal(sp.reconstruct(), np.diag([3.0, 1.0]))
    with pytest.raises(DimensionError):
        SpectrumDecomp.from_eigvals([1.0, 3.0])


def test_random_orthogonal():
    q = random_orthogonal(RngStream(9), 6)
    np.testing.assert_allclose(q.T @ q, np.eye(6), atol=1e-12)
