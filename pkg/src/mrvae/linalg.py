"""Small dense linear algebra and reproducible random streams.

Eigendecompositions use cyclic Jacobi rotations; the SVD is obtained from a
Jacobi eigendecomposition of the Gram matrix followed by a one-sided Jacobi
polish of the recovered left vectors. Everything runs in float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericalError

__all__ = [
    "SpectrumDecomp",
    "RngStream",
    "sym_eig",
    "svd",
    "sample_covariance",
    "gaussian_sample",
    "random_orthogonal",
]

_EPS = np.finfo(np.float64).eps
_MAX_SWEEPS = 100
# Above this size Jacobi in pure numpy gets slow; LAPACK takes over in "auto" mode.
JACOBI_MAX_DIM = 128


@dataclass(frozen=True)
class SpectrumDecomp:
    """Eigenpairs of a symmetric matrix, eigenvalues sorted descending.

    ``eigvecs[:, i]`` is the eigenvector for ``eigvals[i]``.
    """

    eigvecs: np.ndarray
    eigvals: np.ndarray
    source_dim: int

    def reconstruct(self) -> np.ndarray:
        return (self.eigvecs * self.eigvals) @ self.eigvecs.T

    @classmethod
    def from_eigvals(cls, eigvals, eigvecs=None) -> "SpectrumDecomp":
        """Build a decomposition from a known spectrum (identity basis by default)."""
        lam = np.asarray(eigvals, dtype=np.float64)
        if np.any(np.diff(lam) > 0):
            raise DimensionError("eigenvalues must be sorted in descending order")
        vecs = np.eye(lam.size) if eigvecs is None else np.asarray(eigvecs, dtype=np.float64)
        if vecs.shape != (lam.size, lam.size):
            raise DimensionError(f"eigvecs shape {vecs.shape} does not match {lam.size} eigenvalues")
        return cls(vecs, lam, lam.size)


class RngStream:
    """Counter-based (Philox) random stream with label-derived substreams.

    ``split(label)`` returns an independent stream whose key is a hash of the
    parent seed and the label, so the same (seed, label) pair always yields
    the same sequence regardless of how much the parent has been consumed.
    """

    def __init__(self, seed: int, *, _key: int | None = None):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        key = self.seed if _key is None else _key
        self._key = key
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def split(self, label: str) -> "RngStream":
        digest = hashlib.blake2b(
            f"{self._key}:{label}".encode(), digest_size=16
        ).digest()
        return RngStream(self.seed, _key=int.from_bytes(digest, "little"))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def _as_matrix(m) -> np.ndarray:
    a = np.array(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix has non-finite entries")
    return a


def _sign_fix(vecs: np.ndarray) -> np.ndarray:
    """Flip columns so the largest-magnitude entry of each is positive."""
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _rotation_tangent(tau: float) -> float:
    """Smaller root of ``t^2 + 2 tau t - 1 = 0``; ``1 / (2 tau)`` once ``tau^2`` would overflow."""
    if abs(tau) > 1e150:
        return 0.5 / tau
    return np.copysign(1.0, tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))


def _jacobi_eig(a: np.ndarray, max_sweeps: int = _MAX_SWEEPS):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    tol = _EPS * scale
    off_mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(a[off_mask] ** 2))
        if off <= tol:
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app, aqq = a[p, p], a[q, q]
                if abs(apq) < _EPS * 1e-3 * np.sqrt(abs(app * aqq)):
                    a[p, q] = a[q, p] = 0.0
                    continue
                with np.errstate(over="ignore"):
                    tau = (aqq - app) / (2.0 * apq)  # inf is fine: t becomes 0
                t = _rotation_tangent(tau)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    raise NumericalError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")


def sym_eig(m, method: str = "auto") -> SpectrumDecomp:
    """Eigendecomposition of a symmetric matrix.

    Args:
        m: square symmetric matrix (asymmetry above 1e-10 relative is rejected).
        method: ``"jacobi"``, ``"lapack"`` or ``"auto"`` (Jacobi up to
            ``JACOBI_MAX_DIM`` rows, LAPACK beyond).

    Returns:
        SpectrumDecomp with eigenvalues descending and each eigenvector's
        largest-magnitude entry positive.
    """
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise DimensionError("sym_eig needs a symmetric matrix")
    a = 0.5 * (a + a.T)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_DIM else "lapack"
    if method == "jacobi":
        vals, vecs = _jacobi_eig(a)
    elif method == "lapack":
        vals, vecs = np.linalg.eigh(a)
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = _sign_fix(vecs[:, order])
    return SpectrumDecomp(vecs, vals, a.shape[0])


def _complete_basis(cols: np.ndarray, n: int, count: int) -> np.ndarray:
    """Extend ``cols`` (n x r, orthonormal) with ``count`` more orthonormal columns."""
    basis = [cols[:, i] for i in range(cols.shape[1])]
    for e in np.eye(n):
        if len(basis) == cols.shape[1] + count:
            break
        v = e.copy()
        for _ in range(2):
            for b in basis:
                v -= (b @ v) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
    return np.column_stack(basis[cols.shape[1]:]) if count else np.zeros((n, 0))


def svd(m):
    """Thin singular value decomposition ``m = left @ diag(singulars) @ right.T``.

    For an n x p input with n >= p, ``left`` is n x p and ``right`` is p x p
    (the wide case is handled through the transpose). Singular values are
    non-negative and descending; columns of ``right`` follow the same sign
    convention as :func:`sym_eig`.
    """
    a = _as_matrix(m)
    n, p = a.shape
    if n < p:
        right, s, left = svd(a.T)
        return left, s, right
    if p == 0:
        return np.zeros((n, 0)), np.zeros(0), np.zeros((0, 0))
    # Work at unit scale so the Gram matrix neither underflows nor overflows.
    amax = float(np.max(np.abs(a)))
    if amax > 0:
        a = a / amax
    else:
        amax = 1.0
    gram = a.T @ a
    right = sym_eig(gram).eigvecs
    work = a @ right
    # Columns below this squared norm are numerically zero and left alone.
    negligible = (max(n, p) * _EPS) ** 2 * float(np.sum(a * a))
    # One-sided Jacobi polish: restores left-vector orthogonality lost to squaring.
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for i in range(p - 1):
            for j in range(i + 1, p):
                alpha = work[:, i] @ work[:, i]
                beta = work[:, j] @ work[:, j]
                gamma = work[:, i] @ work[:, j]
                if alpha <= negligible or beta <= negligible:
                    continue
                if abs(gamma) <= _EPS * np.sqrt(alpha * beta) or gamma == 0.0:
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = _rotation_tangent(zeta)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                wi = work[:, i].copy()
                work[:, i] = c * wi - s * work[:, j]
                work[:, j] = s * wi + c * work[:, j]
                ri = right[:, i].copy()
                right[:, i] = c * ri - s * right[:, j]
                right[:, j] = s * ri + c * right[:, j]
        if not rotated:
            break
    else:
        raise NumericalError("one-sided Jacobi polish did not converge")
    sing = np.linalg.norm(work, axis=0)
    order = np.argsort(-sing, kind="stable")
    sing, work, right = sing[order], work[:, order], right[:, order]
    flip = np.sign(right[np.argmax(np.abs(right), axis=0), np.arange(p)])
    flip[flip == 0] = 1.0
    right = right * flip
    work = work * flip
    tol = max(n, p) * _EPS * (sing[0] if sing[0] > 0 else 1.0)
    good = sing > tol
    left = np.zeros((n, p))
    left[:, good] = work[:, good] / sing[good]
    if not np.all(good):
        sing = np.where(good, sing, 0.0)
        left[:, ~good] = _complete_basis(left[:, good], n, int(np.sum(~good)))
    return left, sing * amax, right


def sample_covariance(data, mean) -> np.ndarray:
    """``(1/n) sum_i (x_i - mean)(x_i - mean)^T`` over the rows of ``data``."""
    x = np.asarray(data, dtype=np.float64)
    mu = np.asarray(mean, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise DimensionError("sample_covariance needs a non-empty n x d matrix")
    if mu.shape != (x.shape[1],):
        raise DimensionError(f"mean shape {mu.shape} does not match data width {x.shape[1]}")
    centered = x - mu
    cov = centered.T @ centered / x.shape[0]
    return 0.5 * (cov + cov.T)


def gaussian_sample(rng: RngStream, mean, diag_std) -> np.ndarray:
    """Draw ``mean + diag_std * eps`` with ``eps`` standard normal from ``rng``."""
    mu = np.asarray(mean, dtype=np.float64)
    std = np.asarray(diag_std, dtype=np.float64)
    if mu.shape != std.shape:
        raise DimensionError(f"mean {mu.shape} and std {std.shape} differ in shape")
    if np.any(std < 0):
        raise ValueError("standard deviations must be non-negative")
    return mu + std * rng.normal(mu.shape)


def random_orthogonal(rng: RngStream, n: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix via sign-corrected QR."""
    q, r = np.linalg.qr(rng.normal((n, n)))
    return q * np.sign(np.diag(r))
