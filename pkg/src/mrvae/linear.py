"""Closed-form objective, gradients and optimal parameters of the linear VAE.

Model: ``p(x|z) = N(D z + mu, sigma^2 I)`` and ``q(z|x) = N(E (x - mu), C)``
with ``C`` diagonal and shared across data points. Data enter only through
their second moment about ``mu`` so every expectation over the dataset is a
trace against that matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .linalg import SpectrumDecomp, sample_covariance

__all__ = [
    "LinearVAEParams",
    "DatasetMoments",
    "kl_closed_form",
    "distortion_closed_form",
    "beta_objective",
    "grad_C",
    "grad_E",
    "optimal_C",
    "optimal_E",
    "optimal_D",
    "optimal_params",
    "analytic_rd_point",
    "analytic_rd_curve",
]

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LinearVAEParams:
    enc_weight: np.ndarray  # k x d
    cov_diag: np.ndarray  # k
    dec_weight: np.ndarray  # d x k
    mean: np.ndarray  # d
    obs_var: float = 1.0

    def __post_init__(self):
        e = np.asarray(self.enc_weight, dtype=np.float64)
        c = np.asarray(self.cov_diag, dtype=np.float64)
        dw = np.asarray(self.dec_weight, dtype=np.float64)
        mu = np.asarray(self.mean, dtype=np.float64)
        object.__setattr__(self, "enc_weight", e)
        object.__setattr__(self, "cov_diag", c)
        object.__setattr__(self, "dec_weight", dw)
        object.__setattr__(self, "mean", mu)
        k, d = e.shape
        if c.shape != (k,) or dw.shape != (d, k) or mu.shape != (d,):
            raise DimensionError(
                f"inconsistent shapes: E {e.shape}, C {c.shape}, D {dw.shape}, mu {mu.shape}"
            )
        if k > d:
            raise DimensionError(f"latent dim {k} exceeds data dim {d}")
        if self.obs_var <= 0:
            raise DomainError("observation variance must be positive")

    @property
    def latent_dim(self) -> int:
        return self.enc_weight.shape[0]

    @property
    def data_dim(self) -> int:
        return self.enc_weight.shape[1]


@dataclass(frozen=True)
class DatasetMoments:
    mean_mle: np.ndarray
    cov: np.ndarray
    count: int

    @classmethod
    def from_data(cls, data) -> "DatasetMoments":
        x = np.asarray(data, dtype=np.float64)
        mu = x.mean(axis=0)
        return cls(mu, sample_covariance(x, mu), x.shape[0])

    @classmethod
    def from_spectrum(cls, spectrum: SpectrumDecomp, count: int = 1, mean=None) -> "DatasetMoments":
        d = spectrum.source_dim
        mu = np.zeros(d) if mean is None else np.asarray(mean, dtype=np.float64)
        return cls(mu, spectrum.reconstruct(), count)

    def second_moment(self, about) -> np.ndarray:
        """``E[(x - about)(x - about)^T]``; equals ``cov`` when ``about`` is the MLE mean."""
        delta = self.mean_mle - np.asarray(about, dtype=np.float64)
        return self.cov + np.outer(delta, delta)


def _check_pair(params: LinearVAEParams, moments: DatasetMoments) -> None:
    if moments.cov.shape != (params.data_dim, params.data_dim):
        raise DimensionError(
            f"data covariance {moments.cov.shape} does not match data dim {params.data_dim}"
        )


def _check_cov(c) -> None:
    if np.any(np.asarray(c) <= 0):
        raise DomainError("diagonal covariance entries must be strictly positive")


def _check_beta(beta) -> None:
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")


def kl_closed_form(params: LinearVAEParams, moments: DatasetMoments) -> float:
    """Dataset-average rate ``E_x KL(q(z|x) || N(0, I))`` in nats."""
    _check_pair(params, moments)
    _check_cov(params.cov_diag)
    s = moments.second_moment(params.mean)
    e, c = params.enc_weight, params.cov_diag
    quad = np.sum((e.T @ e) * s)
    return 0.5 * (-np.sum(np.log(c)) + quad + np.sum(c) - params.latent_dim)


def distortion_closed_form(params: LinearVAEParams, moments: DatasetMoments) -> float:
    """Dataset-average expected negative log-likelihood in nats (includes the ``d/2 log 2 pi`` constant)."""
    _check_pair(params, moments)
    s = moments.second_moment(params.mean)
    e, c, dw = params.enc_weight, params.cov_diag, params.dec_weight
    d = params.data_dim
    resid = np.eye(d) - dw @ e
    noise = np.sum(dw * dw * c)  # tr(D C D^T)
    recon = np.sum((resid @ s) * resid)  # tr(R S R^T)
    var = params.obs_var
    return 0.5 * (noise + recon) / var + 0.5 * d * (LOG_2PI + np.log(var))


def beta_objective(params: LinearVAEParams, moments: DatasetMoments, beta: float) -> float:
    _check_beta(beta)
    return distortion_closed_form(params, moments) + beta * kl_closed_form(params, moments)


def grad_C(params: LinearVAEParams, moments: DatasetMoments, beta: float) -> np.ndarray:
    """Gradient of the dataset-total loss ``N * beta_objective`` w.r.t. diag(C).

    This is ``(N/2)(diag(D^T D) + beta - beta / C)``, i.e. the descent
    direction for the minimised objective.
    """
    _check_beta(beta)
    _check_cov(params.cov_diag)
    dw, c = params.dec_weight, params.cov_diag
    dtd = np.sum(dw * dw, axis=0) / params.obs_var
    return 0.5 * moments.count * (dtd + beta - beta / c)


def grad_E(params: LinearVAEParams, moments: DatasetMoments, beta: float) -> np.ndarray:
    """Gradient of the dataset-total loss w.r.t. E: ``N (D^T D E S + beta E S - D^T S)``."""
    _check_beta(beta)
    _check_pair(params, moments)
    s = moments.second_moment(params.mean)
    dw, e = params.dec_weight, params.enc_weight
    dt = dw.T / params.obs_var
    return moments.count * (dt @ dw @ e @ s + beta * e @ s - dt @ s)


def optimal_C(dec_weight, beta: float) -> np.ndarray:
    """``beta / (diag(D^T D) + beta)``, the covariance that zeroes ``grad_C``."""
    _check_beta(beta)
    dw = np.asarray(dec_weight, dtype=np.float64)
    return beta / (np.sum(dw * dw, axis=0) + beta)


def optimal_E(dec_weight, beta: float) -> np.ndarray:
    """``(D^T D + beta I)^{-1} D^T``, the encoder that zeroes ``grad_E``."""
    _check_beta(beta)
    dw = np.asarray(dec_weight, dtype=np.float64)
    k = dw.shape[1]
    return np.linalg.solve(dw.T @ dw + beta * np.eye(k), dw.T)


def optimal_D(spectrum: SpectrumDecomp, beta: float, k: int) -> np.ndarray:
    """pPCA decoder ``U_k max(0, Lambda_k - beta)^{1/2}`` with the rotation fixed to identity."""
    _check_beta(beta)
    if k > spectrum.source_dim:
        raise DimensionError(f"latent dim {k} exceeds data dim {spectrum.source_dim}")
    scales = np.sqrt(np.maximum(0.0, spectrum.eigvals[:k] - beta))
    return spectrum.eigvecs[:, :k] * scales


def optimal_params(spectrum: SpectrumDecomp, beta: float, k: int, mean=None) -> LinearVAEParams:
    dw = optimal_D(spectrum, beta, k)
    mu = np.zeros(spectrum.source_dim) if mean is None else mean
    return LinearVAEParams(optimal_E(dw, beta), optimal_C(dw, beta), dw, mu)


def analytic_rd_point(spectrum: SpectrumDecomp, beta: float, k: int) -> tuple[float, float]:
    """(rate, distortion) of the jointly optimal linear VAE at ``beta``.

    Evaluated directly from the spectrum: each retained direction with
    eigenvalue above ``beta`` carries ``log(lambda / beta) / 2`` nats and leaves
    ``beta / 2`` of distortion; every other direction contributes ``lambda / 2``.
    """
    _check_beta(beta)
    if k > spectrum.source_dim:
        raise DimensionError(f"latent dim {k} exceeds data dim {spectrum.source_dim}")
    lam = spectrum.eigvals
    top = lam[:k]
    rate = 0.5 * float(np.sum(np.maximum(0.0, np.log(np.maximum(top, 1e-300) / beta))))
    dist = 0.5 * (float(np.sum(np.minimum(top, beta))) + float(np.sum(lam[k:])))
    return rate, float(dist + 0.5 * spectrum.source_dim * LOG_2PI)


def analytic_rd_curve(spectrum: SpectrumDecomp, betas, k: int):
    """Analytic RD curve over ``betas`` as an :class:`~mrvae.evaluation.RDCurve`."""
    from .evaluation import RDCurve, RDPoint

    points = []
    for beta in sorted(float(b) for b in betas):
        rate, dist = analytic_rd_point(spectrum, beta, k)
        points.append(RDPoint(beta, rate, dist, elbo_beta1=rate + dist))
    return RDCurve(tuple(points), provenance="analytic")
