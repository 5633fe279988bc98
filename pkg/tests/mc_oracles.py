"""Monte-Carlo estimators used as independent oracles for the closed forms."""

import numpy as np

LOG_2PI = np.log(2 * np.pi)


def _log_normal_diag(x, mean, var):
    return -0.5 * np.sum((x - mean) ** 2 / var + np.log(var) + LOG_2PI, axis=-1)


def draw_data(rng, moments, n):
    """Gaussian data with the given mean and covariance."""
    chol = np.linalg.cholesky(moments.cov + 1e-300 * np.eye(moments.cov.shape[0]))
    return moments.mean_mle + rng.normal((n, moments.cov.shape[0])) @ chol.T


def mc_rate(params, x, rng):
    """Mean and standard error of log q(z|x) - log p(z) with one z per x."""
    mean = (x - params.mean) @ params.enc_weight.T
    z = mean + np.sqrt(params.cov_diag) * rng.normal(mean.shape)
    vals = _log_normal_diag(z, mean, params.cov_diag) - _log_normal_diag(z, 0.0, 1.0)
    return vals.mean(), vals.std(ddof=1) / np.sqrt(len(vals))


def mc_distortion(params, x, rng):
    """Mean and standard error of -log p(x|z) with z ~ q(z|x)."""
    mean = (x - params.mean) @ params.enc_weight.T
    z = mean + np.sqrt(params.cov_diag) * rng.normal(mean.shape)
    recon = z @ params.dec_weight.T + params.mean
    vals = -_log_normal_diag(x, recon, params.obs_var)
    return vals.mean(), vals.std(ddof=1) / np.sqrt(len(vals))


def mc_gaussian_kl(z_mean, z_logvar, rng, n):
    """KL(N(m, diag e^lv) || N(0, I)) for one row by sampling z."""
    std = np.exp(0.5 * z_logvar)
    z = z_mean + std * rng.normal((n, z_mean.size))
    vals = _log_normal_diag(z, z_mean, std**2) - _log_normal_diag(z, 0.0, 1.0)
    return vals.mean(), vals.std(ddof=1) / np.sqrt(n)
