"""Closed-form linear VAE: optimal parameters, the analytic RD curve and a Monte-Carlo cross-check.

Run: python demos/linear_closed_forms.py
"""

import numpy as np

from mrvae.linalg import RngStream, SpectrumDecomp, random_orthogonal
from mrvae.linear import (
    DatasetMoments,
    analytic_rd_curve,
    distortion_closed_form,
    kl_closed_form,
    optimal_params,
)


def main():
    rng = RngStream(0)
    eigvals = np.array([6.0, 3.0, 1.5, 0.5, 0.2])
    spectrum = SpectrumDecomp.from_eigvals(eigvals, random_orthogonal(rng.split("basis"), eigvals.size))
    k = 3

    print("Analytic rate-distortion curve (k = 3 latent dims):")
    curve = analytic_rd_curve(spectrum, np.geomspace(0.01, 10, 8), k)
    for p in curve.points:
        active = int(np.sum(eigvals[:k] > p.beta))
        print(f"  beta {p.beta:7.3f}  rate {p.rate:8.4f}  distortion {p.distortion:8.4f}  directions kept {active}")
    print("Every direction with eigenvalue at or below beta is switched off; past the top eigenvalue the rate is 0.")

    beta = 0.5
    params = optimal_params(spectrum, beta, k)
    moments = DatasetMoments.from_spectrum(spectrum)
    print(f"\nAt beta = {beta}: closed-form rate {kl_closed_form(params, moments):.4f}, "
          f"distortion {distortion_closed_form(params, moments):.4f}")

    n = 200_000
    x = rng.split("x").normal((n, eigvals.size)) * np.sqrt(eigvals) @ spectrum.eigvecs.T
    mean = x @ params.enc_weight.T
    z = mean + np.sqrt(params.cov_diag) * rng.split("z").normal(mean.shape)
    recon = z @ params.dec_weight.T
    nll = 0.5 * np.sum((x - recon) ** 2, axis=1) + 0.5 * eigvals.size * np.log(2 * np.pi)
    print(f"Monte-Carlo distortion over {n} samples: {nll.mean():.4f} +/- {nll.std() / np.sqrt(n):.4f}")


if __name__ == "__main__":
    main()
