"""Hand-set gate parameters that reproduce the linear VAE's optimal responses for every beta.

Run: python demos/gate_construction.py
"""

import numpy as np

from mrvae.evaluation import theorem1_construct, theorem1_verify
from mrvae.linalg import RngStream, SpectrumDecomp, random_orthogonal
from mrvae.linear import optimal_D, optimal_E


def main():
    rng = RngStream(1)
    d, k = 8, 4
    eigvals = np.sort(rng.uniform(0.1, 12.0, d))[::-1]
    spectrum = SpectrumDecomp.from_eigvals(eigvals, random_orthogonal(rng.split("basis"), d))
    decoder = rng.split("decoder").normal((d, k))

    construction = theorem1_construct(spectrum, decoder, k)
    grid = np.geomspace(0.01, 10, 20)
    errors = theorem1_verify(construction, grid)
    print("Largest gap between gated responses and closed-form optima over 20 betas:")
    for name, value in errors._asdict().items():
        print(f"  {name:<10} {value:.2e}")

    beta = 2.0
    e, _, dw = construction.response(beta)
    print(f"\nAt beta = {beta} the encoder stack gives E with |E - E*| = "
          f"{np.abs(e - optimal_E(decoder, beta)).max():.1e}")
    print(f"decoder gates open for eigenvalues above beta: {np.round(eigvals[:k], 2)} -> "
          f"column norms {np.round(np.linalg.norm(dw, axis=0), 3)}")
    print(f"optimal decoder column norms:                    "
          f"{np.round(np.linalg.norm(optimal_D(spectrum, beta, k), axis=0), 3)}")

    limiting = theorem1_construct(spectrum, decoder, k, limiting=True)
    print(f"\nWith a saturated decoder gate instead of a constant one, max error is "
          f"{theorem1_verify(limiting, grid).max:.2e}")


if __name__ == "__main__":
    main()
