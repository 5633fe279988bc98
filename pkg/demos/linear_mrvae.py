"""Train one gated linear model across all betas and compare its RD curve with the analytic optimum.

Run: python demos/linear_mrvae.py [--steps 20000]
"""

import argparse
import time

import numpy as np

from mrvae.evaluation import rd_sweep
from mrvae.io import SyntheticGaussian, make_synthetic
from mrvae.linalg import RngStream, sym_eig
from mrvae.linear import DatasetMoments, analytic_rd_point
from mrvae.linear_gated import GatedLinearVAE
from mrvae.training import LinearTrainConfig, train_linear_mrvae


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=5000)
    args = ap.parse_args()

    spec = SyntheticGaussian(dim=16, spectrum=list(np.geomspace(8, 0.05, 16)), n_samples=4096, seed=0)
    data, _ = make_synthetic(spec)
    moments = DatasetMoments.from_data(data)
    k = 8
    model = GatedLinearVAE.init(16, k, RngStream(0).split("init"), mean=moments.mean_mle)
    start = time.perf_counter()
    result = train_linear_mrvae(model, moments, LinearTrainConfig(steps=args.steps), log_every=args.steps // 5)
    for row in result.history:
        print(f"step {row['step']:6d}  averaged loss {row['loss']:.4f}")
    print(f"trained in {time.perf_counter() - start:.1f}s")

    spectrum = sym_eig(moments.cov)
    curve = rd_sweep(model, np.geomspace(0.01, 10, 10), data, RngStream(0).split("sweep"))
    print(f"\n{'beta':>8} {'rate':>9} {'analytic':>9} {'distortion':>11} {'analytic':>9}")
    for p in curve.points:
        r, d = analytic_rd_point(spectrum, p.beta, k)
        print(f"{p.beta:8.3f} {p.rate:9.4f} {r:9.4f} {p.distortion:11.4f} {d:9.4f}")
    print("\nDistortion tracks the optimum closely. Rate drifts at the ends of the range,")
    print("demos/linear_response_bound.py shows the best fit this gate family reaches; Adam stops short of it.")


if __name__ == "__main__":
    main()
