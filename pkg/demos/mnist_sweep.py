"""Train one gated MLP on binarised MNIST over beta in [0.01, 10] and sweep its RD curve.

Run: python demos/mnist_sweep.py [--epochs 20] [--out demo-out]
"""

import argparse
from pathlib import Path

import numpy as np

from mrvae.evaluation import curve_check, rd_sweep
from mrvae.io import emit_rd_csv, load_idx
from mrvae.linalg import RngStream
from mrvae.nn import build_mlp_vae, param_counts
from mrvae.training import Granularity, TrainConfig, train_mrvae

DATA = Path(__file__).resolve().parent.parent / "data" / "mnist5k-images-idx3-ubyte.gz"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--out", default="demo-out")
    args = ap.parse_args()

    data = load_idx(DATA, 0.5)
    model = build_mlp_vae(784, [256], 16, [256], rng=RngStream(0).split("init"))
    counts = param_counts(model)
    print(f"{data.shape[0]} images; {counts.base} base parameters, {counts.gate} gate parameters "
          f"({100 * counts.overhead_ratio:.2f}% overhead)")

    cfg = TrainConfig(epochs=args.epochs, lr=3e-3, granularity=Granularity.PER_EXAMPLE)
    for row in train_mrvae(model, data, cfg).history:
        print(f"epoch {row['epoch']:3d}  loss {row['loss']:8.3f}  rate {row['rate']:7.3f}  "
              f"distortion {row['distortion']:8.3f}")

    curve = rd_sweep(model, np.geomspace(0.01, 10, 10), data, RngStream(0).split("sweep"))
    print("\nOne trained model, ten points on its rate-distortion curve:")
    for p in curve.points:
        print(f"  beta {p.beta:7.3f}  rate {p.rate:7.2f}  distortion {p.distortion:7.2f}  active units {p.au}")
    print(curve_check(curve, noise_tol=0.5))
    out = Path(args.out) / "mnist_rd_curve.csv"
    emit_rd_csv(curve, out)
    print(f"curve written to {out}")


if __name__ == "__main__":
    main()
