"""Fixed-beta baselines: a constant weight and a linearly annealed one, one model per run.

Run: python demos/betavae_baselines.py [--epochs 5]
"""

import argparse
from pathlib import Path

from mrvae.evaluation import rd_sweep
from mrvae.io import load_idx
from mrvae.linalg import RngStream
from mrvae.nn import build_mlp_vae
from mrvae.training import Constant, LinearAnneal, TrainConfig, betavae_train

DATA = Path(__file__).resolve().parent.parent / "data" / "mnist5k-images-idx3-ubyte.gz"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=5)
    args = ap.parse_args()
    data = load_idx(DATA, 0.5, max_items=2000)
    cfg = TrainConfig(epochs=args.epochs, lr=3e-3)

    for label, schedule in (("constant", Constant(1.0)), ("annealed", LinearAnneal(1.0, 0.3))):
        model = build_mlp_vae(784, [256], 16, [256], rng=RngStream(0).split("init"), gated=False)
        history = betavae_train(model, data, schedule, cfg).history
        knee = next(h["step"] for h in history if h["beta"] == 1.0)
        point = rd_sweep(model, [1.0], data, RngStream(0).split("sweep")).points[0]
        print(f"{label:>9}: weight reaches 1 at step {knee} of {len(history)}; "
              f"rate {point.rate:.2f}, distortion {point.distortion:.2f}, active units {point.au}")
    print("Each baseline gives one point; tracing a curve needs one training run per beta.")


if __name__ == "__main__":
    main()
