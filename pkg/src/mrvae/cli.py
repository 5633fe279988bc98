"""Command-line entry point: ``mrvae <subcommand> --config run.json [--seed N] [--out DIR]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io as _io
import os
import sys
from pathlib import Path

import numpy as np

from .errors import MRVAEError, NumericalError
from .evaluation import Provenance, rd_sweep, theorem1_construct, theorem1_verify
from .gates import GateActivation
from .gradcheck import standard_gradcheck_suite
from .io import RunConfig, atomic_write, emit_rd_csv, load_checkpoint, load_config, load_dataset, save_checkpoint
from .linalg import RngStream, SpectrumDecomp, random_orthogonal, sym_eig
from .linear import DatasetMoments, analytic_rd_curve
from .linear_gated import GatedLinearVAE
from .nn import build_conv_vae, build_mlp_vae
from .training import (
    BetaRange,
    Constant,
    LinearAnneal,
    LinearTrainConfig,
    TrainConfig,
    betavae_train,
    train_linear_mrvae,
    train_mrvae,
)

SUBCOMMANDS = ("train-mrvae", "train-betavae", "sweep-rd", "verify-theorem1", "gradcheck", "linear-rd")
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mrvae", description="Train and evaluate beta-conditioned VAEs.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--seed", type=int, default=None, help="overrides MRVAE_SEED and the config seed")
        s.add_argument("--out", default="mrvae-out", help="directory for all written artifacts")
    return p


def resolve_seed(cli_seed, config_seed: int) -> int:
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get("MRVAE_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError as exc:
            raise MRVAEError(f"MRVAE_SEED must be an integer, got {env!r}") from exc
    return int(config_seed)


def _build_model(cfg: RunConfig, data_dim: int, rng: RngStream, gated: bool):
    m = cfg.model
    if m.kind == "mlp":
        return build_mlp_vae(data_dim, m.enc_hidden, m.latent_dim, m.dec_hidden, rng=rng,
                             likelihood=m.likelihood, nonlinearity=m.nonlinearity, gated=gated,
                             encoder_gate=GateActivation(m.encoder_gate),
                             decoder_gate=GateActivation(m.decoder_gate))
    if m.kind == "conv":
        side = int(round(np.sqrt(data_dim)))
        if side * side != data_dim:
            raise MRVAEError(f"conv model needs square images, data width is {data_dim}")
        return build_conv_vae((1, side, side), tuple(m.channels), m.latent_dim, tuple(m.dec_hidden),
                              rng=rng, likelihood=m.likelihood, gated=gated)
    raise MRVAEError("gated_linear models are trained with the linear-rd subcommand")


def _train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    t = cfg.train
    return TrainConfig(t.epochs, t.batch_size, t.lr, seed, BetaRange(*t.beta_range),
                       t.granularity, t.normalize, t.cosine)


def _write_history(path: Path, rows) -> None:
    if not rows:
        return
    buf = _io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in r.items()})
    atomic_write(path, buf.getvalue())


def _cmd_train(cfg: RunConfig, seed: int, out: Path, base: Path, mrvae: bool) -> int:
    data, _ = load_dataset(cfg.dataset, base)
    rng = RngStream(seed)
    model = _build_model(cfg, data.shape[1], rng.split("init"), gated=mrvae and cfg.model.gated)
    tc = _train_config(cfg, seed)
    if mrvae:
        result = train_mrvae(model, data, tc)
    else:
        t = cfg.train
        sched = Constant(t.beta) if t.schedule == "constant" else LinearAnneal(t.beta, t.warmup_fraction)
        result = betavae_train(model, data, sched, tc)
    save_checkpoint(out / cfg.outputs.checkpoint, model, result.optimizer, result.step, cfg)
    _write_history(out / cfg.outputs.history, result.history)
    last = result.history[-1]
    print(f"trained {result.step} steps; last rate {last['rate']:.4f} distortion {last['distortion']:.4f}")
    print(f"checkpoint: {out / cfg.outputs.checkpoint}")
    return EXIT_OK


def _cmd_sweep(cfg: RunConfig, seed: int, out: Path, base: Path) -> int:
    ckpt_path = Path(cfg.checkpoint)
    if not ckpt_path.is_absolute():
        ckpt_path = base / ckpt_path
    model = load_checkpoint(ckpt_path).model
    data, _ = load_dataset(cfg.dataset, base)
    s = cfg.sweep
    curve = rd_sweep(model, s.grid(), data, RngStream(seed).split("sweep"), s.mc_samples,
                     au_threshold=s.au_threshold)
    emit_rd_csv(curve, out / cfg.outputs.curve)
    for p in curve.points:
        print(f"beta={p.beta:.4g} rate={p.rate:.4f} distortion={p.distortion:.4f} au={p.au}")
    return EXIT_OK


def _cmd_theorem1(cfg: RunConfig, seed: int) -> int:
    t = cfg.theorem1
    rng = RngStream(seed).split("theorem1")
    lam = np.sort(rng.uniform(0.1, 12.0, t.data_dim))[::-1]
    spectrum = SpectrumDecomp(random_orthogonal(rng.split("basis"), t.data_dim), lam, t.data_dim)
    decoder = rng.split("decoder").normal((t.data_dim, t.latent_dim))
    con = theorem1_construct(spectrum, decoder, t.latent_dim, limiting=t.limiting)
    errs = theorem1_verify(con, np.geomspace(t.beta_min, t.beta_max, t.n_betas))
    for name, val in errs._asdict().items():
        print(f"{name}: max abs error {val:.3e}")
    ok = errs.max <= t.tolerance
    print("PASS" if ok else f"FAIL (tolerance {t.tolerance:.1e})")
    return EXIT_OK if ok else EXIT_NUMERICAL


def _cmd_gradcheck(cfg: RunConfig, seed: int) -> int:
    g = cfg.gradcheck
    results = standard_gradcheck_suite(seed, g.input_dim, g.hidden, g.latent_dim, g.batch, g.step)
    ok = True
    for r in results:
        name, err = r.worst
        good = err <= g.tolerance
        ok &= good
        print(f"{'PASS' if good else 'FAIL'} {r.label}: worst {name} rel error {err:.2e}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def _cmd_linear_rd(cfg: RunConfig, seed: int, out: Path, base: Path) -> int:
    data, spectrum = load_dataset(cfg.dataset, base)
    moments = DatasetMoments.from_data(data)
    t = cfg.train
    lc = LinearTrainConfig(t.steps, t.lr, t.eta_samples, seed, BetaRange(*t.beta_range), t.normalize, t.cosine)
    k = cfg.model.latent_dim
    model = GatedLinearVAE.init(data.shape[1], k, RngStream(seed).split("init"), mean=moments.mean_mle)
    train_linear_mrvae(model, moments, lc)
    s = cfg.sweep
    curve = rd_sweep(model, s.grid(), data, RngStream(seed).split("sweep"), s.mc_samples,
                     au_threshold=s.au_threshold)
    sample_spec = sym_eig(moments.cov)
    analytic = analytic_rd_curve(sample_spec, s.grid(), k)
    emit_rd_csv(curve, out / cfg.outputs.curve)
    emit_rd_csv(analytic, out / ("analytic_" + cfg.outputs.curve))
    save_checkpoint(out / cfg.outputs.checkpoint, model, None, lc.steps, cfg)
    for p, q in zip(curve.points, analytic.points):
        print(f"beta={p.beta:.4g} rate {p.rate:.4f} (analytic {q.rate:.4f}) "
              f"distortion {p.distortion:.4f} (analytic {q.distortion:.4f})")
    return EXIT_OK


def dispatch(argv) -> int:
    parser = _parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    try:
        cfg = load_config(args.config)
        if cfg.experiment != args.command:
            raise MRVAEError(f"config is for {cfg.experiment!r}, not {args.command!r}")
        seed = resolve_seed(args.seed, cfg.seed)
        out = Path(args.out)
        base = Path(args.config).resolve().parent
        if args.command in ("train-mrvae", "train-betavae"):
            return _cmd_train(cfg, seed, out, base, mrvae=args.command == "train-mrvae")
        if args.command == "sweep-rd":
            return _cmd_sweep(cfg, seed, out, base)
        if args.command == "verify-theorem1":
            return _cmd_theorem1(cfg, seed)
        if args.command == "gradcheck":
            return _cmd_gradcheck(cfg, seed)
        return _cmd_linear_rd(cfg, seed, out, base)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (MRVAEError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
