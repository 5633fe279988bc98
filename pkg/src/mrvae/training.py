"""Sampled-KL-weight training of gated models and the fixed-schedule baseline.

Each iteration draws ``eta ~ U[ln a, ln b]`` (once per batch, or once per
example), sets ``beta = exp(eta)`` and takes an Adam step on
``distortion + beta * rate``. The baseline trainer uses the same loop with
``beta`` taken from a schedule instead.

Random streams are split by purpose (``init``, ``data``, ``reparam``,
``beta``) so two runs that differ only in how ``beta`` is chosen see the
same initial weights, batch order and reparameterisation noise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DomainError, NumericalError
from .gates import BetaConditioner
from .linalg import RngStream
from .linear import DatasetMoments
from .linear_gated import GatedLinearVAE
from .nn import Adam, MRVAEModel, backward, elbo_terms, forward

__all__ = [
    "BetaRange",
    "Constant",
    "LinearAnneal",
    "Granularity",
    "TrainConfig",
    "LinearTrainConfig",
    "StepResult",
    "TrainResult",
    "sample_eta",
    "normalize_eta",
    "cosine_lr",
    "mrvae_train_step",
    "train_mrvae",
    "betavae_train",
    "train_linear_mrvae",
]


@dataclass(frozen=True)
class BetaRange:
    a: float = 0.01
    b: float = 10.0

    def __post_init__(self):
        if not (0 < self.a < self.b) or not np.isfinite(self.b):
            raise DomainError(f"beta range needs 0 < a < b < inf, got ({self.a}, {self.b})")

    @property
    def log_bounds(self) -> tuple[float, float]:
        return float(np.log(self.a)), float(np.log(self.b))

    def conditioner(self) -> BetaConditioner:
        return BetaConditioner(self.a, self.b)


@dataclass(frozen=True)
class Constant:
    beta: float = 1.0

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")

    def beta_at(self, step: int, total_steps: int) -> float:
        return float(self.beta)


@dataclass(frozen=True)
class LinearAnneal:
    """``beta_target * min(1, step / warmup_steps)`` with 1-based steps.

    Counting from 1 keeps the first weight strictly positive.
    """

    beta_target: float = 1.0
    warmup_fraction: float = 0.3

    def __post_init__(self):
        if not self.beta_target > 0:
            raise DomainError(f"beta_target must be positive, got {self.beta_target}")
        if not (0 < self.warmup_fraction <= 1):
            raise DomainError(f"warmup_fraction must lie in (0, 1], got {self.warmup_fraction}")

    def warmup_steps(self, total_steps: int) -> int:
        return max(1, int(round(self.warmup_fraction * total_steps)))

    def beta_at(self, step: int, total_steps: int) -> float:
        w = self.warmup_steps(total_steps)
        return float(self.beta_target * min(1.0, step / w))


class Granularity(str, enum.Enum):
    PER_BATCH = "batch"
    PER_EXAMPLE = "example"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 100
    lr: float = 1e-3
    seed: int = 0
    beta_range: BetaRange = field(default_factory=BetaRange)
    granularity: Granularity = Granularity.PER_BATCH
    normalize: bool = True
    cosine: bool = False

    def __post_init__(self):
        object.__setattr__(self, "granularity", Granularity(self.granularity))
        for name in ("epochs", "batch_size"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")


@dataclass(frozen=True)
class LinearTrainConfig:
    """Full-data training of the gated linear model on the closed-form loss.

    ``eta_samples`` weights are drawn per step and their losses averaged,
    the closed-form analogue of per-example sampling over the whole dataset.
    """

    steps: int = 20000
    lr: float = 3e-3
    eta_samples: int = 64
    seed: int = 0
    beta_range: BetaRange = field(default_factory=BetaRange)
    normalize: bool = True
    cosine: bool = True

    def __post_init__(self):
        if self.steps <= 0 or self.eta_samples <= 0:
            raise ConfigError("steps and eta_samples must be positive")
        if not self.lr >= 0:
            raise ConfigError(f"lr must be non-negative, got {self.lr}")


class StepResult(NamedTuple):
    loss: float
    rate: float
    distortion: float
    beta: np.ndarray


@dataclass
class TrainResult:
    model: object
    optimizer: Adam
    history: list
    step: int


def sample_eta(beta_range: BetaRange, rng: RngStream, size=None):
    """``eta ~ U[ln a, ln b]``; a scalar when ``size`` is None."""
    lo, hi = beta_range.log_bounds
    eta = rng.uniform(lo, hi, size)
    # uniform() is half-open; clip guards the closed upper end against rounding in exp/log
    return np.clip(eta, lo, hi) if size is not None else float(min(max(eta, lo), hi))


def normalize_eta(cond: BetaConditioner, eta):
    return cond.normalize(eta)


def cosine_lr(base: float, step: int, total: int) -> float:
    """Cosine decay from ``base`` at step 0 to 0 at ``total``."""
    return 0.5 * base * (1.0 + np.cos(np.pi * min(step, total) / total))


def _sgd_step(model: MRVAEModel, batch, beta, noise_rng: RngStream, adam: Adam, lr=None) -> StepResult:
    res = forward(model, batch, beta, rng=noise_rng)
    dist, rate = elbo_terms(res, batch, model.likelihood)
    loss = float(np.mean(dist + res.tape.beta * rate))
    grads = backward(model, res.tape)
    adam.step(model.params(), grads, lr)
    return StepResult(loss, float(np.mean(rate)), float(np.mean(dist)), res.tape.beta)


def mrvae_train_step(
    model: MRVAEModel,
    batch,
    beta_range: BetaRange,
    rng: RngStream,
    adam: Adam,
    *,
    granularity: Granularity = Granularity.PER_BATCH,
    noise_rng: RngStream | None = None,
    lr: float | None = None,
) -> StepResult:
    """One iteration of sampled-weight training.

    ``rng`` supplies the weights; ``noise_rng`` (defaults to ``rng``) the
    reparameterisation noise. Returns the pre-update loss and the weights used.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    size = batch.shape[0] if Granularity(granularity) is Granularity.PER_EXAMPLE else None
    beta = np.exp(sample_eta(beta_range, rng, size))
    return _sgd_step(model, batch, beta, noise_rng or rng, adam, lr)


def _batches(n: int, batch_size: int, rng: RngStream):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _run(model, data, config: TrainConfig, beta_fn: Callable, record_steps: bool, adam=None):
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise DomainError("training data is empty")
    root = RngStream(config.seed)
    data_rng, noise_rng, beta_rng = root.split("data"), root.split("reparam"), root.split("beta")
    adam = adam or Adam(config.lr)
    per_epoch = -(-data.shape[0] // config.batch_size)
    total = config.epochs * per_epoch
    history = []
    step = 0
    for epoch in range(config.epochs):
        sums = np.zeros(3)
        count = 0
        for idx in _batches(data.shape[0], config.batch_size, data_rng):
            step += 1
            batch = data[idx]
            beta = beta_fn(step, total, beta_rng, batch.shape[0])
            lr = cosine_lr(config.lr, step - 1, total) if config.cosine else None
            try:
                out = _sgd_step(model, batch, beta, noise_rng, adam, lr)
            except NumericalError as exc:
                raise NumericalError(str(exc), layer=exc.layer, batch=step) from exc
            if record_steps:
                history.append({"step": step, "beta": float(np.mean(out.beta)),
                                "rate": out.rate, "distortion": out.distortion})
            sums += np.array([out.loss, out.rate, out.distortion]) * len(idx)
            count += len(idx)
        if not record_steps:
            loss, rate, dist = sums / count
            history.append({"epoch": epoch + 1, "step": step, "loss": loss,
                            "rate": rate, "distortion": dist})
    return TrainResult(model, adam, history, step)


def train_mrvae(model: MRVAEModel, data, config: TrainConfig, adam: Adam | None = None) -> TrainResult:
    """Train a gated model with weights drawn from ``config.beta_range``.

    History holds one row per epoch with mean loss, rate and distortion.
    """
    if config.normalize:
        model.conditioner = config.beta_range.conditioner()
    else:
        model.conditioner = None
    per_example = config.granularity is Granularity.PER_EXAMPLE

    def beta_fn(step, total, rng, bsz):
        return np.exp(sample_eta(config.beta_range, rng, bsz if per_example else None))

    return _run(model, data, config, beta_fn, record_steps=False, adam=adam)


def betavae_train(model: MRVAEModel, data, schedule, config: TrainConfig, adam: Adam | None = None) -> TrainResult:
    """Baseline training with the weight given by ``schedule`` at every step.

    History holds one row per step: ``step``, ``beta``, ``rate``, ``distortion``.
    """
    if not hasattr(schedule, "beta_at"):
        raise ConfigError(f"not a schedule: {schedule!r}")

    def beta_fn(step, total, rng, bsz):
        return schedule.beta_at(step, total)

    return _run(model, data, config, beta_fn, record_steps=True, adam=adam)


def train_linear_mrvae(
    model: GatedLinearVAE,
    moments: DatasetMoments,
    config: LinearTrainConfig,
    log_every: int = 0,
) -> TrainResult:
    """Adam on the closed-form sampled-weight objective of a gated linear VAE."""
    model.conditioner = config.beta_range.conditioner() if config.normalize else None
    beta_rng = RngStream(config.seed).split("beta")
    s = moments.second_moment(model.mean)
    params = model.params()
    adam = Adam(config.lr)
    history = []
    for step in range(config.steps):
        beta = np.exp(sample_eta(config.beta_range, beta_rng, config.eta_samples))
        loss, rate, dist, grads = model.objective_and_grads(s, beta)
        if not np.isfinite(loss):
            raise NumericalError("non-finite linear objective", batch=step + 1)
        lr = cosine_lr(config.lr, step, config.steps) if config.cosine else None
        adam.step(params, grads, lr)
        if log_every and (step % log_every == 0 or step == config.steps - 1):
            history.append({"step": step + 1, "loss": loss, "rate": rate, "distortion": dist})
    return TrainResult(model, adam, history, config.steps)
