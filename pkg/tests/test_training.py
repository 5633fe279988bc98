import math

import numpy as np
import pytest
from scipy.stats import chisquare

from mrvae.errors import ConfigError, DomainError
from mrvae.evaluation import rd_sweep
from mrvae.gates import BetaConditioner
from mrvae.linalg import RngStream
from mrvae.nn import Adam, Likelihood, batch_loss, build_mlp_vae, forward
from mrvae.training import (
    BetaRange,
    Constant,
    Granularity,
    LinearAnneal,
    TrainConfig,
    betavae_train,
    cosine_lr,
    mrvae_train_step,
    normalize_eta,
    sample_eta,
    train_mrvae,
)

RANGE = BetaRange(0.01, 10.0)


def lowrank_data(seed, n=400, d=10, k=2, scale=3.0):
    rng = RngStream(seed)
    return rng.normal((n, k)) @ (scale * rng.normal((k, d))) + 0.1 * rng.normal((n, d))


def gaussian_mlp(seed, d=10, gated=True):
    return build_mlp_vae(d, [16], 2, [16], rng=RngStream(seed), likelihood=Likelihood.GAUSSIAN,
                         nonlinearity="tanh", gated=gated)


def test_range_validation():
    with pytest.raises(DomainError):
        BetaRange(1.0, 1.0)
    with pytest.raises(DomainError):
        BetaRange(-1.0, 1.0)


def test_sample_eta_support():
    lo, hi = RANGE.log_bounds
    etas = sample_eta(RANGE, RngStream(0), 100_000)
    assert etas.min() >= lo and etas.max() <= hi
    beta = np.exp(etas)
    assert beta.min() >= 0.01 * (1 - 1e-15) and beta.max() <= 10.0 * (1 + 1e-15)
    assert isinstance(sample_eta(RANGE, RngStream(0)), float)


def test_sample_eta_mean_within_clt_bound():
    lo, hi = RANGE.log_bounds
    etas = sample_eta(RANGE, RngStream(1), 100_000)
    se = (hi - lo) / math.sqrt(12) / math.sqrt(etas.size)
    assert abs(etas.mean() - 0.5 * (lo + hi)) <= 3 * se


def test_sample_eta_flat_in_log_space():
    lo, hi = RANGE.log_bounds
    counts, _ = np.histogram(sample_eta(RANGE, RngStream(2), 100_000), bins=10, range=(lo, hi))
    assert chisquare(counts).pvalue > 0.01


def test_sample_eta_deterministic():
    np.testing.assert_array_equal(sample_eta(RANGE, RngStream(3), 50), sample_eta(RANGE, RngStream(3), 50))


def test_normalize_eta_examples():
    cond = BetaConditioner(0.01, 10.0)
    assert float(normalize_eta(cond, math.log(math.sqrt(0.1)))) == pytest.approx(0.0, abs=1e-14)
    assert float(normalize_eta(cond, math.log(10.0))) == pytest.approx(math.sqrt(3), abs=1e-14)
    assert float(normalize_eta(cond, math.log(0.01))) == pytest.approx(-math.sqrt(3), abs=1e-14)
    z = normalize_eta(cond, sample_eta(RANGE, RngStream(4), 100_000))
    # std of a uniform's sample variance: var * sqrt(0.8 / n); std error is half that relative
    se = math.sqrt(0.8 / z.size) / 2
    assert abs(z.std() - 1.0) <= 3 * se


def test_schedules():
    assert Constant(2.0).beta_at(5, 100) == 2.0
    sched = LinearAnneal(2.0, 0.3)
    betas = [sched.beta_at(t, 100) for t in range(1, 101)]
    assert betas[0] > 0
    assert betas[29] == 2.0 and all(b == 2.0 for b in betas[29:])
    assert all(np.diff(betas) >= 0)
    slopes = np.diff(betas[:30])
    np.testing.assert_allclose(slopes, slopes[0], rtol=1e-12)
    with pytest.raises(DomainError):
        LinearAnneal(1.0, 0.0)
    with pytest.raises(DomainError):
        Constant(0.0)


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=-1.0)
    assert TrainConfig(granularity="example").granularity is Granularity.PER_EXAMPLE


def test_cosine_lr():
    assert cosine_lr(1.0, 0, 10) == 1.0
    assert cosine_lr(1.0, 5, 10) == pytest.approx(0.5)
    assert cosine_lr(1.0, 10, 10) == pytest.approx(0.0, abs=1e-16)


@pytest.mark.parametrize("granularity", list(Granularity))
def test_zero_learning_rate_leaves_params(granularity):
    model = gaussian_mlp(0)
    before = {k: v.copy() for k, v in model.params().items()}
    out = mrvae_train_step(model, lowrank_data(1, n=8), RANGE, RngStream(2), Adam(lr=0.0),
                           granularity=granularity)
    assert np.isfinite(out.loss)
    assert out.beta.shape == (8,)
    if granularity is Granularity.PER_BATCH:
        assert np.all(out.beta == out.beta[0])
    for k, v in model.params().items():
        np.testing.assert_array_equal(v, before[k])


@pytest.mark.parametrize("granularity", list(Granularity))
def test_training_is_bit_reproducible(granularity):
    data = lowrank_data(0, n=120)
    cfg = TrainConfig(epochs=2, batch_size=40, seed=5, granularity=granularity)
    a = train_mrvae(gaussian_mlp(1), data, cfg)
    b = train_mrvae(gaussian_mlp(1), data, cfg)
    for k, v in a.model.params().items():
        np.testing.assert_array_equal(v, b.model.params()[k])
    assert a.history == b.history


def test_convergence_probe():
    data = lowrank_data(0, n=400)
    model = gaussian_mlp(2)
    cfg = TrainConfig(epochs=50, batch_size=100, lr=1e-2, seed=0)
    res = betavae_train(model, data, Constant(1.0), cfg)
    assert res.step == 200
    losses = [h["distortion"] + h["beta"] * h["rate"] for h in res.history]
    assert losses[-1] <= 0.5 * losses[0]


def test_mrvae_convergence_probe():
    data = lowrank_data(0, n=400)
    res = train_mrvae(gaussian_mlp(2), data, TrainConfig(epochs=50, batch_size=100, lr=1e-2, seed=0))
    assert res.step == 200 and len(res.history) == 50
    assert res.history[-1]["loss"] <= 0.5 * res.history[0]["loss"]


def test_history_rows():
    data = lowrank_data(0, n=50)
    res = betavae_train(gaussian_mlp(0, gated=False), data, LinearAnneal(1.0, 0.5),
                        TrainConfig(epochs=2, batch_size=25))
    assert [h["step"] for h in res.history] == [1, 2, 3, 4]
    assert [h["beta"] for h in res.history] == [0.5, 1.0, 1.0, 1.0]


def test_degenerate_range_matches_constant_baseline():
    data = lowrank_data(3, n=200)
    cfg = TrainConfig(epochs=3, batch_size=50, seed=4, beta_range=BetaRange(0.999, 1.001))
    sampled = train_mrvae(gaussian_mlp(6), data, cfg).model
    constant = gaussian_mlp(6)
    constant.conditioner = cfg.beta_range.conditioner()
    betavae_train(constant, data, Constant(1.0), cfg)
    eps = RngStream(9).normal((200, 2))
    la = forward(sampled, data, 1.0, eps=eps)
    lb = forward(constant, data, 1.0, eps=eps)
    a, b = batch_loss(la, sampled.likelihood), batch_loss(lb, constant.likelihood)
    assert abs(a - b) / abs(b) <= 1e-3


def test_betavae_sweep_is_monotone():
    data = lowrank_data(7, n=400)
    betas = [0.03, 0.1, 0.3, 1.0, 3.0]
    rates, dists = [], []
    for beta in betas:
        model = gaussian_mlp(8, gated=False)
        betavae_train(model, data, Constant(beta), TrainConfig(epochs=300, batch_size=100, lr=1e-2, seed=1, cosine=True))
        pt = rd_sweep(model, [beta], data, RngStream(0), mc_samples=8).points[0]
        rates.append(pt.rate)
        dists.append(pt.distortion)
    assert all(np.diff(rates) < 0), rates
    assert all(np.diff(dists) > 0), dists


def test_betavae_rejects_non_schedule():
    with pytest.raises(ConfigError):
        betavae_train(gaussian_mlp(0), lowrank_data(0, n=10), 1.0, TrainConfig(epochs=1))


def test_empty_data_rejected():
    with pytest.raises(DomainError):
        train_mrvae(gaussian_mlp(0), np.zeros((0, 10)), TrainConfig(epochs=1))
