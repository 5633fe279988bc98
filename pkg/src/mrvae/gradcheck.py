"""Central finite-difference checks of the hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gates import GateActivation
from .linalg import RngStream
from .nn import Likelihood, MRVAEModel, backward, batch_loss, build_conv_vae, build_mlp_vae, forward

__all__ = ["GradcheckResult", "finite_difference_check", "randomize_gates", "standard_gradcheck_suite"]


@dataclass(frozen=True)
class GradcheckResult:
    label: str
    errors: dict  # parameter name -> norm-wise relative error

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]


def _rel_err(a, n) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    return 0.0 if scale == 0 else float(np.linalg.norm(a - n) / scale)


def finite_difference_check(model: MRVAEModel, x, beta, eps, step: float = 1e-4, label: str = "") -> GradcheckResult:
    """Compare ``backward`` with central differences of the batch loss for every parameter array.

    ``eps`` fixes the reparameterisation noise so the loss is deterministic.
    """
    def loss():
        return batch_loss(forward(model, x, beta, eps=eps), model.likelihood)

    res = forward(model, x, beta, eps=eps)
    analytic = backward(model, res.tape)
    errors = {}
    for name, arr in model.params().items():
        numeric = np.zeros_like(arr)
        flat, nflat = arr.reshape(-1), numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            nflat[i] = (up - down) / (2.0 * step)
        errors[name] = _rel_err(analytic[name], numeric)
    return GradcheckResult(label, errors)


def randomize_gates(model: MRVAEModel, rng: RngStream) -> None:
    """Give every gate a non-trivial, beta-dependent setting.

    Decoder-type gates are kept well inside their smooth region (affine value
    at most about -0.2 for standardised inputs) so differences do not straddle
    the point where the gate clips to zero.
    """
    for _, layer in model.named_layers():
        gp = getattr(layer, "gate", None)
        if gp is None:
            continue
        m = gp.size
        if gp.activation is GateActivation.SQRT_EXP_DECODER:
            gp.w_hyper[...] = rng.uniform(-0.05, 0.05, m)
            gp.b_hyper[...] = rng.uniform(-1.5, -0.4, m)
        else:
            gp.w_hyper[...] = rng.uniform(-0.5, 0.5, m)
            gp.b_hyper[...] = rng.uniform(-0.5, 0.5, m) + (1.0 if gp.activation is GateActivation.FILM else 0.0)
        if gp.shift_hyper is not None:
            gp.shift_hyper[...] = rng.uniform(-0.3, 0.3, m)


def _jitter_biases(model: MRVAEModel, rng: RngStream) -> None:
    # Check gradients away from the all-zero bias initialisation.
    for _, layer in model.named_layers():
        if hasattr(layer, "b"):
            layer.b[...] += rng.uniform(-0.1, 0.1, layer.b.shape)


def _data(likelihood, rng, bsz, d):
    if likelihood is Likelihood.BERNOULLI:
        return (rng.uniform(size=(bsz, d)) > 0.5).astype(np.float64)
    return rng.normal((bsz, d))


def standard_gradcheck_suite(seed: int = 0, input_dim: int = 20, hidden: int = 16, latent_dim: int = 4,
                             batch: int = 5, step: float = 1e-4) -> list[GradcheckResult]:
    """Dense models for both likelihoods and all gate activations, plus a small conv model."""
    root = RngStream(seed)
    results = []
    combos = [
        ("sigmoid/sqrt_exp", GateActivation.SIGMOID_ENCODER, GateActivation.SQRT_EXP_DECODER),
        ("film", GateActivation.FILM, GateActivation.FILM),
    ]
    for lik in (Likelihood.BERNOULLI, Likelihood.GAUSSIAN):
        for tag, enc_g, dec_g in combos:
            label = f"mlp/{lik.value}/{tag}"
            rng = root.split(label)
            model = build_mlp_vae(input_dim, [hidden], latent_dim, [hidden], rng=rng.split("init"),
                                  likelihood=lik, nonlinearity="tanh", encoder_gate=enc_g,
                                  decoder_gate=dec_g, gate_heads=True)
            randomize_gates(model, rng.split("gates"))
            _jitter_biases(model, rng.split("bias"))
            x = _data(lik, rng.split("x"), batch, input_dim)
            beta = np.exp(rng.split("beta").uniform(np.log(0.01), np.log(10.0), batch))
            eps = rng.split("eps").normal((batch, latent_dim))
            results.append(finite_difference_check(model, x, beta, eps, step, label))
    for lik in (Likelihood.BERNOULLI, Likelihood.GAUSSIAN):
        label = f"conv/{lik.value}"
        rng = root.split(label)
        model = build_conv_vae((1, 8, 8), (2, 3), latent_dim, (hidden,), rng=rng.split("init"), likelihood=lik,
                               nonlinearity="tanh")
        randomize_gates(model, rng.split("gates"))
        _jitter_biases(model, rng.split("bias"))
        x = _data(lik, rng.split("x"), 3, 64)
        beta = np.exp(rng.split("beta").uniform(np.log(0.01), np.log(10.0), 3))
        eps = rng.split("eps").normal((3, latent_dim))
        results.append(finite_difference_check(model, x, beta, eps, step, label))
    return results
