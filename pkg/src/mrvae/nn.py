"""A small VAE with hand-written reverse-mode gradients and beta gating.

Layers keep their own parameters as numpy arrays. ``forward`` records a
tape of per-layer caches and ``backward`` walks it in reverse to produce a
gradient for every entry of :meth:`MRVAEModel.params`. Gates act on
pre-activations (before the nonlinearity).
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError, NumericalError, StateError
from .gates import (
    BetaConditioner,
    GateActivation,
    GateParams,
    apply_gate_preactivation,
    conv_gate,
    gate_backward,
    gate_vector,
)
from .linalg import RngStream

__all__ = [
    "Likelihood",
    "Dense",
    "Conv2d",
    "Reshape",
    "MRVAEModel",
    "ForwardResult",
    "Tape",
    "forward",
    "elbo_terms",
    "batch_loss",
    "gaussian_kl",
    "backward",
    "Adam",
    "adam_step",
    "ParamCounts",
    "param_counts",
    "build_mlp_vae",
    "build_conv_vae",
    "LOGVAR_CLAMP",
]

LOGVAR_CLAMP = 10.0
LOG_2PI = np.log(2.0 * np.pi)


class Likelihood(str, enum.Enum):
    BERNOULLI = "bernoulli"
    GAUSSIAN = "gaussian"


def _nonlin(kind, s):
    if kind == "relu":
        return np.maximum(s, 0.0)
    if kind == "tanh":
        return np.tanh(s)
    return s


def _nonlin_grad(kind, pre, out, d_out):
    if kind == "relu":
        return d_out * (pre > 0)
    if kind == "tanh":
        return d_out * (1.0 - out * out)
    return d_out


def _check_nonlin(kind):
    if kind not in ("relu", "tanh", "identity"):
        raise ValueError(f"unknown nonlinearity {kind!r}")
    return kind


class Dense:
    """``out = act(gate * (a W^T + b))``; ungated when ``gate`` is None."""

    kind = "dense"

    def __init__(self, W, b, nonlinearity="identity", gate: GateParams | None = None):
        self.W = np.asarray(W, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.nonlinearity = _check_nonlin(nonlinearity)
        if self.b.shape != (self.W.shape[0],):
            raise DimensionError(f"bias {self.b.shape} does not match weight {self.W.shape}")
        if gate is not None and gate.size != self.W.shape[0]:
            raise DimensionError(f"gate length {gate.size} != output width {self.W.shape[0]}")
        self.gate = gate

    @classmethod
    def init(cls, rng: RngStream, m_in, m_out, nonlinearity="identity", gate=None):
        # Kaiming-uniform on fan-in; ReLU layers get the sqrt(2) gain.
        gain = 2.0 if nonlinearity == "relu" else 1.0
        bound = np.sqrt(3.0 * gain / m_in)
        W = rng.uniform(-bound, bound, (m_out, m_in))
        gp = None if gate is None else GateParams.init(m_out, gate)
        return cls(W, np.zeros(m_out), nonlinearity, gp)

    @property
    def in_shape(self):
        return (self.W.shape[1],)

    def params(self):
        out = {"W": self.W, "b": self.b}
        if self.gate is not None:
            out.update({f"gate.{k}": v for k, v in self.gate.arrays().items()})
        return out

    def base_size(self):
        return self.W.size + self.b.size

    def forward(self, a, eta):
        if a.shape[-1] != self.W.shape[1]:
            raise DimensionError(f"dense layer expects width {self.W.shape[1]}, got {a.shape[-1]}")
        s = a @ self.W.T + self.b
        if self.gate is not None:
            scale, shift = _split(gate_vector(self.gate, eta))
            pre = apply_gate_preactivation(scale, s, shift)
        else:
            pre = s
        out = _nonlin(self.nonlinearity, pre)
        return out, (a, s, pre, out, eta)

    def backward(self, d_out, cache):
        a, s, pre, out, eta = cache
        d_pre = _nonlin_grad(self.nonlinearity, pre, out, d_out)
        grads = {}
        if self.gate is not None:
            gg = gate_backward(self.gate, eta, s, d_pre)
            d_s = gg.d_s
            grads["gate.w_hyper"] = gg.d_w_hyper
            grads["gate.b_hyper"] = gg.d_b_hyper
            if gg.d_shift_hyper is not None:
                grads["gate.shift_hyper"] = gg.d_shift_hyper
        else:
            d_s = d_pre
        grads["W"] = d_s.T @ a
        grads["b"] = d_s.sum(axis=0)
        return d_s @ self.W, grads


class Conv2d:
    """Square-kernel convolution lowered to a matrix product (im2col)."""

    kind = "conv"

    def __init__(self, W, b, stride=1, padding=0, nonlinearity="identity", gate=None):
        self.W = np.asarray(W, dtype=np.float64)  # (C_out, C_in, K, K)
        self.b = np.asarray(b, dtype=np.float64)
        if self.W.ndim != 4 or self.W.shape[2] != self.W.shape[3]:
            raise DimensionError(f"conv weight must be (C_out, C_in, K, K), got {self.W.shape}")
        if self.b.shape != (self.W.shape[0],):
            raise DimensionError("conv bias must have one entry per filter")
        if stride not in (1, 2):
            raise ValueError("only stride 1 and 2 are supported")
        if gate is not None and gate.size != self.W.shape[0]:
            raise DimensionError(f"gate length {gate.size} != filter count {self.W.shape[0]}")
        self.stride = stride
        self.padding = padding
        self.nonlinearity = _check_nonlin(nonlinearity)
        self.gate = gate

    @classmethod
    def init(cls, rng, c_in, c_out, kernel, stride=1, padding=0, nonlinearity="identity", gate=None):
        fan_in = c_in * kernel * kernel
        gain = 2.0 if nonlinearity == "relu" else 1.0
        bound = np.sqrt(3.0 * gain / fan_in)
        W = rng.uniform(-bound, bound, (c_out, c_in, kernel, kernel))
        gp = None if gate is None else GateParams.init(c_out, gate)
        return cls(W, np.zeros(c_out), stride, padding, nonlinearity, gp)

    @property
    def kernel(self):
        return self.W.shape[2]

    def output_hw(self, h, w):
        k, p, st = self.kernel, self.padding, self.stride
        ho, wo = (h + 2 * p - k) // st + 1, (w + 2 * p - k) // st + 1
        if ho <= 0 or wo <= 0:
            raise DimensionError(f"conv output would be empty for input {h}x{w}")
        return ho, wo

    def params(self):
        out = {"W": self.W, "b": self.b}
        if self.gate is not None:
            out.update({f"gate.{k}": v for k, v in self.gate.arrays().items()})
        return out

    def base_size(self):
        return self.W.size + self.b.size

    def _cols(self, x):
        p, k, st = self.padding, self.kernel, self.stride
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::st, ::st]
        bsz, c, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bsz, ho * wo, c * k * k)
        return cols, (ho, wo), xp.shape

    def forward(self, x, eta):
        if x.ndim != 4 or x.shape[1] != self.W.shape[1]:
            raise DimensionError(f"conv expects (B, {self.W.shape[1]}, H, W), got {x.shape}")
        self.output_hw(x.shape[2], x.shape[3])
        cols, (ho, wo), padded = self._cols(x)
        wmat = self.W.reshape(self.W.shape[0], -1)
        s = (cols @ wmat.T + self.b).transpose(0, 2, 1).reshape(x.shape[0], -1, ho, wo)
        pre = conv_gate(self.gate, eta, s) if self.gate is not None else s
        out = _nonlin(self.nonlinearity, pre)
        return out, (cols, x.shape, padded, s, pre, out, eta)

    def backward(self, d_out, cache):
        cols, xshape, padded, s, pre, out, eta = cache
        d_pre = _nonlin_grad(self.nonlinearity, pre, out, d_out)
        grads = {}
        if self.gate is not None:
            gg = gate_backward(self.gate, eta, s, d_pre)
            d_s = gg.d_s
            grads["gate.w_hyper"] = gg.d_w_hyper
            grads["gate.b_hyper"] = gg.d_b_hyper
            if gg.d_shift_hyper is not None:
                grads["gate.shift_hyper"] = gg.d_shift_hyper
        else:
            d_s = d_pre
        bsz, c_out, ho, wo = d_s.shape
        d_flat = d_s.reshape(bsz, c_out, ho * wo).transpose(0, 2, 1)
        wmat = self.W.reshape(c_out, -1)
        grads["W"] = np.einsum("bpo,bpk->ok", d_flat, cols).reshape(self.W.shape)
        grads["b"] = d_flat.sum(axis=(0, 1))
        k, st, p = self.kernel, self.stride, self.padding
        c_in = xshape[1]
        d_cols = (d_flat @ wmat).reshape(bsz, ho, wo, c_in, k, k)
        d_xp = np.zeros(padded)
        for i in range(k):
            for j in range(k):
                d_xp[:, :, i : i + st * ho : st, j : j + st * wo : st] += d_cols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        if p:
            d_xp = d_xp[:, :, p:-p, p:-p]
        return d_xp, grads


class Reshape:
    """Reshape each example; ``Reshape((-1,))`` flattens."""

    kind = "reshape"
    gate = None

    def __init__(self, shape):
        self.shape = tuple(int(v) for v in shape)

    def params(self):
        return {}

    def base_size(self):
        return 0

    def forward(self, x, eta):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, d_out, cache):
        return d_out.reshape(cache), {}


def _split(g):
    return g if isinstance(g, tuple) else (g, None)


@dataclass
class MRVAEModel:
    """Encoder stack, Gaussian latent heads, decoder stack and output head.

    When ``conditioner`` is set, gates see the standardised log KL weight;
    otherwise they see ``log beta`` directly.
    """

    encoder: list
    mean_head: Dense
    logvar_head: Dense
    decoder: list
    decoder_head: Dense
    likelihood: Likelihood = Likelihood.BERNOULLI
    conditioner: BetaConditioner | None = field(default_factory=BetaConditioner)

    def __post_init__(self):
        self.likelihood = Likelihood(self.likelihood)
        if self.mean_head.W.shape != self.logvar_head.W.shape:
            raise DimensionError("mean and log-variance heads must have equal shapes")
        if self.decoder_first_width() is not None and self.decoder_first_width() != self.latent_dim:
            raise DimensionError("decoder input width does not match the latent dimension")

    @property
    def latent_dim(self) -> int:
        return self.mean_head.W.shape[0]

    @property
    def data_dim(self) -> int:
        return self.decoder_head.W.shape[0]

    def decoder_first_width(self):
        for layer in self.decoder:
            if isinstance(layer, Dense):
                return layer.W.shape[1]
            if isinstance(layer, Conv2d):
                return None
            if isinstance(layer, Reshape):
                return None
        return self.decoder_head.W.shape[1]

    def named_layers(self):
        for i, layer in enumerate(self.encoder):
            yield f"encoder.{i}", layer
        yield "mean_head", self.mean_head
        yield "logvar_head", self.logvar_head
        for i, layer in enumerate(self.decoder):
            yield f"decoder.{i}", layer
        yield "decoder_head", self.decoder_head

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self.named_layers():
            for k, v in layer.params().items():
                out[f"{name}.{k}"] = v
        return out

    def gated(self) -> bool:
        return any(layer.gate is not None for _, layer in self.named_layers())

    def gate_input(self, beta):
        eta = np.log(np.asarray(beta, dtype=np.float64))
        if self.conditioner is None:
            return eta
        return self.conditioner.normalize(eta)

    # Protocol shared with the gated linear VAE (used by rd_sweep / active_units).
    def encode(self, x, beta):
        res = forward(self, x, beta, eps=np.zeros((np.atleast_2d(x).shape[0], self.latent_dim)))
        return res.z_mean, res.z_logvar

    def decode_nll(self, x, z, beta):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        eta = self.gate_input(beta)
        h = z
        for layer in self.decoder:
            h, _ = layer.forward(h, eta)
        out, _ = self.decoder_head.forward(h, eta)
        return _distortion(self.likelihood, out, x)


class Tape(NamedTuple):
    model_id: int
    param_names: tuple
    x: np.ndarray
    beta: np.ndarray
    eta: np.ndarray
    eps: np.ndarray
    z_mean: np.ndarray
    z_logvar: np.ndarray
    z: np.ndarray
    recon: np.ndarray
    encoder_caches: list
    mean_cache: tuple
    logvar_cache: tuple
    decoder_caches: list
    head_cache: tuple


class ForwardResult(NamedTuple):
    recon_params: np.ndarray
    z_mean: np.ndarray
    z_logvar: np.ndarray
    z_sample: np.ndarray
    tape: Tape


def _check_finite(arr, where, index=None):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {where}", layer=index)


def forward(model: MRVAEModel, x, beta, rng: RngStream | None = None, eps=None) -> ForwardResult:
    """Run the model on a batch ``x`` (B, d) at KL weight ``beta``.

    ``beta`` is a scalar or one value per row. The reparameterisation noise
    comes from ``eps`` when given, otherwise from ``rng``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    bsz = x.shape[0]
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta <= 0):
        raise ValueError("beta must be positive")
    if beta.ndim not in (0, 1) or (beta.ndim == 1 and beta.shape[0] != bsz):
        raise DimensionError("beta must be a scalar or have one entry per row")
    cond = model.conditioner
    if cond is not None and model.gated() and (np.any(beta < cond.a) or np.any(beta > cond.b)):
        warnings.warn("beta outside the conditioner's training range; extrapolating", stacklevel=2)
    eta = model.gate_input(beta)

    h = x
    enc_caches = []
    for i, layer in enumerate(model.encoder):
        h, cache = layer.forward(h, eta)
        _check_finite(h, f"encoder layer {i}", i)
        enc_caches.append(cache)
    z_mean, mean_cache = model.mean_head.forward(h, eta)
    z_logvar, logvar_cache = model.logvar_head.forward(h, eta)
    _check_finite(z_mean, "mean head", len(model.encoder))
    _check_finite(z_logvar, "log-variance head", len(model.encoder))

    if eps is None:
        if rng is None:
            raise ValueError("forward needs either rng or eps")
        eps = rng.normal(z_mean.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != z_mean.shape:
        raise DimensionError(f"eps shape {eps.shape} != latent shape {z_mean.shape}")
    std = np.exp(0.5 * np.clip(z_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP))
    z = z_mean + std * eps

    h = z
    dec_caches = []
    for i, layer in enumerate(model.decoder):
        h, cache = layer.forward(h, eta)
        _check_finite(h, f"decoder layer {i}", len(model.encoder) + 1 + i)
        dec_caches.append(cache)
    recon, head_cache = model.decoder_head.forward(h, eta)
    _check_finite(recon, "decoder head", len(model.encoder) + 1 + len(model.decoder))

    tape = Tape(
        id(model), tuple(model.params()), x, np.broadcast_to(beta, (bsz,)).copy(), eta, eps,
        z_mean, z_logvar, z, recon, enc_caches, mean_cache, logvar_cache, dec_caches, head_cache,
    )
    return ForwardResult(recon, z_mean, z_logvar, z, tape)


def _distortion(likelihood, out, x):
    if likelihood is Likelihood.BERNOULLI:
        # softplus(l) - x l, written stably
        return np.sum(np.logaddexp(0.0, out) - x * out, axis=-1)
    return 0.5 * np.sum((x - out) ** 2, axis=-1) + 0.5 * x.shape[-1] * LOG_2PI


def gaussian_kl(z_mean, z_logvar):
    """Per-row ``KL(N(mean, diag(exp(logvar))) || N(0, I))`` with the log-variance clamp applied."""
    lv = np.clip(z_logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return 0.5 * np.sum(z_mean**2 + np.exp(lv) - lv - 1.0, axis=-1)


def elbo_terms(result: ForwardResult, x, likelihood) -> tuple[np.ndarray, np.ndarray]:
    """Per-example (distortion, rate) in nats; the loss is ``distortion + beta * rate``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dist = _distortion(Likelihood(likelihood), result.recon_params, x)
    return dist, gaussian_kl(result.z_mean, result.z_logvar)


def batch_loss(result: ForwardResult, likelihood) -> float:
    """Mean over the batch of ``distortion + beta * rate`` for the recorded betas."""
    dist, rate = elbo_terms(result, result.tape.x, likelihood)
    return float(np.mean(dist + result.tape.beta * rate))


def backward(model: MRVAEModel, tape: Tape, upstream: float = 1.0) -> dict[str, np.ndarray]:
    """Gradients of ``upstream * mean(distortion + beta * rate)`` for every parameter."""
    if tape.model_id != id(model) or tape.param_names != tuple(model.params()):
        raise StateError("tape was recorded on a different model")
    x, beta = tape.x, tape.beta
    bsz = x.shape[0]
    scale = upstream / bsz

    if model.likelihood is Likelihood.BERNOULLI:
        d_recon = (1.0 / (1.0 + np.exp(-tape.recon)) - x) * scale
    else:
        d_recon = (tape.recon - x) * scale

    grads: dict[str, np.ndarray] = {}

    def put(prefix, local):
        for k, v in local.items():
            grads[f"{prefix}.{k}"] = v

    d_h, local = model.decoder_head.backward(d_recon, tape.head_cache)
    put("decoder_head", local)
    for i in reversed(range(len(model.decoder))):
        d_h, local = model.decoder[i].backward(d_h, tape.decoder_caches[i])
        put(f"decoder.{i}", local)
    d_z = d_h

    lv = tape.z_logvar
    inside = (lv > -LOGVAR_CLAMP) & (lv < LOGVAR_CLAMP)
    lv_c = np.clip(lv, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    std = np.exp(0.5 * lv_c)
    b_col = beta[:, None] * scale
    d_mean = d_z + b_col * tape.z_mean
    d_logvar = (d_z * tape.eps * 0.5 * std + b_col * 0.5 * (std * std - 1.0)) * inside

    d_h1, local = model.mean_head.backward(d_mean, tape.mean_cache)
    put("mean_head", local)
    d_h2, local = model.logvar_head.backward(d_logvar, tape.logvar_cache)
    put("logvar_head", local)
    d_h = d_h1 + d_h2
    for i in reversed(range(len(model.encoder))):
        d_h, local = model.encoder[i].backward(d_h, tape.encoder_caches[i])
        put(f"encoder.{i}", local)
    return grads


class Adam:
    """Bias-corrected Adam over a dict of parameter arrays (updated in place)."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads, lr=None):
        lr = self.lr if lr is None else lr
        for k, g in grads.items():
            if params[k].shape != g.shape:
                raise DimensionError(f"gradient for {k} has shape {g.shape}, expected {params[k].shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            params[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_dict(self):
        return {"t": self.t, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "m": dict(self.m), "v": dict(self.v)}

    def load_state_dict(self, state):
        self.t = int(state["t"])
        self.lr, self.beta1, self.beta2, self.eps = (
            state["lr"], state["beta1"], state["beta2"], state["eps"])
        self.m = {k: np.array(v) for k, v in state["m"].items()}
        self.v = {k: np.array(v) for k, v in state["v"].items()}


def adam_step(state: Adam, params, grads, lr=None):
    """Apply one Adam update in place and return ``params``."""
    state.step(params, grads, lr)
    return params


class ParamCounts(NamedTuple):
    base: int
    gate: int
    overhead_ratio: float


def param_counts(model: MRVAEModel) -> ParamCounts:
    base = sum(layer.base_size() for _, layer in model.named_layers())
    gate = sum(layer.gate.num_params for _, layer in model.named_layers() if layer.gate is not None)
    return ParamCounts(base, gate, gate / base if base else 0.0)


def build_mlp_vae(
    input_dim,
    enc_hidden,
    latent_dim,
    dec_hidden,
    *,
    rng: RngStream,
    likelihood=Likelihood.BERNOULLI,
    nonlinearity="relu",
    gated=True,
    encoder_gate=GateActivation.SIGMOID_ENCODER,
    decoder_gate=GateActivation.SQRT_EXP_DECODER,
    gate_heads=False,
    conditioner: BetaConditioner | None = None,
) -> MRVAEModel:
    """MLP VAE ``input -> enc_hidden -> (mean, logvar) -> dec_hidden -> output``.

    Heads (latent mean, log-variance and output) are ungated unless
    ``gate_heads`` is set.
    """
    enc_g = encoder_gate if gated else None
    dec_g = decoder_gate if gated else None
    head_enc = enc_g if gate_heads else None
    head_dec = dec_g if gate_heads else None
    enc, width = [], input_dim
    for h in enc_hidden:
        enc.append(Dense.init(rng, width, h, nonlinearity, enc_g))
        width = h
    mean_head = Dense.init(rng, width, latent_dim, "identity", head_enc)
    logvar_head = Dense.init(rng, width, latent_dim, "identity", head_enc)
    dec, width = [], latent_dim
    for h in dec_hidden:
        dec.append(Dense.init(rng, width, h, nonlinearity, dec_g))
        width = h
    head = Dense.init(rng, width, input_dim, "identity", head_dec)
    cond = conditioner if conditioner is not None else BetaConditioner()
    return MRVAEModel(enc, mean_head, logvar_head, dec, head, Likelihood(likelihood), cond)


def build_conv_vae(
    image_shape=(1, 28, 28),
    channels=(32, 64),
    latent_dim=16,
    dec_hidden=(256,),
    *,
    rng: RngStream,
    kernel=4,
    likelihood=Likelihood.BERNOULLI,
    nonlinearity="relu",
    gated=True,
    gate_heads=False,
    conditioner: BetaConditioner | None = None,
) -> MRVAEModel:
    """Stride-2 conv encoder with an MLP decoder ending in a stride-1 conv."""
    enc_g = GateActivation.SIGMOID_ENCODER if gated else None
    dec_g = GateActivation.SQRT_EXP_DECODER if gated else None
    head_enc = enc_g if gate_heads else None
    head_dec = dec_g if gate_heads else None
    c, h, w = image_shape
    enc = [Reshape(image_shape)]
    for ch in channels:
        conv = Conv2d.init(rng, c, ch, kernel, stride=2, padding=1, nonlinearity=nonlinearity, gate=enc_g)
        h, w = conv.output_hw(h, w)
        enc.append(conv)
        c = ch
    enc.append(Reshape((-1,)))
    flat = c * h * w
    mean_head = Dense.init(rng, flat, latent_dim, "identity", head_enc)
    logvar_head = Dense.init(rng, flat, latent_dim, "identity", head_enc)
    dec, width = [], latent_dim
    for hid in dec_hidden:
        dec.append(Dense.init(rng, width, hid, nonlinearity, dec_g))
        width = hid
    side = image_shape[1] // 4
    feat = 8
    dec.append(Dense.init(rng, width, feat * side * side, nonlinearity, dec_g))
    dec.append(Reshape((feat, side, side)))
    dec.append(Conv2d.init(rng, feat, feat, 3, stride=1, padding=1, nonlinearity=nonlinearity, gate=dec_g))
    dec.append(Reshape((-1,)))
    head = Dense.init(rng, feat * side * side, int(np.prod(image_shape)), "identity", head_dec)
    cond = conditioner if conditioner is not None else BetaConditioner()
    return MRVAEModel(enc, mean_head, logvar_head, dec, head, Likelihood(likelihood), cond)
