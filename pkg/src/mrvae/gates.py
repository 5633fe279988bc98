"""Beta-conditioned gating of layer pre-activations.

Each gated layer owns two vectors ``w_hyper`` and ``b_hyper`` (one entry per
output unit or channel). For a log KL weight ``eta`` the gate is
``act(w_hyper * eta + b_hyper)`` and multiplies the layer's pre-activations,
which is the same as row-scaling the weight matrix and bias.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DomainError

__all__ = [
    "GateActivation",
    "GateParams",
    "GateGrads",
    "BetaConditioner",
    "activation_encoder",
    "activation_decoder",
    "activation_derivative",
    "gate_vector",
    "effective_weight",
    "apply_gate_preactivation",
    "conv_gate",
    "gate_backward",
]


class GateActivation(str, enum.Enum):
    SIGMOID_ENCODER = "sigmoid"
    SQRT_EXP_DECODER = "sqrt_exp"
    FILM = "film"
    IDENTITY = "identity"


def activation_encoder(x):
    """Logistic sigmoid, used for encoder gates."""
    return expit(x)


def activation_decoder(x):
    """``sqrt(max(0, 1 - e^x))``, used for decoder gates; exactly 0 for ``x >= 0``."""
    return np.sqrt(np.maximum(0.0, -np.expm1(x)))


def activation_derivative(kind: GateActivation, x):
    """Derivative of the gate activation at ``x`` (0 on the flat part of the decoder gate)."""
    x = np.asarray(x, dtype=np.float64)
    if kind is GateActivation.SIGMOID_ENCODER:
        s = expit(x)
        return s * (1.0 - s)
    if kind is GateActivation.SQRT_EXP_DECODER:
        out = np.zeros_like(x)
        live = x < 0
        xl = x[live]
        out[live] = -np.exp(xl) / (2.0 * np.sqrt(-np.expm1(xl)))
        return out
    if kind is GateActivation.FILM:
        return np.ones_like(x)
    return np.zeros_like(x)


def _activate(kind: GateActivation, x):
    if kind is GateActivation.SIGMOID_ENCODER:
        return activation_encoder(x)
    if kind is GateActivation.SQRT_EXP_DECODER:
        return activation_decoder(x)
    if kind is GateActivation.FILM:
        return np.asarray(x, dtype=np.float64)
    return np.ones_like(np.asarray(x, dtype=np.float64))


@dataclass
class GateParams:
    """Hypernetwork vectors for one layer.

    ``shift_hyper`` is only used by the FiLM ablation, whose additive shift is
    ``shift_hyper * eta``.
    """

    w_hyper: np.ndarray
    b_hyper: np.ndarray
    activation: GateActivation = GateActivation.SIGMOID_ENCODER
    shift_hyper: np.ndarray | None = None

    def __post_init__(self):
        self.activation = GateActivation(self.activation)
        self.w_hyper = np.asarray(self.w_hyper, dtype=np.float64)
        self.b_hyper = np.asarray(self.b_hyper, dtype=np.float64)
        if self.w_hyper.shape != self.b_hyper.shape or self.w_hyper.ndim != 1:
            raise DimensionError("w_hyper and b_hyper must be vectors of equal length")
        if self.activation is GateActivation.FILM:
            if self.shift_hyper is None:
                self.shift_hyper = np.zeros_like(self.w_hyper)
            self.shift_hyper = np.asarray(self.shift_hyper, dtype=np.float64)
            if self.shift_hyper.shape != self.w_hyper.shape:
                raise DimensionError("shift_hyper must match w_hyper in length")
        elif self.shift_hyper is not None:
            raise DimensionError("shift_hyper is only meaningful for FiLM gates")

    @property
    def size(self) -> int:
        return self.w_hyper.size

    @property
    def num_params(self) -> int:
        extra = self.size if self.shift_hyper is not None else 0
        return 2 * self.size + extra

    @classmethod
    def init(cls, size: int, activation: GateActivation) -> "GateParams":
        """Beta-independent starting point.

        Sigmoid gates start at 0.5. Decoder gates start at 0.5 as well
        (``b = ln 0.75``): at ``b = 0`` the decoder gate and its gradient are
        both exactly zero and the layer could never switch on. FiLM starts as
        the identity map (scale 1, shift 0).
        """
        activation = GateActivation(activation)
        w = np.zeros(size)
        if activation is GateActivation.SQRT_EXP_DECODER:
            b = np.full(size, np.log(0.75))
        elif activation is GateActivation.FILM:
            b = np.ones(size)
        else:
            b = np.zeros(size)
        return cls(w, b, activation)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"w_hyper": self.w_hyper, "b_hyper": self.b_hyper}
        if self.shift_hyper is not None:
            out["shift_hyper"] = self.shift_hyper
        return out


class GateGrads(NamedTuple):
    d_w_hyper: np.ndarray
    d_b_hyper: np.ndarray
    d_s: np.ndarray
    d_shift_hyper: np.ndarray | None = None


@dataclass(frozen=True)
class BetaConditioner:
    """Fixed standardisation of ``eta = log beta`` for ``eta ~ U[ln a, ln b]``."""

    a: float = 0.01
    b: float = 10.0
    mu: float = field(init=False)
    sigma: float = field(init=False)

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise DomainError(f"need 0 < a < b, got a={self.a}, b={self.b}")
        la, lb = np.log(self.a), np.log(self.b)
        object.__setattr__(self, "mu", 0.5 * (la + lb))
        object.__setattr__(self, "sigma", (lb - la) / np.sqrt(12.0))

    def normalize(self, eta):
        return (np.asarray(eta, dtype=np.float64) - self.mu) / self.sigma

    def normalize_beta(self, beta):
        return self.normalize(np.log(beta))


def _affine(gp: GateParams, eta):
    # scalar eta -> (m,), eta of shape (B,) -> (B, m)
    return np.multiply.outer(np.asarray(eta, dtype=np.float64), gp.w_hyper) + gp.b_hyper


def _shift(gp: GateParams, eta):
    return np.multiply.outer(np.asarray(eta, dtype=np.float64), gp.shift_hyper)


def gate_vector(gp: GateParams, eta):
    """Gate values for input ``eta`` (a scalar or one value per batch row).

    FiLM gates return a ``(scale, shift)`` pair; the others return the scale.
    """
    x = _affine(gp, eta)
    if gp.activation is GateActivation.FILM:
        return x, _shift(gp, eta)
    return _activate(gp.activation, x)


def _split_gate(gp: GateParams, eta):
    g = gate_vector(gp, eta)
    return g if isinstance(g, tuple) else (g, None)


def effective_weight(gp: GateParams, eta: float, w_base, b_base):
    """Row-scaled weight and bias for a single ``eta``."""
    w_base = np.asarray(w_base, dtype=np.float64)
    b_base = np.asarray(b_base, dtype=np.float64)
    if np.ndim(eta) != 0:
        raise DimensionError("effective_weight takes a scalar eta")
    if w_base.shape[0] != gp.size or b_base.shape != (gp.size,):
        raise DimensionError(
            f"gate length {gp.size} does not match weight {w_base.shape} / bias {b_base.shape}"
        )
    scale, shift = _split_gate(gp, eta)
    w = w_base * scale.reshape((-1,) + (1,) * (w_base.ndim - 1))
    b = scale * b_base
    if shift is not None:
        b = b + shift
    return w, b


def apply_gate_preactivation(gate, s, shift=None):
    """``gate * s (+ shift)`` along the last axis."""
    gate = np.asarray(gate, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if gate.shape[-1] != s.shape[-1]:
        raise DimensionError(f"gate length {gate.shape[-1]} != pre-activation length {s.shape[-1]}")
    out = gate * s
    if shift is not None:
        out = out + shift
    return out


def conv_gate(gp: GateParams, eta, channel_preacts):
    """Scale each channel's spatial map by its gate.

    ``channel_preacts`` is (C, H, W) with scalar ``eta`` or (B, C, H, W) with
    ``eta`` scalar or of shape (B,).
    """
    s = np.asarray(channel_preacts, dtype=np.float64)
    axis = 0 if s.ndim == 3 else 1
    if s.shape[axis] != gp.size:
        raise DimensionError(f"gate has {gp.size} channels, pre-activations have {s.shape[axis]}")
    scale, shift = _split_gate(gp, eta)
    if s.ndim == 4 and scale.ndim == 1:
        scale = scale[None, :]
        shift = None if shift is None else shift[None, :]
    scale = scale[..., None, None]
    out = scale * s
    if shift is not None:
        out = out + shift[..., None, None]
    return out


def gate_backward(gp: GateParams, eta, s, upstream) -> GateGrads:
    """Reverse-mode through ``out = gate(eta) * s (+ shift)``.

    ``s`` may be a vector (m,), a batch (B, m), a feature map (C, H, W) or a
    batch of feature maps (B, C, H, W). Hyper-parameter gradients are summed
    over batch and spatial positions.
    """
    s = np.asarray(s, dtype=np.float64)
    up = np.asarray(upstream, dtype=np.float64)
    if s.shape != up.shape:
        raise DimensionError(f"upstream {up.shape} does not match pre-activations {s.shape}")
    eta_arr = np.asarray(eta, dtype=np.float64)
    x = _affine(gp, eta)
    scale, _ = _split_gate(gp, eta)

    spatial = s.ndim in (3, 4)
    if spatial:
        d_gate = np.sum(up * s, axis=(-2, -1))
        up_red = np.sum(up, axis=(-2, -1))
        if s.ndim == 4 and scale.ndim == 1:
            scale_b = scale[None, :, None, None]
        else:
            scale_b = scale[..., None, None]
    else:
        d_gate = up * s
        up_red = up
        scale_b = scale
    d_s = scale_b * up

    # d_gate has shape (m,), (B, m); reduce to per-unit vectors.
    d_aff = d_gate * activation_derivative(gp.activation, x)
    if d_aff.ndim == 2:
        eta_col = eta_arr.reshape(-1, 1) if eta_arr.ndim == 1 else eta_arr
        d_w = np.sum(d_aff * eta_col, axis=0)
        d_b = np.sum(d_aff, axis=0)
    else:
        d_w = d_aff * eta_arr
        d_b = d_aff
    d_shift = None
    if gp.activation is GateActivation.FILM:
        if up_red.ndim == 2:
            eta_col = eta_arr.reshape(-1, 1) if eta_arr.ndim == 1 else eta_arr
            d_shift = np.sum(up_red * eta_col, axis=0)
        else:
            d_shift = up_red * eta_arr
    if gp.activation is GateActivation.IDENTITY:
        d_w = np.zeros_like(gp.w_hyper)
        d_b = np.zeros_like(gp.b_hyper)
    return GateGrads(np.asarray(d_w), np.asarray(d_b), d_s, d_shift)
