"""Two-layer gated linear VAE.

Encoder weight, diagonal covariance and decoder weight are each the product
of two gated layers:

    E(beta) = G_e2 E2 G_e1 E1        (k x k) (k x d)
    C(beta) = g_c2 c2 g_c1 c1        elementwise, length k
    D(beta) = G_d2 D2 G_d1 D1        (d x k) (k x k)

where each ``G`` is a diagonal gate produced from the (optionally
standardised) log KL weight. Covariance bases are stored as logs so they
stay positive under gradient descent. The objective is the closed-form
linear-VAE loss, so training needs only the data second moment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gates import (
    BetaConditioner,
    GateActivation,
    GateParams,
    activation_derivative,
    gate_vector,
)
from .linalg import RngStream
from .linear import DatasetMoments, LinearVAEParams, distortion_closed_form, kl_closed_form

__all__ = ["GatedLinearVAE", "LAYER_NAMES"]

LAYER_NAMES = ("enc1", "enc2", "cov1", "cov2", "dec1", "dec2")
LOG_2PI = np.log(2.0 * np.pi)


@dataclass
class GatedLinearVAE:
    enc1: np.ndarray  # k x d
    enc2: np.ndarray  # k x k
    cov1_log: np.ndarray  # k
    cov2_log: np.ndarray  # k
    dec1: np.ndarray  # k x k
    dec2: np.ndarray  # d x k
    gates: dict  # layer name -> GateParams
    mean: np.ndarray
    conditioner: BetaConditioner | None = None

    @property
    def latent_dim(self) -> int:
        return self.enc1.shape[0]

    @property
    def data_dim(self) -> int:
        return self.enc1.shape[1]

    @classmethod
    def init(
        cls,
        data_dim: int,
        latent_dim: int,
        rng: RngStream,
        mean=None,
        conditioner: BetaConditioner | None = None,
        encoder_gate=GateActivation.SIGMOID_ENCODER,
        decoder_gate=GateActivation.SQRT_EXP_DECODER,
    ) -> "GatedLinearVAE":
        d, k = data_dim, latent_dim
        gates = {
            "enc1": GateParams.init(k, encoder_gate),
            "enc2": GateParams.init(k, encoder_gate),
            "cov1": GateParams.init(k, encoder_gate),
            "cov2": GateParams.init(k, encoder_gate),
            "dec1": GateParams.init(k, decoder_gate),
            "dec2": GateParams.init(d, decoder_gate),
        }
        # Each layer pair starts near a product of scale ~1 after the 0.5 gates.
        return cls(
            enc1=rng.normal((k, d)) / np.sqrt(d),
            enc2=np.eye(k) * 2.0 + 0.1 * rng.normal((k, k)),
            cov1_log=np.full(k, np.log(2.0)),
            cov2_log=np.full(k, np.log(2.0)),
            dec1=np.eye(k) * 2.0 + 0.1 * rng.normal((k, k)),
            dec2=rng.normal((d, k)) * 2.0 / np.sqrt(k),
            gates=gates,
            mean=np.zeros(d) if mean is None else np.asarray(mean, dtype=np.float64),
            conditioner=conditioner,
        )

    def gate_input(self, beta):
        eta = np.log(np.asarray(beta, dtype=np.float64))
        return eta if self.conditioner is None else self.conditioner.normalize(eta)

    def params(self) -> dict[str, np.ndarray]:
        out = {
            "enc1": self.enc1, "enc2": self.enc2, "cov1_log": self.cov1_log,
            "cov2_log": self.cov2_log, "dec1": self.dec1, "dec2": self.dec2,
        }
        for name, gp in self.gates.items():
            for k, v in gp.arrays().items():
                out[f"{name}.gate.{k}"] = v
        return out

    def _gates(self, eta):
        return {name: gate_vector(gp, eta) for name, gp in self.gates.items()}

    def response(self, beta):
        """(E, C, D) produced by the hypernetwork at a scalar ``beta``."""
        g = self._gates(self.gate_input(beta))
        e = g["enc2"][:, None] * (self.enc2 @ (g["enc1"][:, None] * self.enc1))
        c = g["cov2"] * np.exp(self.cov2_log) * g["cov1"] * np.exp(self.cov1_log)
        dw = g["dec2"][:, None] * (self.dec2 @ (g["dec1"][:, None] * self.dec1))
        return e, c, dw

    def linear_params(self, beta) -> LinearVAEParams:
        e, c, dw = self.response(beta)
        return LinearVAEParams(e, c, dw, self.mean)

    def rate_distortion(self, moments: DatasetMoments, beta) -> tuple[float, float]:
        p = self.linear_params(beta)
        return kl_closed_form(p, moments), distortion_closed_form(p, moments)

    def objective_and_grads(self, second_moment, beta):
        """Closed-form ``distortion + beta * rate`` and its gradient for every parameter.

        ``second_moment`` is ``E[(x - mean)(x - mean)^T]`` over the data.
        ``beta`` may be a scalar or a vector of KL weights, in which case loss,
        rate, distortion and gradients are averaged over the weights.
        """
        s = second_moment
        betas = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        n_b = betas.size
        eta = self.gate_input(betas)
        g = self._gates(eta)  # name -> (M, size)
        d, k = self.data_dim, self.latent_dim
        w = 1.0 / n_b

        p1 = g["enc1"][:, :, None] * self.enc1
        q1 = np.einsum("ij,mjd->mid", self.enc2, p1)
        e = g["enc2"][:, :, None] * q1
        c1, c2 = np.exp(self.cov1_log), np.exp(self.cov2_log)
        c = g["cov2"] * c2 * g["cov1"] * c1
        p3 = g["dec1"][:, :, None] * self.dec1
        q3 = np.einsum("ij,mjk->mik", self.dec2, p3)
        dw = g["dec2"][:, :, None] * q3

        resid = np.eye(d) - dw @ e
        rs = resid @ s
        es = e @ s
        dtd = np.sum(dw * dw, axis=1)
        rate = 0.5 * (-np.sum(np.log(c), axis=1) + np.sum(es * e, axis=(1, 2)) + np.sum(c, axis=1) - k)
        dist = 0.5 * (np.sum(dtd * c, axis=1) + np.sum(rs * resid, axis=(1, 2))) + 0.5 * d * LOG_2PI
        loss = float(np.mean(dist + betas * rate))

        bcol = betas[:, None, None]
        g_e = w * (-np.transpose(dw, (0, 2, 1)) @ rs + bcol * es)
        g_d = w * (dw * c[:, None, :] - rs @ np.transpose(e, (0, 2, 1)))
        g_c = w * (0.5 * dtd + 0.5 * betas[:, None] * (1.0 - 1.0 / c))

        grads = {}
        gate_grads = {}
        gate_grads["enc2"] = np.sum(g_e * q1, axis=2)
        d_q1 = g["enc2"][:, :, None] * g_e
        grads["enc2"] = np.einsum("mik,mjk->ij", d_q1, p1)
        d_p1 = np.einsum("ji,mjd->mid", self.enc2, d_q1)
        gate_grads["enc1"] = np.sum(d_p1 * self.enc1, axis=2)
        grads["enc1"] = np.sum(g["enc1"][:, :, None] * d_p1, axis=0)
        # covariance bases are stored as logs
        gate_grads["cov2"] = g_c * c2 * g["cov1"] * c1
        gate_grads["cov1"] = g_c * g["cov2"] * c2 * c1
        grads["cov2_log"] = np.sum(g_c * c, axis=0)
        grads["cov1_log"] = grads["cov2_log"].copy()
        gate_grads["dec2"] = np.sum(g_d * q3, axis=2)
        d_q3 = g["dec2"][:, :, None] * g_d
        grads["dec2"] = np.einsum("mik,mjk->ij", d_q3, p3)
        d_p3 = np.einsum("ji,mjk->mik", self.dec2, d_q3)
        gate_grads["dec1"] = np.sum(d_p3 * self.dec1, axis=2)
        grads["dec1"] = np.sum(g["dec1"][:, :, None] * d_p3, axis=0)

        for name, gp in self.gates.items():
            if gp.shift_hyper is not None:
                raise NotImplementedError("FiLM gates are not supported in the linear model")
            x = np.multiply.outer(eta, gp.w_hyper) + gp.b_hyper
            d_aff = gate_grads[name] * activation_derivative(gp.activation, x)
            grads[f"{name}.gate.w_hyper"] = np.sum(d_aff * eta[:, None], axis=0)
            grads[f"{name}.gate.b_hyper"] = np.sum(d_aff, axis=0)
        return loss, float(np.mean(rate)), float(np.mean(dist)), grads

    # Protocol shared with MRVAEModel (used by rd_sweep / active_units).
    def encode(self, x, beta):
        e, c, _ = self.response(beta)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        mean = (x - self.mean) @ e.T
        logvar = np.broadcast_to(np.log(c), mean.shape).copy()
        return mean, logvar

    def decode_nll(self, x, z, beta):
        _, _, dw = self.response(beta)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        resid = x - self.mean - z @ dw.T
        return 0.5 * np.sum(resid * resid, axis=-1) + 0.5 * self.data_dim * LOG_2PI
