"""Rate-distortion sweeps, active units, the constructive gate check and curve diagnostics."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConstructionError, DimensionError, DomainError
from .gates import GateActivation, GateParams, gate_vector
from .linalg import RngStream, SpectrumDecomp, svd
from .linear import optimal_C, optimal_D, optimal_E
from .nn import gaussian_kl

__all__ = [
    "Provenance",
    "RDPoint",
    "RDCurve",
    "rd_sweep",
    "active_units",
    "Theorem1Construction",
    "Theorem1Errors",
    "theorem1_construct",
    "covariance_stack",
    "theorem1_verify",
    "CurveReport",
    "curve_check",
]

_RATE_FLOOR = -1e-9  # closed-form KL may round slightly below zero
LIMITING_GATE_BIAS = -50.0


class Provenance(str, enum.Enum):
    ANALYTIC = "analytic"
    MRVAE = "mrvae"
    BETAVAE_SWEEP = "betavae_sweep"


@dataclass(frozen=True)
class RDPoint:
    beta: float
    rate: float
    distortion: float
    elbo_beta1: float | None = None
    au: int | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        if not self.rate >= _RATE_FLOOR:
            raise DomainError(f"rate must be non-negative, got {self.rate}")
        if not np.isfinite(self.distortion):
            raise DomainError("distortion must be finite")
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "rate", float(max(self.rate, 0.0)))
        object.__setattr__(self, "distortion", float(self.distortion))
        if self.elbo_beta1 is not None:
            object.__setattr__(self, "elbo_beta1", float(self.elbo_beta1))
        if self.au is not None:
            object.__setattr__(self, "au", int(self.au))


@dataclass(frozen=True)
class RDCurve:
    points: tuple
    provenance: Provenance = Provenance.MRVAE

    def __post_init__(self):
        pts = tuple(self.points)
        betas = [p.beta for p in pts]
        if any(b1 >= b2 for b1, b2 in zip(betas, betas[1:])):
            raise DomainError("curve betas must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    def __len__(self):
        return len(self.points)

    @property
    def betas(self) -> np.ndarray:
        return np.array([p.beta for p in self.points])

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def distortions(self) -> np.ndarray:
        return np.array([p.distortion for p in self.points])


def _encode_all(model, data, beta, chunk):
    means, logvars = [], []
    for start in range(0, data.shape[0], chunk):
        m, lv = model.encode(data[start:start + chunk], beta)
        means.append(m)
        logvars.append(lv)
    return np.concatenate(means), np.concatenate(logvars)


def rd_sweep(
    model,
    betas,
    data,
    rng: RngStream,
    mc_samples: int = 16,
    *,
    au_threshold: float | None = 0.01,
    provenance: Provenance = Provenance.MRVAE,
    chunk: int = 1000,
) -> RDCurve:
    """Rate (closed form) and distortion (Monte Carlo) at each weight in ``betas``.

    ``model`` needs ``encode(x, beta) -> (mean, logvar)`` and
    ``decode_nll(x, z, beta) -> per-row nll``. Noise for weight ``i`` comes
    from ``rng.split(f"beta-{i}")`` so results do not depend on sweep order.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise DomainError("rd_sweep needs a non-empty dataset")
    if mc_samples < 1:
        raise DomainError("mc_samples must be at least 1")
    points = []
    for i, beta in enumerate(sorted(float(b) for b in betas)):
        mean, logvar = _encode_all(model, data, beta, chunk)
        rate = float(np.mean(gaussian_kl(mean, logvar)))
        std = np.exp(0.5 * np.clip(logvar, -10.0, 10.0))
        sub = rng.split(f"beta-{i}")
        total = 0.0
        for _ in range(mc_samples):
            z = mean + std * sub.normal(mean.shape)
            for start in range(0, data.shape[0], chunk):
                sl = slice(start, start + chunk)
                total += float(np.sum(model.decode_nll(data[sl], z[sl], beta)))
        dist = total / (mc_samples * data.shape[0])
        au = None
        if au_threshold is not None:
            au = int(np.sum(np.var(mean, axis=0) > au_threshold))
        points.append(RDPoint(beta, rate, dist, elbo_beta1=rate + dist, au=au))
    return RDCurve(points, provenance)


def active_units(model, data, beta: float, threshold: float = 0.01) -> int:
    """Number of latent dims whose posterior mean varies across ``data`` by more than ``threshold``."""
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise DomainError("active_units needs a non-empty dataset")
    mean, _ = _encode_all(model, data, beta, 1000)
    return int(np.sum(np.var(mean, axis=0) > threshold))


@dataclass(frozen=True)
class _GatedLayer:
    base: np.ndarray
    gate: GateParams

    def at(self, eta: float) -> np.ndarray:
        g = gate_vector(self.gate, eta)
        if self.base.ndim == 1:
            return g * self.base
        return g[:, None] * self.base


@dataclass(frozen=True)
class Theorem1Construction:
    """Hand-set gated stacks whose outputs reproduce the linear-VAE responses.

    Encoder and covariance stacks are built for the fixed ``decoder``; the
    decoder stack reproduces the pPCA decoder of ``spectrum``. All gates read
    the raw log weight.
    """

    enc1: _GatedLayer
    enc2: _GatedLayer
    cov1: _GatedLayer
    cov2: _GatedLayer
    dec1: _GatedLayer
    dec2: _GatedLayer
    spectrum: SpectrumDecomp
    decoder: np.ndarray
    decoder_svd: tuple
    latent_dim: int
    limiting: bool = False

    def response(self, beta: float):
        """(encoder weight, covariance diagonal, decoder weight) at ``beta``."""
        eta = float(np.log(beta))
        e = self.enc2.at(eta) @ self.enc1.at(eta)
        c = self.cov2.at(eta) * self.cov1.at(eta)
        dw = self.dec2.at(eta) @ self.dec1.at(eta)
        return e, c, dw


def _gate(w, b, kind=GateActivation.SIGMOID_ENCODER) -> GateParams:
    return GateParams(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64), kind)


def covariance_stack(column_norms_sq):
    """Two gated layers whose product is ``beta / (column_norms_sq + beta)``.

    A column with zero norm gets base 2 and a constant 1/2 gate, so its
    response is 1 for every weight.
    """
    dtd = np.asarray(column_norms_sq, dtype=np.float64)
    dead = dtd == 0
    zeros = np.zeros(dtd.size)
    cov1 = _GatedLayer(np.where(dead, 2.0, 1.0),
                       _gate(np.where(dead, 0.0, 1.0), np.where(dead, 0.0, -np.log(np.where(dead, 1.0, dtd)))))
    cov2 = _GatedLayer(np.full(dtd.size, 2.0), _gate(zeros, zeros))
    return cov1, cov2


def theorem1_construct(spectrum: SpectrumDecomp, decoder, k: int, *, limiting: bool = False) -> Theorem1Construction:
    """Build gate parameters that reproduce the response functions exactly.

    ``limiting=True`` replaces the identity gate on the second decoder layer
    with a decoder-type gate at bias ``LIMITING_GATE_BIAS``, whose value
    differs from 1 by about ``exp(bias) / 2``.
    """
    dw = np.asarray(decoder, dtype=np.float64)
    d = spectrum.source_dim
    if dw.shape != (d, k):
        raise DimensionError(f"decoder shape {dw.shape} != ({d}, {k})")
    if k > d:
        raise DimensionError(f"latent dim {k} exceeds data dim {d}")

    left, sing, right = svd(dw)
    if np.any(sing <= 0):
        raise ConstructionError("decoder has a zero singular value; encoder gate bias log(s) is undefined")
    ones, zeros = np.ones(k), np.zeros(k)
    enc1 = _GatedLayer(left.T, _gate(-ones, 2.0 * np.log(sing)))
    enc2 = _GatedLayer(2.0 * right / sing, _gate(zeros, zeros))

    cov1, cov2 = covariance_stack(np.sum(dw * dw, axis=0))

    lam = spectrum.eigvals[:k]
    if np.any(lam <= 0):
        raise ConstructionError("decoder stack needs the top-k eigenvalues to be positive")
    dec1 = _GatedLayer(np.eye(k), _gate(ones, -np.log(lam), GateActivation.SQRT_EXP_DECODER))
    dec2_base = spectrum.eigvecs[:, :k] * np.sqrt(lam)
    if limiting:
        dec2_gate = _gate(np.zeros(d), np.full(d, LIMITING_GATE_BIAS), GateActivation.SQRT_EXP_DECODER)
    else:
        dec2_gate = _gate(np.zeros(d), np.zeros(d), GateActivation.IDENTITY)
    dec2 = _GatedLayer(dec2_base, dec2_gate)
    return Theorem1Construction(enc1, enc2, cov1, cov2, dec1, dec2, spectrum, dw,
                                (left, sing, right), k, limiting)


class Theorem1Errors(NamedTuple):
    encoder: float
    covariance: float
    decoder: float

    @property
    def max(self) -> float:
        return max(self)


def theorem1_verify(construction: Theorem1Construction, beta_grid) -> Theorem1Errors:
    """Largest elementwise gap between constructed and analytic responses over ``beta_grid``."""
    errs = np.zeros(3)
    for beta in beta_grid:
        beta = float(beta)
        if not beta > 0:
            raise DomainError(f"beta must be positive, got {beta}")
        e, c, dw = construction.response(beta)
        ref_e = optimal_E(construction.decoder, beta)
        ref_c = optimal_C(construction.decoder, beta)
        ref_d = optimal_D(construction.spectrum, beta, construction.latent_dim)
        errs = np.maximum(errs, [np.max(np.abs(e - ref_e)), np.max(np.abs(c - ref_c)),
                                 np.max(np.abs(dw - ref_d))])
    return Theorem1Errors(*map(float, errs))


@dataclass(frozen=True)
class CurveReport:
    violations: tuple  # (i, i + 1, reason)
    noise_tol: float

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "curve monotone"
        return "\n".join(f"pair ({i}, {j}): {why}" for i, j, why in self.violations)


def curve_check(curve: RDCurve, noise_tol: float = 0.0) -> CurveReport:
    """Flag adjacent pairs where rate rises or distortion falls with beta beyond ``noise_tol``."""
    if len(curve) < 2:
        raise DomainError("curve_check needs at least two points")
    tol = 0.0 if curve.provenance is Provenance.ANALYTIC else float(noise_tol)
    bad = []
    pts = curve.points
    for i in range(len(pts) - 1):
        p, q = pts[i], pts[i + 1]
        why = []
        if q.rate > p.rate + tol:
            why.append(f"rate rises {p.rate:.6g} -> {q.rate:.6g}")
        if q.distortion < p.distortion - tol:
            why.append(f"distortion falls {p.distortion:.6g} -> {q.distortion:.6g}")
        if why:
            bad.append((i, i + 1, "; ".join(why)))
    return CurveReport(tuple(bad), tol)
