"""Datasets, run configuration, RD-curve CSV files and checkpoints."""

from __future__ import annotations

import contextlib
import csv
import gzip
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, FormatError
from .evaluation import Provenance, RDCurve, RDPoint
from .gates import BetaConditioner, GateActivation, GateParams
from .linalg import RngStream, SpectrumDecomp, random_orthogonal
from .linear_gated import GatedLinearVAE
from .nn import Adam, Conv2d, Dense, Likelihood, MRVAEModel, Reshape

__all__ = [
    "IDX_IMAGE_MAGIC",
    "load_idx",
    "write_idx",
    "SyntheticGaussian",
    "IdxImages",
    "DatasetSpec",
    "load_dataset",
    "make_synthetic",
    "RD_CSV_HEADER",
    "emit_rd_csv",
    "read_rd_csv",
    "atomic_write",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "ModelTopology",
    "TrainSection",
    "RunConfig",
    "load_config",
    "config_hash",
]

IDX_IMAGE_MAGIC = 0x00000803
_HEADER = struct.Struct(">IIII")
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- IDX images

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def load_idx(path, binarize_threshold: float | None = 0.5, max_items: int | None = None) -> np.ndarray:
    """Read an IDX image file (optionally gzipped) into an (n, rows * cols) float matrix.

    Pixels are scaled to [0, 1]; when ``binarize_threshold`` is given, values
    above it become 1 and the rest 0.
    """
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise FormatError(f"{path}: file ends at byte offset {len(raw)} inside the magic number")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}")
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: header truncated at byte offset {len(raw)} (need {_HEADER.size})")
    _, n, rows, cols = _HEADER.unpack_from(raw, 0)
    if max_items is not None:
        n = min(n, int(max_items))
    need = n * rows * cols
    have = len(raw) - _HEADER.size
    if have < need:
        raise FormatError(
            f"{path}: payload truncated at byte offset {len(raw)}; "
            f"expected {need} bytes after the {_HEADER.size}-byte header"
        )
    pix = np.frombuffer(raw, dtype=np.uint8, count=need, offset=_HEADER.size)
    data = pix.reshape(n, rows * cols).astype(np.float64) / 255.0
    if binarize_threshold is not None:
        if not 0.0 <= binarize_threshold <= 1.0:
            raise ConfigError(f"binarize_threshold must lie in [0, 1], got {binarize_threshold}")
        data = (data > binarize_threshold).astype(np.float64)
    return data


def write_idx(path, images, compress: bool | None = None) -> None:
    """Write uint8 images of shape (n, rows, cols) as an IDX file (gzip if the name ends in .gz)."""
    imgs = np.asarray(images)
    if imgs.ndim != 3 or imgs.dtype != np.uint8:
        raise FormatError("write_idx needs a uint8 array of shape (n, rows, cols)")
    payload = _HEADER.pack(IDX_IMAGE_MAGIC, *imgs.shape) + imgs.tobytes()
    compress = str(path).endswith(".gz") if compress is None else compress
    if compress:
        payload = gzip.compress(payload, mtime=0)
    atomic_write(path, payload)


# ---------------------------------------------------------------- datasets

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SyntheticGaussian(_Strict):
    kind: Literal["synthetic_gaussian"] = "synthetic_gaussian"
    dim: int = Field(gt=0)
    spectrum: list[float]
    n_samples: int = Field(gt=0)
    seed: int = 0

    @field_validator("spectrum")
    @classmethod
    def _spectrum_ok(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("spectrum entries must be positive")
        if any(b > a for a, b in zip(v, v[1:])):
            raise ValueError("spectrum must be sorted in descending order")
        return v

    @model_validator(mode="after")
    def _dim_matches(self):
        if len(self.spectrum) != self.dim:
            raise ValueError(f"spectrum has {len(self.spectrum)} entries, dim is {self.dim}")
        return self


class IdxImages(_Strict):
    kind: Literal["idx_images"] = "idx_images"
    path: str
    binarize_threshold: float = Field(default=0.5, ge=0.0, le=1.0)
    max_items: int | None = Field(default=None, gt=0)


DatasetSpec = Union[SyntheticGaussian, IdxImages]


def make_synthetic(spec: SyntheticGaussian) -> tuple[np.ndarray, SpectrumDecomp]:
    """Samples from ``N(0, U diag(spectrum) U^T)`` and the exact generating decomposition."""
    rng = RngStream(spec.seed)
    lam = np.asarray(spec.spectrum, dtype=np.float64)
    u = random_orthogonal(rng.split("basis"), spec.dim)
    z = rng.split("samples").normal((spec.n_samples, spec.dim))
    data = (z * np.sqrt(lam)) @ u.T
    return data, SpectrumDecomp(u, lam, spec.dim)


def load_dataset(spec, base_dir=None) -> tuple[np.ndarray, SpectrumDecomp | None]:
    """Materialise a dataset spec; relative IDX paths resolve against ``base_dir``."""
    if isinstance(spec, SyntheticGaussian):
        return make_synthetic(spec)
    path = Path(spec.path)
    if not path.is_absolute() and base_dir is not None:
        path = Path(base_dir) / path
    return load_idx(path, spec.binarize_threshold, spec.max_items), None


# ---------------------------------------------------------------- files

def atomic_write(path, data) -> None:
    """Write ``data`` (str or bytes) to a temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(OSError):
            os.unlink(tmp)
        raise


RD_CSV_HEADER = ("beta", "rate", "distortion", "elbo", "au")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.9g}"


def emit_rd_csv(curve: RDCurve, path) -> None:
    lines = [",".join(RD_CSV_HEADER)]
    for p in curve.points:
        au = "" if p.au is None else str(int(p.au))
        lines.append(",".join([_fmt(p.beta), _fmt(p.rate), _fmt(p.distortion), _fmt(p.elbo_beta1), au]))
    try:
        atomic_write(path, "\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write RD curve to {path}: {exc}") from exc


def read_rd_csv(path, provenance: Provenance = Provenance.MRVAE) -> RDCurve:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != RD_CSV_HEADER:
        raise FormatError(f"{path}: expected header {','.join(RD_CSV_HEADER)}")
    points = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(RD_CSV_HEADER):
            raise FormatError(f"{path}:{lineno}: expected {len(RD_CSV_HEADER)} fields, got {len(row)}")
        beta, rate, dist, elbo, au = row
        points.append(RDPoint(float(beta), float(rate), float(dist),
                              float(elbo) if elbo else None, int(au) if au else None))
    return RDCurve(tuple(points), provenance)


# ---------------------------------------------------------------- checkpoints

def _hex(arr) -> dict:
    a = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(a.shape), "data": a.tobytes().hex()}


def _unhex(obj) -> np.ndarray:
    try:
        buf = bytes.fromhex(obj["data"])
        return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(obj["shape"])
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"malformed array entry: {exc}") from exc


def _gate_desc(gate):
    return None if gate is None else gate.activation.value


def _layer_desc(layer):
    if isinstance(layer, Dense):
        return {"kind": "dense", "shape": list(layer.W.shape), "nonlinearity": layer.nonlinearity,
                "gate": _gate_desc(layer.gate)}
    if isinstance(layer, Conv2d):
        return {"kind": "conv2d", "shape": list(layer.W.shape), "stride": layer.stride,
                "padding": layer.padding, "nonlinearity": layer.nonlinearity,
                "gate": _gate_desc(layer.gate)}
    return {"kind": "reshape", "shape": list(layer.shape)}


def _cond_desc(cond):
    return None if cond is None else [cond.a, cond.b]


def _topology(model) -> dict:
    if isinstance(model, GatedLinearVAE):
        return {"kind": "gated_linear", "data_dim": model.data_dim, "latent_dim": model.latent_dim,
                "gates": {k: g.activation.value for k, g in model.gates.items()},
                "conditioner": _cond_desc(model.conditioner)}
    return {
        "kind": "mrvae",
        "encoder": [_layer_desc(l) for l in model.encoder],
        "mean_head": _layer_desc(model.mean_head),
        "logvar_head": _layer_desc(model.logvar_head),
        "decoder": [_layer_desc(l) for l in model.decoder],
        "decoder_head": _layer_desc(model.decoder_head),
        "likelihood": model.likelihood.value,
        "conditioner": _cond_desc(model.conditioner),
    }


def _empty_gate(size, kind):
    if kind is None:
        return None
    return GateParams(np.zeros(size), np.zeros(size), GateActivation(kind))


def _build_layer(desc):
    kind = desc["kind"]
    if kind == "reshape":
        return Reshape(tuple(desc["shape"]))
    shape = tuple(desc["shape"])
    gate = _empty_gate(shape[0], desc.get("gate"))
    if kind == "dense":
        return Dense(np.zeros(shape), np.zeros(shape[0]), desc["nonlinearity"], gate)
    if kind == "conv2d":
        return Conv2d(np.zeros(shape), np.zeros(shape[0]), desc["stride"], desc["padding"],
                      desc["nonlinearity"], gate)
    raise FormatError(f"unknown layer kind {kind!r}")


def _cond(desc):
    return None if desc is None else BetaConditioner(*desc)


def _skeleton(topo: dict):
    if topo["kind"] == "gated_linear":
        d, k = topo["data_dim"], topo["latent_dim"]
        sizes = {"enc1": k, "enc2": k, "cov1": k, "cov2": k, "dec1": k, "dec2": d}
        gates = {n: _empty_gate(sizes[n], a) for n, a in topo["gates"].items()}
        return GatedLinearVAE(np.zeros((k, d)), np.zeros((k, k)), np.zeros(k), np.zeros(k),
                              np.zeros((k, k)), np.zeros((d, k)), gates, np.zeros(d),
                              _cond(topo["conditioner"]))
    if topo["kind"] != "mrvae":
        raise FormatError(f"unknown model kind {topo['kind']!r}")
    return MRVAEModel(
        [_build_layer(l) for l in topo["encoder"]],
        _build_layer(topo["mean_head"]),
        _build_layer(topo["logvar_head"]),
        [_build_layer(l) for l in topo["decoder"]],
        _build_layer(topo["decoder_head"]),
        Likelihood(topo["likelihood"]),
        _cond(topo["conditioner"]),
    )


def _model_arrays(model) -> dict:
    arrays = dict(model.params())
    if isinstance(model, GatedLinearVAE):
        arrays["mean"] = model.mean
    return arrays


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    model: object
    optimizer: Adam | None = None
    step: int = 0
    config_hash: str | None = None


def config_hash(config) -> str:
    """SHA-256 of the canonical JSON form of a config (dict or pydantic model)."""
    if isinstance(config, BaseModel):
        config = config.model_dump(mode="json")
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(path, model, optimizer: Adam | None = None, step: int = 0, config=None) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "topology": _topology(model),
        "params": {k: _hex(v) for k, v in _model_arrays(model).items()},
        "step": int(step),
        "config_hash": None if config is None else config_hash(config),
        "optimizer": None,
    }
    if optimizer is not None:
        st = optimizer.state_dict()
        doc["optimizer"] = {
            "t": st["t"], "lr": st["lr"], "beta1": st["beta1"], "beta2": st["beta2"], "eps": st["eps"],
            "m": {k: _hex(v) for k, v in st["m"].items()},
            "v": {k: _hex(v) for k, v in st["v"].items()},
        }
    atomic_write(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: cannot read checkpoint: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('format_version')!r}")
    model = _skeleton(doc["topology"])
    target = _model_arrays(model)
    stored = doc["params"]
    if set(stored) != set(target):
        raise FormatError(f"{path}: parameter names do not match the topology")
    for name, arr in target.items():
        val = _unhex(stored[name])
        if val.shape != arr.shape:
            raise FormatError(f"{path}: {name} has shape {val.shape}, topology wants {arr.shape}")
        arr[...] = val
    opt = None
    if doc.get("optimizer") is not None:
        o = doc["optimizer"]
        opt = Adam()
        opt.load_state_dict({
            "t": o["t"], "lr": o["lr"], "beta1": o["beta1"], "beta2": o["beta2"], "eps": o["eps"],
            "m": {k: _unhex(v) for k, v in o["m"].items()},
            "v": {k: _unhex(v) for k, v in o["v"].items()},
        })
    return Checkpoint(model=model, optimizer=opt, step=doc.get("step", 0), config_hash=doc.get("config_hash"))


# ---------------------------------------------------------------- run config

class ModelTopology(_Strict):
    kind: Literal["mlp", "conv", "gated_linear"] = "mlp"
    enc_hidden: list[int] = [256]
    dec_hidden: list[int] = [256]
    latent_dim: int = Field(default=16, gt=0)
    channels: list[int] = [32, 64]
    likelihood: Literal["bernoulli", "gaussian"] = "bernoulli"
    nonlinearity: Literal["relu", "tanh"] = "relu"
    gated: bool = True
    encoder_gate: Literal["sigmoid", "film", "identity"] = "sigmoid"
    decoder_gate: Literal["sqrt_exp", "film", "identity"] = "sqrt_exp"


class TrainSection(_Strict):
    epochs: int = Field(default=20, gt=0)
    batch_size: int = Field(default=100, gt=0)
    lr: float = Field(default=1e-3, ge=0)
    beta_range: tuple[float, float] = (0.01, 10.0)
    granularity: Literal["batch", "example"] = "batch"
    normalize: bool = True
    cosine: bool = False
    schedule: Literal["constant", "linear_anneal"] = "constant"
    beta: float = Field(default=1.0, gt=0)
    warmup_fraction: float = Field(default=0.3, gt=0, le=1)
    steps: int = Field(default=20000, gt=0)
    eta_samples: int = Field(default=64, gt=0)

    @field_validator("beta_range")
    @classmethod
    def _range_ok(cls, v):
        if not 0 < v[0] < v[1]:
            raise ValueError("beta_range needs 0 < a < b")
        return v


class SweepSection(_Strict):
    betas: list[float] | None = None
    n_betas: int = Field(default=10, gt=1)
    beta_min: float = Field(default=0.01, gt=0)
    beta_max: float = Field(default=10.0, gt=0)
    mc_samples: int = Field(default=16, gt=0)
    au_threshold: float = Field(default=0.01, ge=0)

    def grid(self) -> list[float]:
        if self.betas is not None:
            return sorted(self.betas)
        return list(np.geomspace(self.beta_min, self.beta_max, self.n_betas))


class Theorem1Section(_Strict):
    data_dim: int = Field(default=8, gt=0)
    latent_dim: int = Field(default=4, gt=0)
    n_betas: int = Field(default=20, gt=1)
    beta_min: float = Field(default=0.01, gt=0)
    beta_max: float = Field(default=10.0, gt=0)
    limiting: bool = False
    tolerance: float = Field(default=1e-9, gt=0)


class GradcheckSection(_Strict):
    input_dim: int = Field(default=20, gt=0)
    hidden: int = Field(default=16, gt=0)
    latent_dim: int = Field(default=4, gt=0)
    batch: int = Field(default=5, gt=0)
    step: float = Field(default=1e-4, gt=0)
    tolerance: float = Field(default=1e-5, gt=0)


class OutputSection(_Strict):
    checkpoint: str = "model.ckpt.json"
    curve: str = "rd_curve.csv"
    history: str = "history.csv"


class RunConfig(_Strict):
    experiment: Literal["train-mrvae", "train-betavae", "sweep-rd", "verify-theorem1", "gradcheck", "linear-rd"]
    seed: int = 0
    dataset: DatasetSpec | None = Field(default=None, discriminator="kind")
    model: ModelTopology = ModelTopology()
    train: TrainSection = TrainSection()
    sweep: SweepSection = SweepSection()
    theorem1: Theorem1Section = Theorem1Section()
    gradcheck: GradcheckSection = GradcheckSection()
    checkpoint: str | None = None
    outputs: OutputSection = OutputSection()

    @model_validator(mode="after")
    def _needs_data(self):
        if self.experiment in ("train-mrvae", "train-betavae", "sweep-rd", "linear-rd") and self.dataset is None:
            raise ValueError(f"experiment {self.experiment} needs a dataset section")
        if self.experiment == "sweep-rd" and self.checkpoint is None:
            raise ValueError("sweep-rd needs a checkpoint path")
        return self


def load_config(path) -> RunConfig:
    """Parse and validate a JSON run config; unknown keys are rejected."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
