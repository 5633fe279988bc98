"""Beta-conditioned variational autoencoders trained over a range of KL weights.

A single gated network learns the whole rate-distortion trade-off by drawing
the KL weight at random during training; small hypernetworks turn
``log beta`` into per-unit gates on every layer.
"""

from .errors import (
    ConfigError,
    ConstructionError,
    DimensionError,
    DomainError,
    FormatError,
    MRVAEError,
    NumericalError,
    StateError,
)
from .evaluation import (
    RDCurve,
    RDPoint,
    active_units,
    curve_check,
    rd_sweep,
    theorem1_construct,
    theorem1_verify,
)
from .gates import BetaConditioner, GateActivation, GateParams
from .linalg import RngStream, SpectrumDecomp, svd, sym_eig
from .linear import DatasetMoments, LinearVAEParams, analytic_rd_curve, analytic_rd_point
from .linear_gated import GatedLinearVAE
from .nn import Adam, Likelihood, MRVAEModel, build_conv_vae, build_mlp_vae
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

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
