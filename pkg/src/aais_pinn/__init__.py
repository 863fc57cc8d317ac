"""Annealed adaptive importance sampling for residual-driven PINN collocation."""

from .mixture import ComponentKind, MixtureModel
from .target import AnnealedTarget, BoxDomain, PeaksTarget, ResidualTarget
from .aais import AaisConfig, run_aais
from .pde import PoissonProblem, get_problem
from .pinn import MlpField, MlpParams, init_params
from .samplers import Aais, Rad, Uniform, propose_points
from .train import TrainConfig, resample_train

__version__ = "0.1.0"

__all__ = [
    "Aais", "AaisConfig", "AnnealedTarget", "BoxDomain", "ComponentKind",
    "MixtureModel", "MlpField", "MlpParams", "PeaksTarget", "PoissonProblem",
    "Rad", "ResidualTarget", "TrainConfig", "Uniform", "get_problem",
    "init_params", "propose_points", "resample_train", "run_aais",
]
