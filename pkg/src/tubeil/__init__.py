"""Imitation-learned MPC with a tube-based ancillary controller for the cart-pole."""

from .dynamics import NOMINAL_PARAMS, ModelParams, NumericalError, discrete_step, plant_step
from .lqr import AncillaryGain, origin_gain, solve_dare
from .mlp import MlpWeights, TrainConfig, forward, train
from .mpc import MpcConfig, MpcSolver

__version__ = "0.1.0"

__all__ = [
    "NOMINAL_PARAMS", "ModelParams", "NumericalError", "discrete_step", "plant_step",
    "AncillaryGain", "origin_gain", "solve_dare",
    "MlpWeights", "TrainConfig", "forward", "train",
    "MpcConfig", "MpcSolver",
]
