"""Quantum echo state network simulator with noise channels and benchmark tasks."""

__version__ = "0.1.0"

from .channels import KrausChannel, make_channel  # noqa: E402
from .learning import evaluate_narma, generate_input, memory_capacity, narma_target, train_readout  # noqa: E402
from .reservoir import ReservoirConfig, Segmentation, SignalMatrix, run_reservoir  # noqa: E402
from .states import DensityMatrix, StateVector  # noqa: E402

__all__ = [
    "DensityMatrix",
    "KrausChannel",
    "ReservoirConfig",
    "Segmentation",
    "SignalMatrix",
    "StateVector",
    "evaluate_narma",
    "generate_input",
    "make_channel",
    "memory_capacity",
    "narma_target",
    "run_reservoir",
    "train_readout",
]
