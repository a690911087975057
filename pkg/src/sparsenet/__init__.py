"""Sparsity-constrained training: gradient hard thresholding, iterative hard
thresholding for neural networks, and bitmask model storage."""
from .ght import GhtConfig, SmoothObjective, ght_solve, hard_threshold, least_squares, support
from .iht import SparsityPlan, TrainConfig, run_iht, train_dense
from .network import LossSpec, Network, build_network, evaluate

__all__ = [
    "GhtConfig", "SmoothObjective", "ght_solve", "hard_threshold", "least_squares", "support",
    "SparsityPlan", "TrainConfig", "run_iht", "train_dense",
    "LossSpec", "Network", "build_network", "evaluate",
]
__version__ = "0.1.0"
