"""Neural network postprocessing with distributional (DRN), Bernstein quantile
(BQN) and histogram (HEN) output heads."""

from .aggregate import aggregate
from .binning import HenBinning, build_hen_binning
from .heads import HEADS, BqnHead, DrnHead, HenHead, make_head
from .network import Adam, Network, NetworkSpec, init_network
from .train import InputEncoder, NnLeadModel, NnModel, TrainResult, fit_nn_model, train_network, write_training_log

__all__ = [
    "aggregate",
    "HenBinning",
    "build_hen_binning",
    "HEADS",
    "BqnHead",
    "DrnHead",
    "HenHead",
    "make_head",
    "Adam",
    "Network",
    "NetworkSpec",
    "init_network",
    "InputEncoder",
    "NnLeadModel",
    "NnModel",
    "TrainResult",
    "fit_nn_model",
    "train_network",
    "write_training_log",
]
