"""Numpy neural network with hand-written gradients."""
from .checkpoint import Checkpoint
from .layers import Context
from .model import Adam, Estimate, Network, nll, nll_from_output, split_output
from .train import (EarlyStopping, SplitData, TargetScaler, TrainLog, load_split, predict,
                    predict_planes, train)

__all__ = ["Adam", "Checkpoint", "Context", "EarlyStopping", "Estimate", "Network", "SplitData",
           "TargetScaler", "TrainLog", "load_split", "nll", "nll_from_output", "predict",
           "predict_planes", "split_output", "train"]
