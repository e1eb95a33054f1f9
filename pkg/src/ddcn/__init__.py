"""Dilated fully-convolutional depth estimation engine.

Submodules:
  tensor      rank-4 array helpers, seeded RNG
  ops         layer primitives with manual backward passes
  reference   naive direct-sum oracles for verification
  loss        scale-invariant log-depth error family
  arch        declarative stack descriptions, counts, geometry, tables
  model       runtime networks built from an arch spec
  train       SGD trainer, two training phases, metrics
  checkpoint  versioned binary weight files
  data        PPM/PGM pairs, manifests, splits, synthetic scenes
  gradcheck   finite-difference verification suites
  cli         the `ddcn` command
"""

from .arch import ArchSpec, LayerSpec, count_parameters, geometry_report, make_arch
from .loss import LogDepthPair, LossReport, training_loss
from .model import TwoStackNet, build_model
from .ops import ConvParams, GradPair, conv2d_dilated, receptive_field
from .train import TrainConfig, Trainer, sgd_step

__all__ = [
    "ArchSpec", "LayerSpec", "count_parameters", "geometry_report", "make_arch",
    "LogDepthPair", "LossReport", "training_loss",
    "TwoStackNet", "build_model",
    "ConvParams", "GradPair", "conv2d_dilated", "receptive_field",
    "TrainConfig", "Trainer", "sgd_step",
]

__version__ = "0.1.0"
