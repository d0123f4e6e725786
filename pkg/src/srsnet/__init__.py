"""Selective representation spaces for patch-based time series forecasting."""

from .datakit import (
    SeriesFrame,
    SplitSpec,
    SynthSpec,
    WindowPair,
    instance_normalize,
    load_csv,
    split,
    standardize,
    synth_generate,
    windows,
)
from .models import ABLATIONS, ModelConfig, PluginForecaster, SRSNet, build_variant, mse_loss
from .patching import PatchGeometry, adjacent_patches, candidate_patches, geometry, pad
from .srs import SelectionTrace, SRSModule, SrsConfig
from .substrate import DiffValue, ParamStore, detach, finite_diff_grad, gather, seed_all
from .trainer import DataSplits, RunRecord, TrainConfig, train

__all__ = [
    "ABLATIONS",
    "DataSplits",
    "DiffValue",
    "ModelConfig",
    "ParamStore",
    "PatchGeometry",
    "PluginForecaster",
    "RunRecord",
    "SRSModule",
    "SRSNet",
    "SelectionTrace",
    "SeriesFrame",
    "SplitSpec",
    "SrsConfig",
    "SynthSpec",
    "TrainConfig",
    "WindowPair",
    "adjacent_patches",
    "build_variant",
    "candidate_patches",
    "detach",
    "finite_diff_grad",
    "gather",
    "geometry",
    "instance_normalize",
    "load_csv",
    "mse_loss",
    "pad",
    "seed_all",
    "split",
    "standardize",
    "synth_generate",
    "train",
    "windows",
]
