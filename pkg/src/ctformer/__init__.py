"""Forecasting toolkit for channel-wise asynchronously sampled multivariate
time series with block-wise missing test inputs."""

from .attnmask import AttentionMask, MaskStrategy, build_mask, sample_dropout_mask
from .data import AsyncDataset, ChannelSpec, WindowSample, make_windows, synth_coupled
from .model import Forecast, ModelConfig, ModelParams, ablate, count_params, forward
from .patching import EmbeddingBank, PatchPlan, TokenLayout, plan_patches, tokenize
from .tensor import Tensor
from .train import TrainConfig, cmae, cmse, fit

__all__ = [
    "AsyncDataset",
    "AttentionMask",
    "ChannelSpec",
    "EmbeddingBank",
    "Forecast",
    "MaskStrategy",
    "ModelConfig",
    "ModelParams",
    "PatchPlan",
    "Tensor",
    "TokenLayout",
    "TrainConfig",
    "WindowSample",
    "ablate",
    "build_mask",
    "cmae",
    "cmse",
    "count_params",
    "fit",
    "forward",
    "make_windows",
    "plan_patches",
    "sample_dropout_mask",
    "synth_coupled",
    "tokenize",
]

__version__ = "0.1.0"
