"""Encoder-decoder transformer forecaster for a single subseries."""

from .layers import layer_norm, multi_head, positional_encoding, scaled_attention
from .model import (
    AttentionTrace,
    TransformerConfig,
    TransformerModel,
    embed,
    forward,
    init_model,
    loss_and_gradients,
    predict,
)
from .training import Adam, clip_by_global_norm, evaluate_loss, forecast_subseries, make_windows, rollout, train

__all__ = [
    "AttentionTrace",
    "TransformerConfig",
    "TransformerModel",
    "Adam",
    "clip_by_global_norm",
    "embed",
    "evaluate_loss",
    "forecast_subseries",
    "forward",
    "init_model",
    "layer_norm",
    "loss_and_gradients",
    "make_windows",
    "multi_head",
    "positional_encoding",
    "predict",
    "rollout",
    "scaled_attention",
    "train",
]
