"""Sliding-window training with Adam and autoregressive forecasting."""

from __future__ import annotations

import logging

import numpy as np

from .model import TransformerConfig, TransformerModel, _as_batch, _forward, init_model, loss_and_gradients

__all__ = [
    "make_windows",
    "Adam",
    "clip_by_global_norm",
    "train",
    "evaluate_loss",
    "rollout",
    "forecast_subseries",
]

logger = logging.getLogger(__name__)


def make_windows(series, encoder_len: int, decoder_len: int):
    """Stride-1 teacher-forcing windows.

    Window ``i`` has encoder input ``s[i:i+E]``, decoder input
    ``s[i+E-1:i+E-1+D]`` and target ``s[i+E:i+E+D]``: every decoder position
    predicts the sample right after its own input.
    """
    s = np.asarray(series, dtype=np.float64)
    n = s.size - encoder_len - decoder_len + 1
    if n < 1:
        raise ValueError(
            f"series of length {s.size} is too short for encoder_len={encoder_len} "
            f"and decoder_len={decoder_len} (needs {encoder_len + decoder_len})"
        )
    idx = np.arange(n)[:, None]
    enc = s[idx + np.arange(encoder_len)]
    dec = s[idx + encoder_len - 1 + np.arange(decoder_len)]
    tgt = s[idx + encoder_len + np.arange(decoder_len)]
    return enc, dec, tgt


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``; returns the norm before clipping."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(model: TransformerModel | None, series, config: TransformerConfig | None = None):
    """Fit ``model`` (a fresh one when ``None``) to a scaled series.

    One iteration is one Adam step on a mini-batch drawn without replacement
    (all windows when there are at most ``batch_size`` of them). Gradients are
    clipped to ``max_grad_norm`` before every step. Returns the trained copy
    and the per-iteration training loss.
    """
    if model is None:
        if config is None:
            raise ValueError("need a model or a config")
        model = init_model(config)
    cfg = config or model.config
    model = TransformerModel(cfg, {k: v.copy() for k, v in model.params.items()})
    enc, dec, tgt = make_windows(series, cfg.encoder_len, cfg.decoder_len)
    n = enc.shape[0]
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params, lr=cfg.learning_rate)
    losses = []
    for it in range(cfg.iterations):
        if n <= cfg.batch_size:
            idx = np.arange(n)
        else:
            idx = np.sort(rng.choice(n, cfg.batch_size, replace=False))
        loss, grads = loss_and_gradients(model, (enc[idx], dec[idx], tgt[idx]), rng=rng)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite training loss at iteration {it}")
        clip_by_global_norm(grads, cfg.max_grad_norm)
        opt.step(model.params, grads)
        losses.append(loss)
    if losses:
        logger.debug("trained %d iterations, loss %.3g -> %.3g", len(losses), losses[0], losses[-1])
    return model, np.asarray(losses)


def evaluate_loss(model: TransformerModel, series) -> float:
    """Mean squared one-step error over every training window, dropout off."""
    cfg = model.config
    enc, dec, tgt = make_windows(series, cfg.encoder_len, cfg.decoder_len)
    pred, _ = _forward(model, enc, dec)
    return float(np.mean((pred - tgt) ** 2))


def rollout(model: TransformerModel, contexts, steps: int) -> np.ndarray:
    """Autoregressive forecast of ``steps`` values after each row of ``contexts``.

    Each step predicts from the last decoder position of a window that ends
    at the newest known value, then appends the prediction to the context.
    Contexts shorter than ``encoder_len + decoder_len - 1`` use a shorter
    decoder prefix.
    """
    cfg = model.config
    E, D = cfg.encoder_len, cfg.decoder_len
    c = np.asarray(contexts, dtype=np.float64)
    if c.ndim != 2:
        raise ValueError("contexts must be 2-D (batch, length)")
    if c.shape[1] < E:
        raise ValueError(f"history of length {c.shape[1]} is shorter than encoder_len={E}")
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    keep = min(c.shape[1], E + D - 1)
    buf = np.concatenate([c[:, c.shape[1] - keep :], np.empty((c.shape[0], steps))], axis=1)
    out = np.empty((c.shape[0], steps))
    for s in range(steps):
        L = keep + s
        d = min(D, L - E + 1)
        enc = buf[:, L - d - E + 1 : L - d + 1]
        dec = buf[:, L - d : L]
        pred, _ = _forward(model, *_as_batch(enc, dec, cfg)[:2])
        val = pred[:, d - 1]
        if not np.all(np.isfinite(val)):
            raise FloatingPointError(f"non-finite forecast at step {s}")
        out[:, s] = val
        buf[:, L] = val
    return out


def forecast_subseries(model: TransformerModel, history, steps: int) -> np.ndarray:
    """Forecast ``steps`` values following ``history`` (1-D)."""
    h = np.asarray(history, dtype=np.float64)
    if h.ndim != 1:
        raise ValueError("history must be 1-D")
    return rollout(model, h[None], steps)[0]
