"""Encoder-decoder transformer for one scalar subseries, with hand-derived gradients."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .layers import (
    _ln_kind,
    ff_backward,
    ff_forward,
    ln_backward,
    ln_forward,
    mha_backward,
    mha_forward,
    positional_encoding,
)

__all__ = [
    "TransformerConfig",
    "TransformerModel",
    "AttentionTrace",
    "init_model",
    "embed",
    "forward",
    "loss_and_gradients",
]


@dataclass(frozen=True)
class TransformerConfig:
    embed_dim: int = 32
    heads: int = 4
    stacks: int = 3
    ff_dim: int = 64
    dropout: float = 0.2
    learning_rate: float = 1e-3
    iterations: int = 10
    batch_size: int = 256
    max_grad_norm: float = 0.01
    encoder_len: int = 48
    decoder_len: int = 12
    seed: int = 0
    layernorm_mode: str = "paper_global"
    layernorm_eps: float = 1e-5

    def __post_init__(self):
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise ValueError(f"embed_dim must be even and >= 2, got {self.embed_dim}")
        if self.heads < 1 or self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.stacks < 1 or self.ff_dim < 1:
            raise ValueError("stacks and ff_dim must be >= 1")
        if self.encoder_len < 1 or self.decoder_len < 1:
            raise ValueError("encoder_len and decoder_len must be >= 1")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not self.max_grad_norm > 0:
            raise ValueError(f"max_grad_norm must be > 0, got {self.max_grad_norm}")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        _ln_kind(self.layernorm_mode, False)

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class TransformerModel:
    """Configuration plus a flat, ordered ``name -> ndarray`` parameter map."""

    config: TransformerConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "TransformerModel":
        return TransformerModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


@dataclass
class AttentionTrace:
    """Post-softmax attention weights and normalisation internals, keyed by layer name."""

    attention: dict[str, np.ndarray] = field(default_factory=dict)
    norm_mean: dict[str, np.ndarray] = field(default_factory=dict)
    norm_var: dict[str, np.ndarray] = field(default_factory=dict)
    normalized: dict[str, np.ndarray] = field(default_factory=dict)


def _attn_shapes(prefix, cfg):
    dh = cfg.embed_dim // cfg.heads
    l = cfg.embed_dim
    return {
        f"{prefix}.q": ((cfg.heads, dh, l), l),
        f"{prefix}.k": ((cfg.heads, dh, l), l),
        f"{prefix}.v": ((cfg.heads, dh, l), l),
        f"{prefix}.o": ((l, l), l),
    }


def parameter_shapes(cfg: TransformerConfig) -> dict[str, tuple[tuple[int, ...], int | None]]:
    """Every parameter's shape and fan-in (``None`` marks biases and norm parameters)."""
    l, f = cfg.embed_dim, cfg.ff_dim
    shapes: dict = {"embed.w": ((l,), 1), "embed.b": ((l,), None)}

    def norm(name):
        shapes[f"{name}.g"] = ((l,), None)
        shapes[f"{name}.b"] = ((l,), None)

    def ff(name):
        shapes[f"{name}.w1"] = ((f, l), l)
        shapes[f"{name}.b1"] = ((f,), None)
        shapes[f"{name}.w2"] = ((l, f), f)
        shapes[f"{name}.b2"] = ((l,), None)

    for i in range(cfg.stacks):
        shapes.update(_attn_shapes(f"enc{i}.attn", cfg))
        norm(f"enc{i}.ln1")
        ff(f"enc{i}.ff")
        norm(f"enc{i}.ln2")
    for i in range(cfg.stacks):
        shapes.update(_attn_shapes(f"dec{i}.self", cfg))
        norm(f"dec{i}.ln1")
        shapes.update(_attn_shapes(f"dec{i}.cross", cfg))
        norm(f"dec{i}.ln2")
        ff(f"dec{i}.ff")
        norm(f"dec{i}.ln3")
    shapes["out.w"] = ((l,), l)
    shapes["out.b"] = ((1,), None)
    return shapes


def init_model(config: TransformerConfig, seed: int | None = None) -> TransformerModel:
    """Uniform ``(-1/sqrt(fan_in), 1/sqrt(fan_in))`` weights, zero biases, unit norm gains."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    params = {}
    for name, (shape, fan_in) in parameter_shapes(config).items():
        if fan_in is not None:
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".g"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return TransformerModel(config, params)


def embed(values, model: TransformerModel, length: int | None = None) -> np.ndarray:
    """Value projection plus positional table; ``(l, T)`` for one window, ``(B, l, T)`` for a batch."""
    x = np.asarray(values, dtype=np.float64)
    if length is not None and x.shape[-1] != length:
        raise ValueError(f"window length {x.shape[-1]} does not match expected {length}")
    p = model.params
    pe = positional_encoding(x.shape[-1], model.config.embed_dim).T
    return p["embed.w"][:, None] * x[..., None, :] + p["embed.b"][:, None] + pe


def _dropout_mask(rng, shape, rate):
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _check(x, where):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite activation in {where}")


def _forward(model, enc, dec, rng=None, trace=None):
    """Batched forward pass; returns predictions ``(B, T_dec)`` and the backward cache."""
    cfg = model.config
    p = model.params
    rate = cfg.dropout if rng is not None else 0.0
    enc_kind = _ln_kind(cfg.layernorm_mode, False)
    dec_kind = _ln_kind(cfg.layernorm_mode, True)
    eps = cfg.layernorm_eps
    l = cfg.embed_dim

    def attn(prefix, xq, xkv, causal):
        drop = None
        if rate > 0:
            b, tq, tk = xq.shape[0], xq.shape[-1], xkv.shape[-1]
            drop = _dropout_mask(rng, (b, cfg.heads, tk, tq), rate)
        out, c = mha_forward(
            xq, xkv, p[f"{prefix}.q"], p[f"{prefix}.k"], p[f"{prefix}.v"], p[f"{prefix}.o"], causal, l, drop
        )
        if trace is not None:
            trace.attention[prefix] = c[5]
        return out, c

    def norm(name, x, kind):
        z, c = ln_forward(x, kind, eps)
        if trace is not None:
            trace.norm_mean[name] = c[3]
            trace.norm_var[name] = c[4]
            trace.normalized[name] = z
        y = p[f"{name}.g"][:, None] * z + p[f"{name}.b"][:, None]
        return y, (c, z)

    def ffn(name, x):
        drop = None
        if rate > 0:
            drop = _dropout_mask(rng, (x.shape[0], cfg.ff_dim, x.shape[-1]), rate)
        return ff_forward(x, p[f"{name}.w1"], p[f"{name}.b1"], p[f"{name}.w2"], p[f"{name}.b2"], drop)

    caches = {}
    h = embed(enc, model)
    for i in range(cfg.stacks):
        a, caches[f"enc{i}.attn"] = attn(f"enc{i}.attn", h, h, False)
        h1, caches[f"enc{i}.ln1"] = norm(f"enc{i}.ln1", h + a, enc_kind)
        f, caches[f"enc{i}.ff"] = ffn(f"enc{i}.ff", h1)
        h, caches[f"enc{i}.ln2"] = norm(f"enc{i}.ln2", h1 + f, enc_kind)
        _check(h, f"encoder layer {i}")
    memory = h

    y = embed(dec, model)
    for i in range(cfg.stacks):
        a, caches[f"dec{i}.self"] = attn(f"dec{i}.self", y, y, True)
        y1, caches[f"dec{i}.ln1"] = norm(f"dec{i}.ln1", y + a, dec_kind)
        c, caches[f"dec{i}.cross"] = attn(f"dec{i}.cross", y1, memory, False)
        y2, caches[f"dec{i}.ln2"] = norm(f"dec{i}.ln2", y1 + c, dec_kind)
        f, caches[f"dec{i}.ff"] = ffn(f"dec{i}.ff", y2)
        y, caches[f"dec{i}.ln3"] = norm(f"dec{i}.ln3", y2 + f, dec_kind)
        _check(y, f"decoder layer {i}")
    pred = np.einsum("l,blt->bt", p["out.w"], y) + p["out.b"][0]
    caches["out"] = y
    return pred, caches


def _backward(model, caches, dpred):
    cfg = model.config
    p = model.params
    g = {k: np.zeros_like(v) for k, v in p.items()}

    def norm_bwd(name, dy):
        c, z = caches[name]
        g[f"{name}.g"] += np.einsum("blt,blt->l", dy, z)
        g[f"{name}.b"] += dy.sum(axis=(0, 2))
        return ln_backward(dy * p[f"{name}.g"][:, None], c)

    def attn_bwd(prefix, dout):
        dxq, dxkv, dq, dk, dv, do = mha_backward(
            dout, caches[prefix], p[f"{prefix}.q"], p[f"{prefix}.k"], p[f"{prefix}.v"], p[f"{prefix}.o"]
        )
        g[f"{prefix}.q"] += dq
        g[f"{prefix}.k"] += dk
        g[f"{prefix}.v"] += dv
        g[f"{prefix}.o"] += do
        return dxq, dxkv

    def ff_bwd(name, dout):
        dx, dw1, db1, dw2, db2 = ff_backward(dout, caches[name], p[f"{name}.w1"], p[f"{name}.w2"])
        g[f"{name}.w1"] += dw1
        g[f"{name}.b1"] += db1
        g[f"{name}.w2"] += dw2
        g[f"{name}.b2"] += db2
        return dx

    y = caches["out"]
    g["out.w"] += np.einsum("bt,blt->l", dpred, y)
    g["out.b"] += dpred.sum()
    dy = p["out.w"][None, :, None] * dpred[:, None, :]

    dmem = 0.0
    for i in reversed(range(cfg.stacks)):
        ds2 = norm_bwd(f"dec{i}.ln3", dy)
        dy2 = ds2 + ff_bwd(f"dec{i}.ff", ds2)
        ds1 = norm_bwd(f"dec{i}.ln2", dy2)
        dq, dkv = attn_bwd(f"dec{i}.cross", ds1)
        dmem = dmem + dkv
        dy1 = ds1 + dq
        ds0 = norm_bwd(f"dec{i}.ln1", dy1)
        dq, dkv = attn_bwd(f"dec{i}.self", ds0)
        dy = ds0 + dq + dkv
    d_dec_embed = dy

    dh = dmem
    for i in reversed(range(cfg.stacks)):
        ds1 = norm_bwd(f"enc{i}.ln2", dh)
        dh1 = ds1 + ff_bwd(f"enc{i}.ff", ds1)
        ds0 = norm_bwd(f"enc{i}.ln1", dh1)
        dq, dkv = attn_bwd(f"enc{i}.attn", ds0)
        dh = ds0 + dq + dkv
    d_enc_embed = dh

    for d_emb, values in ((d_enc_embed, caches["enc_in"]), (d_dec_embed, caches["dec_in"])):
        g["embed.w"] += np.einsum("blt,bt->l", d_emb, values)
        g["embed.b"] += d_emb.sum(axis=(0, 2))
    return g


def _as_batch(enc, dec, cfg, require_full=False):
    enc = np.asarray(enc, dtype=np.float64)
    dec = np.asarray(dec, dtype=np.float64)
    single = enc.ndim == 1
    if single:
        enc, dec = enc[None], dec[None]
    if enc.ndim != 2 or dec.ndim != 2 or enc.shape[0] != dec.shape[0]:
        raise ValueError(f"inconsistent window shapes {enc.shape} and {dec.shape}")
    if enc.shape[1] != cfg.encoder_len:
        raise ValueError(f"encoder window has length {enc.shape[1]}, expected {cfg.encoder_len}")
    td = dec.shape[1]
    if td < 1 or td > cfg.decoder_len or (require_full and td != cfg.decoder_len):
        raise ValueError(f"decoder window has length {td}, expected {cfg.decoder_len}")
    return enc, dec, single


def forward(model: TransformerModel, encoder_window, decoder_window, train_mode: bool = False, rng=None):
    """Predict one value per decoder position.

    ``decoder_window`` may be shorter than the configured decoder length; the
    causal mask makes every prefix self-consistent. Dropout is active only
    when ``train_mode`` is set, drawing masks from ``rng`` (seeded from the
    config when omitted). Returns ``(predictions, AttentionTrace)``.
    """
    cfg = model.config
    enc, dec, single = _as_batch(encoder_window, decoder_window, cfg)
    if train_mode and cfg.dropout > 0:
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    else:
        rng = None
    trace = AttentionTrace()
    pred, _ = _forward(model, enc, dec, rng, trace)
    return (pred[0] if single else pred), trace


def predict(model: TransformerModel, encoder_window, decoder_window) -> np.ndarray:
    """Deterministic forward pass without trace bookkeeping."""
    enc, dec, single = _as_batch(encoder_window, decoder_window, model.config)
    pred, _ = _forward(model, enc, dec)
    return pred[0] if single else pred


def loss_and_gradients(model: TransformerModel, batch, rng=None):
    """Mean squared error over every decoder position and its exact gradient.

    ``batch`` is ``(encoder_windows, decoder_inputs, decoder_targets)`` with a
    leading batch axis. Dropout is applied only if ``rng`` is given.
    """
    enc, dec, tgt = batch
    enc, dec, _ = _as_batch(enc, dec, model.config)
    tgt = np.asarray(tgt, dtype=np.float64).reshape(dec.shape)
    if enc.shape[0] == 0:
        raise ValueError("empty batch")
    if rng is not None and model.config.dropout == 0:
        rng = None
    pred, caches = _forward(model, enc, dec, rng)
    caches["enc_in"] = enc
    caches["dec_in"] = dec
    resid = pred - tgt
    loss = float(np.mean(resid**2))
    dpred = 2.0 * resid / resid.size
    return loss, _backward(model, caches, dpred)
