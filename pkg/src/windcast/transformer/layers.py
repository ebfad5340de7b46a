"""Forward/backward pairs for the transformer building blocks.

Tokens are columns: an activation block has shape ``(batch, l, T)``.
Attention scores are ``K^T Q / sqrt(l)`` with shape ``(batch, heads, T_key,
T_query)`` and the softmax runs over the key axis, so each column of the
weight matrix is a distribution over keys for one query position.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "positional_encoding",
    "layer_norm",
    "scaled_attention",
    "multi_head",
    "LAYERNORM_MODES",
]

LAYERNORM_MODES = ("paper_global", "per_position")


def positional_encoding(length: int, l: int) -> np.ndarray:
    """Sinusoidal table of shape ``(length, l)``; even columns sine, odd columns cosine."""
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    if l < 2 or l % 2:
        raise ValueError(f"embedding width must be even and >= 2, got {l}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    rates = 10000.0 ** (np.arange(0, l, 2, dtype=np.float64) / l)
    pe = np.empty((length, l))
    pe[:, 0::2] = np.sin(pos / rates)
    pe[:, 1::2] = np.cos(pos / rates)
    return pe


# --- layer normalisation -------------------------------------------------
#
# "global": one mean/variance over the whole (l, T) block of a sample.
# "causal": position t uses the statistics of the (l, 0..t) prefix block,
#           the global rule restricted to what a causal decoder may see.
# "position": statistics over the l features of each column.


def ln_forward(x, mode: str, eps: float):
    if mode == "position":
        mean = x.mean(axis=-2, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=-2, keepdims=True)
    elif mode == "global":
        mean = x.mean(axis=(-2, -1), keepdims=True)
        var = ((x - mean) ** 2).mean(axis=(-2, -1), keepdims=True)
    elif mode == "causal":
        l, T = x.shape[-2], x.shape[-1]
        count = l * np.arange(1, T + 1, dtype=np.float64)
        # shift by the first column's mean (visible to every t) to limit cancellation
        shift = x[..., :1].mean(axis=-2, keepdims=True)
        xc = x - shift
        s1 = np.cumsum(xc.sum(axis=-2), axis=-1)
        s2 = np.cumsum((xc * xc).sum(axis=-2), axis=-1)
        mc = s1 / count
        mean = (mc + shift[..., 0, :])[..., None, :]
        var = np.maximum(s2 / count - mc * mc, 0.0)[..., None, :]
    else:
        raise ValueError(f"unknown layer-norm mode {mode!r}")
    inv = 1.0 / np.sqrt(var + eps)
    z = (x - mean) * inv
    return z, (mode, x, z, mean, var, inv)


def ln_backward(dz, cache):
    mode, x, z, mean, var, inv = cache
    if mode == "position":
        return inv * (dz - dz.mean(axis=-2, keepdims=True) - z * (dz * z).mean(axis=-2, keepdims=True))
    if mode == "global":
        return inv * (dz - dz.mean(axis=(-2, -1), keepdims=True) - z * (dz * z).mean(axis=(-2, -1), keepdims=True))
    l, T = x.shape[-2], x.shape[-1]
    count = l * np.arange(1, T + 1, dtype=np.float64)
    inv_t = inv[..., 0, :]
    mean_t = mean[..., 0, :]
    d_mean = -(dz.sum(axis=-2)) * inv_t
    d_var = -0.5 * (dz * (x - mean)).sum(axis=-2) * inv_t**3
    a = d_mean / count
    b = 2.0 * d_var / count
    # suffix sums over t >= j
    a_suf = np.flip(np.cumsum(np.flip(a, -1), -1), -1)
    b_suf = np.flip(np.cumsum(np.flip(b, -1), -1), -1)
    bm_suf = np.flip(np.cumsum(np.flip(b * mean_t, -1), -1), -1)
    return dz * inv + a_suf[..., None, :] + x * b_suf[..., None, :] - bm_suf[..., None, :]


def layer_norm(x, mode: str = "paper_global", eps: float = 1e-5, causal: bool = False) -> np.ndarray:
    """Normalise an ``(l, T)`` block (or a batch of them).

    ``paper_global`` takes the mean and variance over all ``l*T`` entries;
    with ``causal=True`` column ``t`` only sees the columns up to ``t``.
    ``per_position`` normalises each column on its own.
    """
    x = np.asarray(x, dtype=np.float64)
    return ln_forward(x, _ln_kind(mode, causal), eps)[0]


def _ln_kind(mode: str, causal: bool) -> str:
    if mode == "per_position":
        return "position"
    if mode == "paper_global":
        return "causal" if causal else "global"
    raise ValueError(f"unknown layer-norm mode {mode!r}; expected one of {LAYERNORM_MODES}")


# --- attention -----------------------------------------------------------


def _softmax_keys(z, causal: bool):
    if causal:
        tk, tq = z.shape[-2], z.shape[-1]
        future = np.arange(tk)[:, None] > np.arange(tq)[None, :]
        z = np.where(future, -np.inf, z)
    z = z - z.max(axis=-2, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-2, keepdims=True)


def scaled_attention(q, k, v, causal: bool = False, l: int | None = None):
    """Single-head attention with column tokens.

    ``q`` is ``(d, T_q)``, ``k`` and ``v`` are ``(d, T_k)`` and ``(d_v, T_k)``
    (leading batch axes allowed). Scores are ``k^T q / sqrt(l)`` where ``l``
    defaults to ``d``. With ``causal`` set, key positions after the query
    position get zero weight. Returns ``(output, weights)``.
    """
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    if q.shape[-2] != k.shape[-2]:
        raise ValueError(f"query/key widths differ: {q.shape[-2]} vs {k.shape[-2]}")
    if k.shape[-1] != v.shape[-1]:
        raise ValueError(f"key/value lengths differ: {k.shape[-1]} vs {v.shape[-1]}")
    if causal and k.shape[-1] != q.shape[-1]:
        raise ValueError("causal attention needs equal query and key lengths")
    scale = np.sqrt(q.shape[-2] if l is None else l)
    z = np.swapaxes(k, -1, -2) @ q / scale
    w = _softmax_keys(z, causal)
    return v @ w, w


def mha_forward(xq, xkv, wq, wk, wv, wo, causal: bool, scale_dim: int, drop=None):
    """Multi-head attention; ``wq/wk/wv`` are ``(H, d_head, l)``, ``wo`` is ``(l, H*d_head)``.

    ``drop`` is an optional multiplier (mask / keep) on the attention weights.
    """
    q = np.einsum("hdl,blt->bhdt", wq, xq)
    k = np.einsum("hdl,blt->bhdt", wk, xkv)
    v = np.einsum("hdl,blt->bhdt", wv, xkv)
    scale = np.sqrt(scale_dim)
    z = np.swapaxes(k, -1, -2) @ q / scale
    w = _softmax_keys(z, causal)
    wd = w if drop is None else w * drop
    o = v @ wd
    b, h, d, tq = o.shape
    concat = o.reshape(b, h * d, tq)
    out = wo @ concat
    return out, (xq, xkv, q, k, v, w, wd, drop, concat, scale)


def mha_backward(dout, cache, wq, wk, wv, wo):
    xq, xkv, q, k, v, w, wd, drop, concat, scale = cache
    d_wo = np.einsum("blt,bmt->lm", dout, concat)
    d_concat = wo.T @ dout
    b, hd, tq = d_concat.shape
    h = wq.shape[0]
    do = d_concat.reshape(b, h, hd // h, tq)
    dv = do @ np.swapaxes(wd, -1, -2)
    dwd = np.swapaxes(v, -1, -2) @ do
    dw = dwd if drop is None else dwd * drop
    dz = w * (dw - (dw * w).sum(axis=-2, keepdims=True))
    dq = k @ dz / scale
    dk = q @ np.swapaxes(dz, -1, -2) / scale
    d_wq = np.einsum("bhdt,blt->hdl", dq, xq)
    d_wk = np.einsum("bhdt,blt->hdl", dk, xkv)
    d_wv = np.einsum("bhdt,blt->hdl", dv, xkv)
    dxq = np.einsum("hdl,bhdt->blt", wq, dq)
    dxkv = np.einsum("hdl,bhdt->blt", wk, dk) + np.einsum("hdl,bhdt->blt", wv, dv)
    return dxq, dxkv, d_wq, d_wk, d_wv, d_wo


def multi_head(x, weights: dict, heads: int, causal: bool = False, context=None, scale_dim: int | None = None):
    """Concatenate per-head attention outputs and project with ``weights['o']``.

    ``weights`` holds ``q``, ``k``, ``v`` as ``(heads, d_head, l)`` and ``o`` as
    ``(l, heads*d_head)``. Keys and values come from ``context`` when given
    (encoder-decoder attention), otherwise from ``x``. Works on a single
    ``(l, T)`` block or a batch.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    xb = x[None] if single else x
    ctx = xb if context is None else (np.asarray(context, dtype=np.float64)[None] if single else context)
    wq, wk, wv, wo = (np.asarray(weights[n], dtype=np.float64) for n in ("q", "k", "v", "o"))
    if wq.shape[0] != heads:
        raise ValueError(f"expected {heads} heads, weights have {wq.shape[0]}")
    if wq.shape[-1] != xb.shape[-2] or wo.shape[-1] != wq.shape[0] * wq.shape[1]:
        raise ValueError("attention weight shapes do not match the input width")
    out, _ = mha_forward(xb, ctx, wq, wk, wv, wo, causal, scale_dim or xb.shape[-2])
    return out[0] if single else out


# --- feed-forward --------------------------------------------------------


def ff_forward(x, w1, b1, w2, b2, drop=None):
    hpre = w1 @ x + b1[:, None]
    act = np.maximum(hpre, 0.0)
    actd = act if drop is None else act * drop
    return w2 @ actd + b2[:, None], (x, hpre, actd, drop)


def ff_backward(dout, cache, w1, w2):
    x, hpre, actd, drop = cache
    d_w2 = np.einsum("blt,bft->lf", dout, actd)
    d_b2 = dout.sum(axis=(0, 2))
    dact = w2.T @ dout
    if drop is not None:
        dact = dact * drop
    dh = dact * (hpre > 0)
    d_w1 = np.einsum("bft,blt->fl", dh, x)
    d_b1 = dh.sum(axis=(0, 2))
    return w1.T @ dh, d_w1, d_b1, d_w2, d_b2
