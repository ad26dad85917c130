"""Transformer building blocks and the fixed-size attention bridge.

All layer forwards accept ``(T, d)`` or batched ``(B, T, d)`` inputs and are
pre-norm residual: ``x + Sub(LN(x))``. Padding masks use True = padded, and
masking is additive -inf on attention scores, so padded positions get exactly
zero weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    NEG_INF,
    Tensor,
    add,
    layer_norm,
    linear,
    matmul,
    relu,
    reshape,
    softmax,
    swapaxes,
    transpose,
)


def xavier_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)), requires_grad=True)


def _param_vector(value, n):
    return Tensor(np.full(n, float(value)), requires_grad=True)


@dataclass
class TransformerLayerParams:
    """One pre-norm Transformer layer: self-attention, optional cross-attention, FFN.

    Weights are stored (in, out) and applied as ``x @ W + b``. Encoder layers
    carry no cross-attention parameters; decoder layers always do.
    """

    d: int
    d_ff: int
    heads: int
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    cross: dict = field(default_factory=dict)  # cwq..cbo + ln3_g/ln3_b when decoder

    @classmethod
    def create(cls, rng, d, d_ff, heads, cross_attention=False):
        if d % heads != 0:
            raise ValueError(f"model dim {d} not divisible by {heads} heads")
        p = cls(
            d=d,
            d_ff=d_ff,
            heads=heads,
            wq=xavier_uniform(rng, d, d),
            wk=xavier_uniform(rng, d, d),
            wv=xavier_uniform(rng, d, d),
            wo=xavier_uniform(rng, d, d),
            bq=_param_vector(0.0, d),
            bk=_param_vector(0.0, d),
            bv=_param_vector(0.0, d),
            bo=_param_vector(0.0, d),
            ln1_g=_param_vector(1.0, d),
            ln1_b=_param_vector(0.0, d),
            ff1_w=xavier_uniform(rng, d, d_ff),
            ff1_b=_param_vector(0.0, d_ff),
            ff2_w=xavier_uniform(rng, d_ff, d),
            ff2_b=_param_vector(0.0, d),
            ln2_g=_param_vector(1.0, d),
            ln2_b=_param_vector(0.0, d),
        )
        if cross_attention:
            p.cross = {
                "cwq": xavier_uniform(rng, d, d),
                "cwk": xavier_uniform(rng, d, d),
                "cwv": xavier_uniform(rng, d, d),
                "cwo": xavier_uniform(rng, d, d),
                "cbq": _param_vector(0.0, d),
                "cbk": _param_vector(0.0, d),
                "cbv": _param_vector(0.0, d),
                "cbo": _param_vector(0.0, d),
                "ln3_g": _param_vector(1.0, d),
                "ln3_b": _param_vector(0.0, d),
            }
        return p

    @property
    def is_decoder(self):
        return bool(self.cross)

    def tensors(self):
        named = {
            name: getattr(self, name)
            for name in (
                "wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo",
                "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
                "ln2_g", "ln2_b",
            )
        }
        named.update(self.cross)
        return named


@dataclass
class FsabParams:
    """Fixed-size attention bridge: k learned queries over a ReLU-keyed space.

    ``w_k`` has shape (d_a, d) and ``w_q`` shape (k, d_a); the bridge output
    always has exactly k rows regardless of input length.
    """

    k: int
    d_a: int
    w_k: Tensor
    w_q: Tensor

    @classmethod
    def create(cls, rng, d, k=50, d_a=None):
        d_a = d if d_a is None else d_a
        return cls(
            k=k,
            d_a=d_a,
            w_k=xavier_uniform(rng, d_a, d),
            w_q=xavier_uniform(rng, k, d_a),
        )

    def tensors(self):
        return {"w_k": self.w_k, "w_q": self.w_q}


_PE_CACHE = {}


def sinusoidal_positions(length, d):
    """Standard sine/cosine position encodings, shape (length, d)."""
    if d % 2 != 0:
        raise ValueError(f"position encoding needs an even dimension, got {d}")
    cached = _PE_CACHE.get((length, d))
    if cached is None:
        pos = np.arange(length, dtype=np.float64)[:, None]
        freq = 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
        pe = np.empty((length, d))
        pe[:, 0::2] = np.sin(pos / freq)
        pe[:, 1::2] = np.cos(pos / freq)
        cached = _PE_CACHE[(length, d)] = pe
    return Tensor(cached)


def pad_attention_mask(pad_mask):
    """(B, T) boolean pad mask -> (B, 1, 1, T) additive score mask."""
    m = np.zeros(pad_mask.shape, dtype=np.float64)
    m[pad_mask] = NEG_INF
    return m[:, None, None, :]


def causal_attention_mask(size):
    """(1, 1, T, T) additive mask forbidding attention to future positions."""
    m = np.full((size, size), NEG_INF)
    return np.triu(m, k=1)[None, None, :, :]


def _as_batched(x, pad_mask, name):
    """Promote (T, d) -> (1, T, d); validate mask length against T."""
    squeeze = x.ndim == 2
    xb = reshape(x, (1,) + x.shape) if squeeze else x
    if xb.ndim != 3:
        raise ValueError(f"{name} expects a (T, d) or (B, T, d) input, got {x.shape}")
    if xb.shape[1] == 0:
        raise ValueError(f"{name}: empty sequence (T = 0)")
    if pad_mask is None:
        mask = np.zeros(xb.shape[:2], dtype=bool)
    else:
        mask = np.asarray(pad_mask, dtype=bool)
        if squeeze and mask.ndim == 1:
            mask = mask[None, :]
        if mask.shape != xb.shape[:2]:
            raise ValueError(
                f"{name}: pad mask shape {mask.shape} does not match input {xb.shape[:2]}"
            )
    return xb, mask, squeeze


def _split_heads(x, heads):
    b, t, d = x.shape
    return transpose(reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, t, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def multi_head_attention(x_q, x_kv, wq, wk, wv, wo, bq, bk, bv, bo, heads, add_mask):
    """Scaled dot-product attention with an additive score mask."""
    dh = wq.shape[1] // heads
    q = _split_heads(linear(x_q, wq, bq), heads)
    k = _split_heads(linear(x_kv, wk, bk), heads)
    v = _split_heads(linear(x_kv, wv, bv), heads)
    scores = matmul(q, swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh))
    if add_mask is not None:
        scores = add(scores, add_mask)
    weights = softmax(scores, axis=-1)
    return linear(_merge_heads(matmul(weights, v)), wo, bo)


def _ffn(p, x):
    return linear(relu(linear(x, p.ff1_w, p.ff1_b)), p.ff2_w, p.ff2_b)


def encoder_layer_forward(params, x, pad_mask=None):
    """Pre-norm encoder layer; padded positions are never attended to."""
    xb, mask, squeeze = _as_batched(x, pad_mask, "encoder_layer_forward")
    att_mask = pad_attention_mask(mask)
    h = layer_norm(xb, params.ln1_g, params.ln1_b)
    xb = add(xb, multi_head_attention(
        h, h, params.wq, params.wk, params.wv, params.wo,
        params.bq, params.bk, params.bv, params.bo, params.heads, att_mask))
    xb = add(xb, _ffn(params, layer_norm(xb, params.ln2_g, params.ln2_b)))
    return reshape(xb, xb.shape[1:]) if squeeze else xb


def decoder_layer_forward(params, y, memory, tgt_pad_mask=None, mem_pad_mask=None):
    """Pre-norm decoder layer: causal self-attention, then cross-attention over memory."""
    if not params.is_decoder:
        raise ValueError("decoder_layer_forward needs a layer with cross-attention parameters")
    yb, tmask, squeeze = _as_batched(y, tgt_pad_mask, "decoder_layer_forward")
    mb, mmask, _ = _as_batched(memory, mem_pad_mask, "decoder_layer_forward(memory)")
    if mb.shape[0] != yb.shape[0] and mb.shape[0] != 1:
        raise ValueError(f"memory batch {mb.shape[0]} does not match target batch {yb.shape[0]}")

    self_mask = causal_attention_mask(yb.shape[1]) + pad_attention_mask(tmask)
    h = layer_norm(yb, params.ln1_g, params.ln1_b)
    yb = add(yb, multi_head_attention(
        h, h, params.wq, params.wk, params.wv, params.wo,
        params.bq, params.bk, params.bv, params.bo, params.heads, self_mask))

    c = params.cross
    h = layer_norm(yb, c["ln3_g"], c["ln3_b"])
    yb = add(yb, multi_head_attention(
        h, mb, c["cwq"], c["cwk"], c["cwv"], c["cwo"],
        c["cbq"], c["cbk"], c["cbv"], c["cbo"], params.heads, pad_attention_mask(mmask)))

    yb = add(yb, _ffn(params, layer_norm(yb, params.ln2_g, params.ln2_b)))
    return reshape(yb, yb.shape[1:]) if squeeze else yb


def fsab_forward(params, x, pad_mask=None, return_weights=False):
    """Fixed-size attention bridge.

    H = ReLU(x W_k^T), scores = H W_q^T, attention = softmax over the token
    axis (one distribution per bridge row, padded tokens masked to -inf),
    output = attention^T x with exactly ``params.k`` rows. Every output row is
    a convex combination of unpadded input rows.
    """
    xb, mask, squeeze = _as_batched(x, pad_mask, "fsab_forward")
    if mask.all(axis=1).any():
        raise ValueError("fsab_forward: an input sequence has every position padded")

    h = relu(matmul(xb, transpose(params.w_k)))           # (B, T, d_a)
    scores = matmul(h, transpose(params.w_q))             # (B, T, k)
    score_mask = np.zeros(mask.shape, dtype=np.float64)
    score_mask[mask] = NEG_INF
    scores = add(scores, score_mask[:, :, None])
    weights = softmax(scores, axis=-2)                    # sums to 1 over tokens
    out = matmul(swapaxes(weights, -1, -2), xb)           # (B, k, d)
    if squeeze:
        out = reshape(out, out.shape[1:])
        weights = reshape(weights, weights.shape[1:])
    return (out, weights) if return_weights else out
