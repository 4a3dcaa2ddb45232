"""Building blocks for the three models: dense layers, attention, transformer blocks.

All parameters live in a ParamStore under dotted names so checkpoints and
the gradient oracle can enumerate them.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError, VocabularyError
from .tensor import Tensor

# Additive attention mask value. Large enough that exp() underflows to an
# exact 0.0 weight, small enough to stay finite.
MASK_VALUE = -1e30


def xavier_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def embedding_init(rng, rows, dim, scale=0.02):
    return rng.normal(0.0, scale, size=(rows, dim))


def dense_forward(x, w, b):
    """y = x @ w + b with full backward support.

    `x` is (..., F_in), `w` is (F_in, F_out), `b` is (F_out,).
    """
    x, w, b = T.as_tensor(x), T.as_tensor(w), T.as_tensor(b)
    if w.ndim != 2:
        raise DimensionError(f"W must be 2-D, got shape {w.shape}")
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(
            f"x last dimension {x.shape[-1]} does not match W rows {w.shape[0]}"
        )
    if b.shape != (w.shape[1],):
        raise DimensionError(f"b shape {b.shape} does not match W columns {w.shape[1]}")
    return x @ w + b


def lookup(table, indices, vocab_name="vocabulary"):
    """Embedding rows for integer indices, rejecting out-of-range ids."""
    indices = np.asarray(indices)
    rows = table.shape[0]
    if indices.size and (indices.min() < 0 or indices.max() >= rows):
        bad = indices.min() if indices.min() < 0 else indices.max()
        raise VocabularyError(f"index {bad} outside {vocab_name} of size {rows}")
    return T.embedding(table, indices.astype(np.int64))


def init_dense(store, prefix, fan_in, fan_out, rng):
    w = store.add(f"{prefix}.w", xavier_uniform(rng, fan_in, fan_out))
    b = store.add(f"{prefix}.b", np.zeros(fan_out))
    return w, b


def init_layer_norm(store, prefix, dim):
    gain = store.add(f"{prefix}.gain", np.ones(dim))
    bias = store.add(f"{prefix}.bias", np.zeros(dim))
    return gain, bias


def init_attention(store, prefix, d_model, rng):
    params = {}
    for name in ("wq", "wk", "wv", "wo"):
        params[name] = store.add(f"{prefix}.{name}", xavier_uniform(rng, d_model, d_model))
        params["b" + name[1]] = store.add(f"{prefix}.b{name[1]}", np.zeros(d_model))
    return params


def multi_head_attention(tokens, heads, causal, params):
    """Scaled dot-product attention with per-head and output projections.

    `tokens` is (L, D) or (B, L, D). With `causal` set, position t attends
    only to positions <= t; otherwise attention is full (used across channel
    tokens in the statistic model).
    """
    tokens = T.as_tensor(tokens)
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = T.reshape(tokens, (1,) + tokens.shape)
    if tokens.ndim != 3:
        raise DimensionError(f"attention expects 2-D or 3-D tokens, got {tokens.shape}")
    b, length, d = tokens.shape
    if heads < 1 or d % heads != 0:
        raise ConfigurationError(f"model width {d} not divisible by {heads} heads")
    dh = d // heads

    def split(x):  # (B, L, D) -> (B, H, L, dh)
        return T.swapaxes(T.reshape(x, (b, length, heads, dh)), 1, 2)

    q = split(dense_forward(tokens, params["wq"], params["bq"]))
    k = split(dense_forward(tokens, params["wk"], params["bk"]))
    v = split(dense_forward(tokens, params["wv"], params["bv"]))

    scores = T.mul(q @ T.swapaxes(k, -1, -2), 1.0 / np.sqrt(dh))
    if causal:
        mask = np.triu(np.full((length, length), MASK_VALUE), k=1)
        scores = scores + Tensor(mask)
    attn = T.softmax(scores, axis=-1)
    mixed = T.swapaxes(attn @ v, 1, 2)  # (B, L, H, dh)
    out = dense_forward(T.reshape(mixed, (b, length, d)), params["wo"], params["bo"])
    if squeeze:
        out = T.reshape(out, (length, d))
    return out


def init_transformer_block(store, prefix, d_model, d_ff, rng):
    init_layer_norm(store, f"{prefix}.ln1", d_model)
    init_attention(store, f"{prefix}.attn", d_model, rng)
    init_layer_norm(store, f"{prefix}.ln2", d_model)
    init_dense(store, f"{prefix}.ff1", d_model, d_ff, rng)
    init_dense(store, f"{prefix}.ff2", d_ff, d_model, rng)


def transformer_block(x, store, prefix, heads, causal):
    """Pre-layer-norm block with residual connections."""
    attn_params = {
        key: store[f"{prefix}.attn.{key}"]
        for key in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")
    }
    h = x + multi_head_attention(
        T.layer_norm(x, store[f"{prefix}.ln1.gain"], store[f"{prefix}.ln1.bias"]),
        heads,
        causal,
        attn_params,
    )
    ff_in = T.layer_norm(h, store[f"{prefix}.ln2.gain"], store[f"{prefix}.ln2.bias"])
    ff = dense_forward(
        T.relu(dense_forward(ff_in, store[f"{prefix}.ff1.w"], store[f"{prefix}.ff1.b"])),
        store[f"{prefix}.ff2.w"],
        store[f"{prefix}.ff2.b"],
    )
    return h + ff


def init_encoder(store, prefix, n_blocks, d_model, d_ff, rng):
    for i in range(n_blocks):
        init_transformer_block(store, f"{prefix}.blocks.{i}", d_model, d_ff, rng)
    init_layer_norm(store, f"{prefix}.ln_out", d_model)


def encoder(x, store, prefix, n_blocks, heads, causal):
    for i in range(n_blocks):
        x = transformer_block(x, store, f"{prefix}.blocks.{i}", heads, causal)
    return T.layer_norm(x, store[f"{prefix}.ln_out.gain"], store[f"{prefix}.ln_out.bias"])
