"""Pre-layer-norm encoder-decoder transformer in plain numpy.

Parameters live in a ``dict`` keyed by dotted names, in the order given by
:func:`param_shapes`. The forward pass keeps whatever the backward pass
needs, and :func:`backward` returns exact gradients for every tensor.

Layout of one encoder layer::

    x = x + drop(self_attn(ln1(x)))
    x = x + drop(ffn(ln2(x)))

A decoder layer adds a cross-attention block over the encoder output
between the two. Both stacks end with a final layer norm; the decoder's
output goes through a dense projection to vocabulary logits. Token
embeddings are shared by encoder and decoder, scaled by sqrt(d_model) and
summed with sinusoidal position encodings.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .._util import substream
from ..tokenizer import PAD
from .config import ModelConfig

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class ModelInputError(ValueError):
    pass


def param_shapes(config: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    d, f, v = config.d_model, config.d_ff, config.vocab_size
    shapes: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    shapes["embedding"] = (v, d)

    def ln(prefix):
        shapes[f"{prefix}.gain"] = (d,)
        shapes[f"{prefix}.bias"] = (d,)

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for i in range(config.n_layers):
        p = f"encoder.{i}"
        ln(f"{p}.ln1"), attn(f"{p}.self_attn"), ln(f"{p}.ln2"), ffn(f"{p}.ffn")
    ln("encoder.ln_final")
    for i in range(config.n_layers):
        p = f"decoder.{i}"
        ln(f"{p}.ln1"), attn(f"{p}.self_attn"), ln(f"{p}.ln2"), attn(f"{p}.cross_attn")
        ln(f"{p}.ln3"), ffn(f"{p}.ffn")
    ln("decoder.ln_final")
    shapes["output.weight"] = (d, v)
    shapes["output.bias"] = (v,)
    return shapes


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> "OrderedDict[str, np.ndarray]":
    """Glorot-uniform matrices, unit layer-norm gains, zero biases."""
    rng = substream(seed, "init")
    params: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, shape in param_shapes(config).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=dtype)
        elif len(shape) == 1:
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def positional_encoding(length: int, d_model: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


# -- primitive layers --------------------------------------------------------
# Each *_fwd returns (output, cache); each *_bwd accumulates parameter
# gradients into ``grads`` and returns the input gradient(s).


def _linear_grad(x, dy):
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def _ln_fwd(x, p, name):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * inv
    return xhat * p[f"{name}.gain"] + p[f"{name}.bias"], (xhat, inv)


def _ln_bwd(dy, cache, p, grads, name):
    xhat, inv = cache
    axes = tuple(range(dy.ndim - 1))
    grads[f"{name}.gain"] += (dy * xhat).sum(axes)
    grads[f"{name}.bias"] += dy.sum(axes)
    dxhat = dy * p[f"{name}.gain"]
    return inv * (dxhat - dxhat.mean(-1, keepdims=True) - xhat * (dxhat * xhat).mean(-1, keepdims=True))


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * dh)


def _attn_fwd(xq, xkv, allowed, p, name, n_heads):
    """Multi-head attention; ``allowed`` broadcasts to (batch, q_len, k_len)."""
    q = _split_heads(xq @ p[f"{name}.wq"], n_heads)
    k = _split_heads(xkv @ p[f"{name}.wk"], n_heads)
    v = _split_heads(xkv @ p[f"{name}.wv"], n_heads)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    scores = np.where(allowed[:, None], scores, -np.inf)
    scores = scores - scores.max(-1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(-1, keepdims=True)
    ctx = _merge_heads(probs @ v)
    out = ctx @ p[f"{name}.wo"]
    return out, (xq, xkv, q, k, v, probs, ctx, scale)


def _attn_bwd(dout, cache, p, grads, name, n_heads):
    xq, xkv, q, k, v, probs, ctx, scale = cache
    grads[f"{name}.wo"] += _linear_grad(ctx, dout)
    dctx = _split_heads(dout @ p[f"{name}.wo"].T, n_heads)
    dprobs = dctx @ v.transpose(0, 1, 3, 2)
    dv = probs.transpose(0, 1, 3, 2) @ dctx
    dscores = probs * (dprobs - (dprobs * probs).sum(-1, keepdims=True)) * scale
    dq = _merge_heads(dscores @ k)
    dk = _merge_heads(dscores.transpose(0, 1, 3, 2) @ q)
    dv = _merge_heads(dv)
    grads[f"{name}.wq"] += _linear_grad(xq, dq)
    grads[f"{name}.wk"] += _linear_grad(xkv, dk)
    grads[f"{name}.wv"] += _linear_grad(xkv, dv)
    dxq = dq @ p[f"{name}.wq"].T
    dxkv = dk @ p[f"{name}.wk"].T + dv @ p[f"{name}.wv"].T
    return dxq, dxkv


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x**3))
    return 0.5 * x * (1.0 + t), t


def _gelu_grad(x, t):
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def _ffn_fwd(x, p, name):
    pre = x @ p[f"{name}.w1"] + p[f"{name}.b1"]
    hidden, t = _gelu(pre)
    return hidden @ p[f"{name}.w2"] + p[f"{name}.b2"], (x, pre, t, hidden)


def _ffn_bwd(dy, cache, p, grads, name):
    x, pre, t, hidden = cache
    axes = tuple(range(dy.ndim - 1))
    grads[f"{name}.w2"] += _linear_grad(hidden, dy)
    grads[f"{name}.b2"] += dy.sum(axes)
    dpre = (dy @ p[f"{name}.w2"].T) * _gelu_grad(pre, t)
    grads[f"{name}.w1"] += _linear_grad(x, dpre)
    grads[f"{name}.b1"] += dpre.sum(axes)
    return dpre @ p[f"{name}.w1"].T


class _Dropout:
    """Inverted dropout; a no-op unless training with a positive rate."""

    def __init__(self, rate: float, rng: np.random.Generator | None, active: bool):
        self.rate = rate
        self.rng = rng
        self.active = active and rate > 0.0
        if self.active and rng is None:
            raise ValueError("training with dropout needs a random generator")

    def __call__(self, x):
        if not self.active:
            return x, None
        mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return x * mask, mask

    @staticmethod
    def backward(dy, mask):
        return dy if mask is None else dy * mask


# -- model -------------------------------------------------------------------


def _as_batch(ids, config: ModelConfig, what: str) -> np.ndarray:
    arr = np.asarray(ids)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] == 0:
        raise ModelInputError(f"{what} must be a non-empty (batch, length) array of ids")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ModelInputError(f"{what} ids must be integers")
    if arr.shape[1] > config.max_seq_len:
        raise ModelInputError(f"{what} length {arr.shape[1]} exceeds max_seq_len={config.max_seq_len}")
    if arr.min() < 0 or arr.max() >= config.vocab_size:
        raise ModelInputError(f"{what} contains ids outside [0, {config.vocab_size})")
    return arr.astype(np.int64)


def _embed(ids, params, config):
    table = params["embedding"]
    scale = math.sqrt(config.d_model)
    pe = positional_encoding(ids.shape[1], config.d_model, table.dtype)
    return table[ids] * np.asarray(scale, dtype=table.dtype) + pe


def _embed_bwd(dx, ids, grads, config):
    np.add.at(grads["embedding"], ids, dx * math.sqrt(config.d_model))


def encode(params, config: ModelConfig, src, *, dropout: _Dropout | None = None):
    """Run the encoder stack. Returns (memory, source key mask, cache)."""
    src = _as_batch(src, config, "source")
    dropout = dropout or _Dropout(0.0, None, False)
    h = config.n_heads
    key_mask = (src != PAD)[:, None, :]
    x, m0 = dropout(_embed(src, params, config))
    layers = []
    for i in range(config.n_layers):
        p = f"encoder.{i}"
        a_in, c_ln1 = _ln_fwd(x, params, f"{p}.ln1")
        a_out, c_att = _attn_fwd(a_in, a_in, key_mask, params, f"{p}.self_attn", h)
        a_out, m1 = dropout(a_out)
        x = x + a_out
        f_in, c_ln2 = _ln_fwd(x, params, f"{p}.ln2")
        f_out, c_ffn = _ffn_fwd(f_in, params, f"{p}.ffn")
        f_out, m2 = dropout(f_out)
        x = x + f_out
        layers.append((c_ln1, c_att, m1, c_ln2, c_ffn, m2))
    memory, c_final = _ln_fwd(x, params, "encoder.ln_final")
    return memory, key_mask, {"src": src, "m0": m0, "layers": layers, "final": c_final}


def decode(params, config: ModelConfig, memory, src_key_mask, tgt_in, *, dropout: _Dropout | None = None):
    """Run the decoder stack over ``memory``. Returns (logits, cache)."""
    tgt_in = _as_batch(tgt_in, config, "target")
    dropout = dropout or _Dropout(0.0, None, False)
    h = config.n_heads
    t = tgt_in.shape[1]
    causal = np.tril(np.ones((t, t), dtype=bool))
    self_mask = causal[None] & (tgt_in != PAD)[:, None, :]
    # a query always sees its own position, so no row is fully masked
    self_mask |= np.eye(t, dtype=bool)[None]
    x, m0 = dropout(_embed(tgt_in, params, config))
    layers = []
    for i in range(config.n_layers):
        p = f"decoder.{i}"
        s_in, c_ln1 = _ln_fwd(x, params, f"{p}.ln1")
        s_out, c_self = _attn_fwd(s_in, s_in, self_mask, params, f"{p}.self_attn", h)
        s_out, m1 = dropout(s_out)
        x = x + s_out
        c_in, c_ln2 = _ln_fwd(x, params, f"{p}.ln2")
        c_out, c_cross = _attn_fwd(c_in, memory, src_key_mask, params, f"{p}.cross_attn", h)
        c_out, m2 = dropout(c_out)
        x = x + c_out
        f_in, c_ln3 = _ln_fwd(x, params, f"{p}.ln3")
        f_out, c_ffn = _ffn_fwd(f_in, params, f"{p}.ffn")
        f_out, m3 = dropout(f_out)
        x = x + f_out
        layers.append((c_ln1, c_self, m1, c_ln2, c_cross, m2, c_ln3, c_ffn, m3))
    out, c_final = _ln_fwd(x, params, "decoder.ln_final")
    logits = out @ params["output.weight"] + params["output.bias"]
    return logits, {"tgt": tgt_in, "m0": m0, "layers": layers, "final": c_final, "out": out}


def forward(params, config: ModelConfig, src, tgt_in, *, training: bool = False, rng=None, return_cache: bool = False):
    """Logits of shape (batch, target length, vocab_size).

    With ``return_cache=True`` returns ``(logits, cache)``; the cache holds
    every attention probability tensor under ``cache[...]["layers"]``.
    """
    dropout = _Dropout(config.dropout_rate, rng, training)
    memory, key_mask, enc_cache = encode(params, config, src, dropout=dropout)
    src_arr = enc_cache["src"]
    tgt_arr = _as_batch(tgt_in, config, "target")
    if tgt_arr.shape[0] != src_arr.shape[0]:
        raise ModelInputError("source and target batch sizes differ")
    logits, dec_cache = decode(params, config, memory, key_mask, tgt_arr, dropout=dropout)
    if return_cache:
        return logits, {"encoder": enc_cache, "decoder": dec_cache, "memory": memory}
    return logits


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))


def _loss_and_dlogits(logits, tgt_out):
    tgt_out = np.asarray(tgt_out)
    if tgt_out.ndim == 1:
        tgt_out = tgt_out[None, :]
    if tgt_out.shape != logits.shape[:2]:
        raise ModelInputError(f"target shape {tgt_out.shape} does not match logits {logits.shape[:2]}")
    mask = tgt_out != PAD
    n = int(mask.sum())
    if n == 0:
        raise ModelInputError("target batch contains only padding")
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, tgt_out[..., None], axis=-1)[..., 0]
    value = float(-(picked * mask).sum() / n)
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, tgt_out[..., None], np.take_along_axis(dlogits, tgt_out[..., None], -1) - 1.0, -1)
    dlogits *= (mask / n)[..., None].astype(logits.dtype)
    return value, dlogits, n


def loss(logits, tgt_out) -> float:
    """Mean token cross-entropy over non-PAD target positions."""
    return _loss_and_dlogits(logits, tgt_out)[0]


def backward(params, config: ModelConfig, src, tgt_in, tgt_out, *, training: bool = False, rng=None):
    """Loss and exact gradients for every parameter tensor."""
    logits, cache = forward(params, config, src, tgt_in, training=training, rng=rng, return_cache=True)
    value, dlogits, _ = _loss_and_dlogits(logits, tgt_out)
    grads = OrderedDict((name, np.zeros_like(arr)) for name, arr in params.items())
    enc, dec = cache["encoder"], cache["decoder"]

    grads["output.weight"] += _linear_grad(dec["out"], dlogits)
    grads["output.bias"] += dlogits.sum((0, 1))
    dx = _ln_bwd(dlogits @ params["output.weight"].T, dec["final"], params, grads, "decoder.ln_final")
    dmemory = np.zeros_like(cache["memory"])
    for i in reversed(range(config.n_layers)):
        p = f"decoder.{i}"
        c_ln1, c_self, m1, c_ln2, c_cross, m2, c_ln3, c_ffn, m3 = dec["layers"][i]
        d = _ffn_bwd(_Dropout.backward(dx, m3), c_ffn, params, grads, f"{p}.ffn")
        dx = dx + _ln_bwd(d, c_ln3, params, grads, f"{p}.ln3")
        dq, dkv = _attn_bwd(_Dropout.backward(dx, m2), c_cross, params, grads, f"{p}.cross_attn", config.n_heads)
        dmemory += dkv
        dx = dx + _ln_bwd(dq, c_ln2, params, grads, f"{p}.ln2")
        dq, dkv = _attn_bwd(_Dropout.backward(dx, m1), c_self, params, grads, f"{p}.self_attn", config.n_heads)
        dx = dx + _ln_bwd(dq + dkv, c_ln1, params, grads, f"{p}.ln1")
    _embed_bwd(_Dropout.backward(dx, dec["m0"]), dec["tgt"], grads, config)

    dx = _ln_bwd(dmemory, enc["final"], params, grads, "encoder.ln_final")
    for i in reversed(range(config.n_layers)):
        p = f"encoder.{i}"
        c_ln1, c_att, m1, c_ln2, c_ffn, m2 = enc["layers"][i]
        d = _ffn_bwd(_Dropout.backward(dx, m2), c_ffn, params, grads, f"{p}.ffn")
        dx = dx + _ln_bwd(d, c_ln2, params, grads, f"{p}.ln2")
        dq, dkv = _attn_bwd(_Dropout.backward(dx, m1), c_att, params, grads, f"{p}.self_attn", config.n_heads)
        dx = dx + _ln_bwd(dq + dkv, c_ln1, params, grads, f"{p}.ln1")
    _embed_bwd(_Dropout.backward(dx, enc["m0"]), enc["src"], grads, config)
    return value, grads
