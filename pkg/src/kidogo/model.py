"""Decoder-only transformer: config, parameters, forward pass, hand-written
backward pass.

Pre-norm residual blocks of causal multi-head attention with rotary position
embeddings followed by a SwiGLU feed-forward, no bias terms anywhere. The
feed-forward weights are shared across layers by default (share_ffn), which
together with untied embeddings is what puts the default configuration at
0.422B parameters.

All math is numpy. Gradients are written out manually op by op so the whole
training loop is inspectable and testable against finite differences; use
float64 stores for gradient checks, float32 for actual training.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from .attention import (DEFAULT_TILE, attention_backward, default_scale,
                        streaming_attention)
from .configio import read_kv, write_kv
from .errors import ConfigInvalid, IdOutOfRange, NumericalDivergence

INIT_STD = 0.02


@dataclass
class ModelConfig:
    hidden_size: int = 2048
    intermediate_size: int = 5632
    n_heads: int = 32
    n_layers: int = 8
    rmsnorm_eps: float = 1e-5
    max_seq_len: int = 2048
    vocab_size: int = 61788
    share_ffn: bool = True
    tie_embeddings: bool = False
    rope_theta: float = 10000.0

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.n_heads

    def validate(self) -> "ModelConfig":
        for f in ("hidden_size", "intermediate_size", "n_heads", "n_layers",
                  "max_seq_len", "vocab_size"):
            if getattr(self, f) <= 0:
                raise ConfigInvalid(f"{f} must be positive")
        if self.hidden_size % self.n_heads:
            raise ConfigInvalid("hidden_size must be divisible by n_heads")
        if self.head_dim % 2:
            raise ConfigInvalid("head_dim must be even for rotary embeddings")
        if self.rmsnorm_eps <= 0 or self.rope_theta <= 0:
            raise ConfigInvalid("rmsnorm_eps and rope_theta must be positive")
        return self

    def to_file(self, path) -> None:
        write_kv(path, {f.name: getattr(self, f.name) for f in fields(self)})

    @classmethod
    def from_file(cls, path) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**read_kv(path, known)).validate()


def count_params(config: ModelConfig) -> int:
    """Exact parameter count in closed form.

    embeddings V*H + attention L*4H^2 + SwiGLU 3*H*I (times L when not
    shared) + norm vectors (2L+1)*H + output head H*V unless tied.
    """
    c = config
    total = c.vocab_size * c.hidden_size
    total += c.n_layers * 4 * c.hidden_size * c.hidden_size
    ffn = 3 * c.hidden_size * c.intermediate_size
    total += ffn if c.share_ffn else ffn * c.n_layers
    total += (2 * c.n_layers + 1) * c.hidden_size
    if not c.tie_embeddings:
        total += c.hidden_size * c.vocab_size
    return total


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    c = config
    shapes: dict[str, tuple[int, ...]] = {"tok_emb": (c.vocab_size, c.hidden_size)}
    for i in range(c.n_layers):
        shapes[f"layers.{i}.attn_norm"] = (c.hidden_size,)
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"layers.{i}.{w}"] = (c.hidden_size, c.hidden_size)
        shapes[f"layers.{i}.ffn_norm"] = (c.hidden_size,)
        if not c.share_ffn:
            shapes[f"layers.{i}.ffn.w_gate"] = (c.hidden_size, c.intermediate_size)
            shapes[f"layers.{i}.ffn.w_up"] = (c.hidden_size, c.intermediate_size)
            shapes[f"layers.{i}.ffn.w_down"] = (c.intermediate_size, c.hidden_size)
    if c.share_ffn:
        shapes["ffn.w_gate"] = (c.hidden_size, c.intermediate_size)
        shapes["ffn.w_up"] = (c.hidden_size, c.intermediate_size)
        shapes["ffn.w_down"] = (c.intermediate_size, c.hidden_size)
    shapes["final_norm"] = (c.hidden_size,)
    if not c.tie_embeddings:
        shapes["lm_head"] = (c.hidden_size, c.vocab_size)
    return shapes


@dataclass
class ParamStore:
    """Named dense tensors plus the config their shapes derive from."""

    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self.tensors[name] = value

    def names(self) -> list[str]:
        return sorted(self.tensors)

    def zeros_like(self) -> "ParamStore":
        return ParamStore(self.config,
                          {n: np.zeros_like(t) for n, t in self.tensors.items()})

    def astype(self, dtype) -> "ParamStore":
        return ParamStore(self.config,
                          {n: t.astype(dtype) for n, t in self.tensors.items()})

    def ffn_name(self, layer: int, which: str) -> str:
        if self.config.share_ffn:
            return f"ffn.{which}"
        return f"layers.{layer}.ffn.{which}"


def _trunc_normal(rng, shape, std):
    x = rng.standard_normal(shape) * std
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum())) * std
        bad = np.abs(x) > 2 * std
    return x


def init_params(config: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Truncated normal (std 0.02, cut at 2 sigma) weights, unit norm scales.

    Tensors are drawn in sorted-name order so the result is a pure function
    of (config, seed).
    """
    config.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore(config)
    for name, shape in sorted(param_shapes(config).items()):
        if name.endswith("_norm"):
            store[name] = np.ones(shape, dtype=dtype)
        else:
            store[name] = _trunc_normal(rng, shape, INIT_STD).astype(dtype)
    return store


@dataclass
class TokenBatch:
    """[batch, seq] token ids; targets are the ids shifted left by one with
    the final position masked. loss_mask marks real (non-pad) tokens."""

    token_ids: np.ndarray
    loss_mask: np.ndarray | None = None

    def validate(self, config: ModelConfig) -> "TokenBatch":
        ids = np.asarray(self.token_ids)
        if ids.ndim != 2:
            raise ConfigInvalid("token_ids must be [batch, seq]")
        if ids.shape[1] > config.max_seq_len:
            raise ConfigInvalid(
                f"seq {ids.shape[1]} exceeds max_seq_len {config.max_seq_len}")
        if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
            raise IdOutOfRange(
                f"token id outside [0, {config.vocab_size})")
        if self.loss_mask is not None and self.loss_mask.shape != ids.shape:
            raise ConfigInvalid("loss_mask shape must match token_ids")
        return self


# --- elementary ops ----------------------------------------------------------


def rmsnorm(x, w, eps):
    """out_i = w_i * x_i / sqrt(mean_j x_j^2 + eps), over the last axis."""
    ms = np.mean(np.square(x), axis=-1, keepdims=True)
    return x * w / np.sqrt(ms + eps)


def _rmsnorm_cache(x, w, eps):
    inv = 1.0 / np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + eps)
    return x * w * inv, inv


def _rmsnorm_backward(dy, x, w, inv):
    h = x.shape[-1]
    dw = np.sum(dy * x * inv, axis=tuple(range(x.ndim - 1)))
    inner = np.sum(dy * w * x, axis=-1, keepdims=True)
    dx = dy * w * inv - x * (inv ** 3) * inner / h
    return dx, dw


def silu(x):
    return x / (1.0 + np.exp(-x))


def swiglu(x, w_gate, w_up, w_down):
    """W_down applied to silu(x W_gate) elementwise-times (x W_up)."""
    return (silu(x @ w_gate) * (x @ w_up)) @ w_down


def swiglu_backward(d_out, x, w_gate, w_up, w_down, g=None, u=None, sg=None):
    """Gradients of swiglu wrt x and all three weight matrices.

    Leading axes of x/d_out are folded for the weight gradients. g, u, sg
    are the forward intermediates; recomputed when not supplied.
    """
    if g is None:
        g = x @ w_gate
    if u is None:
        u = x @ w_up
    if sg is None:
        sg = silu(g)
    flat = (-1, x.shape[-1])
    x2 = x.reshape(flat)
    d2 = d_out.reshape(-1, d_out.shape[-1])
    dwd = (sg * u).reshape(-1, g.shape[-1]).T @ d2
    dh = d_out @ w_down.T
    du = dh * sg
    sig = 1.0 / (1.0 + np.exp(-g))
    dg = dh * u * sig * (1.0 + g * (1.0 - sig))
    dwg = x2.T @ dg.reshape(-1, g.shape[-1])
    dwu = x2.T @ du.reshape(-1, g.shape[-1])
    dx = dg @ w_gate.T + du @ w_up.T
    return dx, dwg, dwu, dwd


def _rope_tables(positions, head_dim, theta, dtype):
    inv_freq = theta ** (-np.arange(0, head_dim, 2, dtype=np.float64) / head_dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * inv_freq[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def _rotate_pairs(x, cos, sin, inverse=False):
    # x: [T, ..., head_dim]; cos/sin: [T, head_dim/2] broadcast over middle axes
    shape = (x.shape[0],) + (1,) * (x.ndim - 2) + (x.shape[-1] // 2,)
    c = cos.reshape(shape)
    s = sin.reshape(shape)
    if inverse:
        s = -s
    x1, x2 = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = x1 * c - x2 * s
    out[..., 1::2] = x1 * s + x2 * c
    return out


def apply_rope(x, positions, theta=10000.0, inverse=False):
    """Rotate consecutive dimension pairs of x[t] by positions[t] * theta^(-2i/d).

    x is [seq, ..., head_dim] with head_dim even. The rotation preserves the
    norm of every pair, and dot products of rotated queries and keys depend
    only on the position difference. inverse=True undoes the rotation (used
    by the backward pass).
    """
    if x.shape[-1] % 2:
        raise ConfigInvalid("head_dim must be even for rotary embeddings")
    cos, sin = _rope_tables(positions, x.shape[-1], theta, x.dtype)
    return _rotate_pairs(x, cos, sin, inverse=inverse)


# --- forward / backward ------------------------------------------------------


def _forward(params: ParamStore, ids: np.ndarray, tile_size: int,
             want_cache: bool):
    cfg = params.config
    B, T = ids.shape
    H, nh, hd = cfg.hidden_size, cfg.n_heads, cfg.head_dim
    dtype = params["tok_emb"].dtype
    cos, sin = _rope_tables(np.arange(T), hd, cfg.rope_theta, dtype)
    scale = default_scale(hd)

    x = params["tok_emb"][ids]
    caches = []
    for layer in range(cfg.n_layers):
        p = lambda w: params[f"layers.{layer}.{w}"]
        x_pre = x
        a_in, a_inv = _rmsnorm_cache(x, p("attn_norm"), cfg.rmsnorm_eps)
        q = (a_in @ p("wq")).reshape(B, T, nh, hd)
        k = (a_in @ p("wk")).reshape(B, T, nh, hd)
        v = (a_in @ p("wv")).reshape(B, T, nh, hd)
        q = _rotate_pairs(q.swapaxes(0, 1), cos, sin).swapaxes(0, 1)
        k = _rotate_pairs(k.swapaxes(0, 1), cos, sin).swapaxes(0, 1)
        qf = np.ascontiguousarray(q.transpose(0, 2, 1, 3).reshape(B * nh, T, hd))
        kf = np.ascontiguousarray(k.transpose(0, 2, 1, 3).reshape(B * nh, T, hd))
        vf = np.ascontiguousarray(v.transpose(0, 2, 1, 3).reshape(B * nh, T, hd))
        of = streaming_attention(qf, kf, vf, tile_size=tile_size, scale=scale)
        attn_out = of.reshape(B, nh, T, hd).transpose(0, 2, 1, 3).reshape(B, T, H)
        x_attn = x + attn_out @ p("wo")

        f_in, f_inv = _rmsnorm_cache(x_attn, p("ffn_norm"), cfg.rmsnorm_eps)
        g = f_in @ params[params.ffn_name(layer, "w_gate")]
        u = f_in @ params[params.ffn_name(layer, "w_up")]
        sg = silu(g)
        x = x_attn + (sg * u) @ params[params.ffn_name(layer, "w_down")]
        if want_cache:
            caches.append(dict(x_pre=x_pre, a_in=a_in, a_inv=a_inv, qf=qf,
                               kf=kf, vf=vf, attn_out=attn_out, x_attn=x_attn,
                               f_in=f_in, f_inv=f_inv, g=g, u=u, sg=sg))
    xf, f_inv = _rmsnorm_cache(x, params["final_norm"], cfg.rmsnorm_eps)
    head = params["tok_emb"].T if cfg.tie_embeddings else params["lm_head"]
    logits = xf @ head
    cache = dict(layers=caches, x_final=x, xf=xf, final_inv=f_inv,
                 cos=cos, sin=sin, scale=scale) if want_cache else None
    return logits, cache


def forward(params: ParamStore, batch: TokenBatch,
            tile_size: int = DEFAULT_TILE) -> np.ndarray:
    """Logits [batch, seq, vocab]; position t sees ids[0..t] only."""
    batch.validate(params.config)
    logits, _ = _forward(params, np.asarray(batch.token_ids), tile_size, False)
    return logits


def _target_mask(batch: TokenBatch) -> np.ndarray:
    ids = np.asarray(batch.token_ids)
    valid = np.zeros(ids.shape, dtype=bool)
    valid[:, :-1] = True  # final position has no target
    if batch.loss_mask is not None:
        valid[:, :-1] &= np.asarray(batch.loss_mask, dtype=bool)[:, 1:]
    return valid


def target_count(batch: TokenBatch) -> int:
    """Number of positions that contribute to the loss."""
    return int(_target_mask(batch).sum())


def cross_entropy(logits: np.ndarray, batch: TokenBatch) -> float:
    """Mean token cross-entropy against the left-shifted targets."""
    ids = np.asarray(batch.token_ids)
    valid = _target_mask(batch)
    shifted = logits[:, :-1]
    targets = ids[:, 1:]
    m = shifted.max(axis=-1, keepdims=True)
    logz = m + np.log(np.exp(shifted - m).sum(axis=-1, keepdims=True))
    logp = np.take_along_axis(shifted - logz, targets[..., None], axis=-1)[..., 0]
    n = int(valid.sum())
    if n == 0:
        raise ConfigInvalid("batch has no unmasked target positions")
    loss = float(-(logp * valid[:, :-1]).sum() / n)
    if not np.isfinite(loss):
        raise NumericalDivergence(f"loss is {loss}")
    return loss


def loss_and_grads(params: ParamStore, batch: TokenBatch,
                   tile_size: int = DEFAULT_TILE):
    """Mean token cross-entropy plus gradients for every parameter tensor."""
    cfg = params.config
    batch.validate(cfg)
    ids = np.asarray(batch.token_ids)
    if ids.shape[1] < 2:
        raise ConfigInvalid("need at least 2 tokens per row to form targets")
    B, T = ids.shape
    H, nh, hd = cfg.hidden_size, cfg.n_heads, cfg.head_dim

    logits, cache = _forward(params, ids, tile_size, True)
    loss = cross_entropy(logits, batch)

    valid = _target_mask(batch)
    n = int(valid.sum())
    targets = ids[:, 1:]
    shifted = logits[:, :-1]
    m = shifted.max(axis=-1, keepdims=True)
    e = np.exp(shifted - m)
    probs = e / e.sum(axis=-1, keepdims=True)
    d_logits = np.zeros_like(logits)
    d_shift = probs
    np.put_along_axis(
        d_shift, targets[..., None],
        np.take_along_axis(d_shift, targets[..., None], axis=-1) - 1.0, axis=-1)
    d_shift *= valid[:, :-1, None] / n
    d_logits[:, :-1] = d_shift

    grads = params.zeros_like()
    xf2 = cache["xf"].reshape(B * T, H)
    dl2 = d_logits.reshape(B * T, -1)
    if cfg.tie_embeddings:
        grads["tok_emb"] += dl2.T @ xf2
        head = params["tok_emb"].T
    else:
        grads["lm_head"] += xf2.T @ dl2
        head = params["lm_head"]
    d_xf = d_logits @ head.T

    dx, dw = _rmsnorm_backward(d_xf, cache["x_final"], params["final_norm"],
                               cache["final_inv"])
    grads["final_norm"] += dw

    cos, sin, scale = cache["cos"], cache["sin"], cache["scale"]
    for layer in reversed(range(cfg.n_layers)):
        c = cache["layers"][layer]
        p = lambda w: params[f"layers.{layer}.{w}"]
        gname = lambda w: f"layers.{layer}.{w}"

        # feed-forward block
        d_f_in, dwg, dwu, dwd = swiglu_backward(
            dx, c["f_in"], params[params.ffn_name(layer, "w_gate")],
            params[params.ffn_name(layer, "w_up")],
            params[params.ffn_name(layer, "w_down")],
            g=c["g"], u=c["u"], sg=c["sg"])
        grads[params.ffn_name(layer, "w_gate")] += dwg
        grads[params.ffn_name(layer, "w_up")] += dwu
        grads[params.ffn_name(layer, "w_down")] += dwd
        d_x_attn, dw = _rmsnorm_backward(d_f_in, c["x_attn"], p("ffn_norm"),
                                         c["f_inv"])
        grads[gname("ffn_norm")] += dw
        dx = dx + d_x_attn

        # attention block
        attn2 = c["attn_out"].reshape(B * T, H)
        grads[gname("wo")] += attn2.T @ dx.reshape(B * T, H)
        d_attn = dx @ p("wo").T
        d_of = np.ascontiguousarray(
            d_attn.reshape(B, T, nh, hd).transpose(0, 2, 1, 3)
            .reshape(B * nh, T, hd))
        dqf, dkf, dvf = attention_backward(c["qf"], c["kf"], c["vf"], d_of,
                                           scale=scale)
        def unfold(a):
            return a.reshape(B, nh, T, hd).transpose(0, 2, 1, 3)
        dq = _rotate_pairs(unfold(dqf).swapaxes(0, 1), cos, sin,
                           inverse=True).swapaxes(0, 1).reshape(B, T, H)
        dk = _rotate_pairs(unfold(dkf).swapaxes(0, 1), cos, sin,
                           inverse=True).swapaxes(0, 1).reshape(B, T, H)
        dv = unfold(dvf).reshape(B, T, H)
        a_in2 = c["a_in"].reshape(B * T, H)
        grads[gname("wq")] += a_in2.T @ dq.reshape(B * T, H)
        grads[gname("wk")] += a_in2.T @ dk.reshape(B * T, H)
        grads[gname("wv")] += a_in2.T @ dv.reshape(B * T, H)
        d_a_in = dq @ p("wq").T + dk @ p("wk").T + dv @ p("wv").T
        d_res, dw = _rmsnorm_backward(d_a_in, c["x_pre"], p("attn_norm"),
                                      c["a_inv"])
        grads[gname("attn_norm")] += dw
        dx = dx + d_res

    d_emb = np.zeros_like(params["tok_emb"])
    np.add.at(d_emb, ids, dx)
    grads["tok_emb"] += d_emb

    for name in grads.names():
        if not np.all(np.isfinite(grads[name])):
            raise NumericalDivergence(f"non-finite gradient in {name}")
    return loss, grads
