"""Causal multi-head attention: naive reference and tiled streaming kernel.

Two interchangeable forward implementations compute the same math:

* ``naive_attention`` materializes the full seq x seq score matrix per head
  and is the oracle everything else is checked against.
* ``streaming_attention`` walks key tiles with a running row max and running
  denominator, rescaling the accumulator by exp(m_old - m_new) on each tile,
  so only a tile-sized score buffer ever exists.

The streaming kernel has a compiled core (``kidogo._streamattn``, built from
Cython at install time) and a vectorized numpy fallback; whichever is
available is selected at import. The backward pass uses the straightforward
formulation that re-materializes the probability matrix, which is fine at
desk-scale sequence lengths.

Arrays are [n_heads, seq, head_dim]; batch dimensions should be folded into
the head axis. Heads are independent, so callers may split work across heads;
the tile scan within a row is inherently sequential.
"""

from __future__ import annotations

import time

import numpy as np

try:
    from kidogo import _streamattn

    HAVE_COMPILED = True
except ImportError:  # extension not built; pure numpy fallback
    _streamattn = None
    HAVE_COMPILED = False

DEFAULT_TILE = 64


def _check(q, k, v):
    if not (q.shape == k.shape == v.shape) or q.ndim != 3:
        raise ValueError(f"Q/K/V shapes must agree and be 3-d, got {q.shape}")


def default_scale(head_dim: int) -> float:
    return 1.0 / np.sqrt(head_dim)


def naive_attention(q, k, v, scale=None):
    """out_t = sum_{s<=t} softmax_s(scale * q_t . k_s) v_s, full score matrix."""
    _check(q, k, v)
    n_heads, seq, head_dim = q.shape
    if scale is None:
        scale = default_scale(head_dim)
    out = np.empty_like(q)
    mask = np.tril(np.ones((seq, seq), dtype=bool))
    for h in range(n_heads):
        scores = (q[h] @ k[h].T) * scale
        scores = np.where(mask, scores, -np.inf)
        scores -= scores.max(axis=1, keepdims=True)
        p = np.exp(scores)
        p /= p.sum(axis=1, keepdims=True)
        out[h] = p @ v[h]
    return out


def _streaming_numpy(q, k, v, scale, tile):
    n_heads, seq, head_dim = q.shape
    out = np.empty_like(q)
    for h in range(n_heads):
        for t0 in range(0, seq, tile):
            t1 = min(t0 + tile, seq)
            qt = q[h, t0:t1] * scale
            rows = np.arange(t0, t1)[:, None]
            m = np.full(t1 - t0, -np.inf, dtype=q.dtype)
            l = np.zeros(t1 - t0, dtype=q.dtype)
            acc = np.zeros((t1 - t0, head_dim), dtype=q.dtype)
            for s0 in range(0, t1, tile):
                s1 = min(s0 + tile, t1)
                scores = qt @ k[h, s0:s1].T
                cols = np.arange(s0, s1)[None, :]
                scores = np.where(cols <= rows, scores, -np.inf)
                m_new = np.maximum(m, scores.max(axis=1))
                factor = np.exp(m - m_new)
                p = np.exp(scores - m_new[:, None])
                l = l * factor + p.sum(axis=1)
                acc = acc * factor[:, None] + p @ v[h, s0:s1]
                m = m_new
            out[h, t0:t1] = acc / l[:, None]
    return out


def streaming_attention(q, k, v, tile_size=DEFAULT_TILE, scale=None, impl="auto"):
    """Same math as naive_attention, computed tile by tile.

    impl: "auto" picks the compiled kernel when built, "compiled" requires
    it, "numpy" forces the fallback (used by the equivalence tests and the
    benchmark).
    """
    _check(q, k, v)
    if tile_size < 1:
        raise ValueError("tile_size must be >= 1")
    if scale is None:
        scale = default_scale(q.shape[2])
    if impl == "auto":
        impl = "compiled" if HAVE_COMPILED else "numpy"
    if impl == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled attention kernel is not available")
        q, k, v = (np.ascontiguousarray(a) for a in (q, k, v))
        return _streamattn.streaming_attention(q, k, v, float(scale), int(tile_size))
    if impl != "numpy":
        raise ValueError(f"unknown impl {impl!r}")
    return _streaming_numpy(q, k, v, scale, int(tile_size))


def attention_backward(q, k, v, d_out, scale=None):
    """Gradients of naive_attention with respect to Q, K, V."""
    _check(q, k, v)
    n_heads, seq, head_dim = q.shape
    if scale is None:
        scale = default_scale(head_dim)
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    mask = np.tril(np.ones((seq, seq), dtype=bool))
    for h in range(n_heads):
        scores = (q[h] @ k[h].T) * scale
        scores = np.where(mask, scores, -np.inf)
        scores -= scores.max(axis=1, keepdims=True)
        p = np.exp(scores)
        p /= p.sum(axis=1, keepdims=True)
        dv[h] = p.T @ d_out[h]
        dp = d_out[h] @ v[h].T
        ds = p * (dp - (dp * p).sum(axis=1, keepdims=True))
        dq[h] = (ds @ k[h]) * scale
        dk[h] = (ds.T @ q[h]) * scale
    return dq, dk, dv


# --- benchmark ---------------------------------------------------------------


def _score_buffer_bytes(impl, seq, tile, itemsize):
    t = min(tile, seq)
    if impl == "naive":
        return seq * seq * itemsize
    if impl == "numpy":
        return t * t * itemsize
    return t * 8  # compiled kernel: one double-precision row of scores


def benchmark(seq, tile_size=DEFAULT_TILE, n_heads=4, head_dim=64,
              dtype=np.float32, repeats=3, seed=0):
    """Time each implementation on one random problem; returns result rows."""
    rng = np.random.default_rng(seed)
    q, k, v = (rng.standard_normal((n_heads, seq, head_dim)).astype(dtype)
               for _ in range(3))
    runs = [("naive", lambda: naive_attention(q, k, v)),
            ("streaming-numpy",
             lambda: streaming_attention(q, k, v, tile_size, impl="numpy"))]
    if HAVE_COMPILED:
        runs.append(("streaming-compiled",
                     lambda: streaming_attention(q, k, v, tile_size,
                                                 impl="compiled")))
    results = []
    for name, fn in runs:
        fn()  # warm up
        best = min(_timed(fn) for _ in range(repeats))
        results.append({
            "impl": name,
            "seq": seq,
            "tile": tile_size,
            "heads": n_heads,
            "head_dim": head_dim,
            "ms": best * 1e3,
            "score_buffer_bytes": _score_buffer_bytes(
                name.split("-")[-1], seq, tile_size, np.dtype(dtype).itemsize),
        })
    return results


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0
