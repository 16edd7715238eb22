"""Dense-tensor kernels for the model math.

All public operations work on C-contiguous float64 ``numpy`` arrays of rank
1-3 ("tensors": a flat row-major buffer plus shape metadata).  Shapes are
always explicit; there is no broadcasting.  Incompatible shapes raise
:class:`~mvlstm.errors.DimensionError` naming both operands.

The contraction kernels that dominate training time exist in two
interchangeable implementations:

* a ``numba`` ``@njit`` loop version (default when numba is importable), and
* a pure-numpy ``einsum`` version.

Set the environment variable ``MVLSTM_PURE_NUMPY=1`` before import to force
the numpy path.  ``BACKEND`` records which path is active, and both families
stay importable (``IMPLS``) so they can be benchmarked against each other;
see ``benchmarks/bench_kernels.py``.

Batched kernel variants carry an explicit leading batch axis ``B`` so a whole
mini-batch is contracted in one call; the rank-limited public operations are
the ``B == 1`` case of the same kernels.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import DimensionError

_PURE_NUMPY_ENV = "MVLSTM_PURE_NUMPY"


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


# ---------------------------------------------------------------------------
# numpy implementations of the hot contraction kernels
# ---------------------------------------------------------------------------
# Shapes use: B batch, N variables, p/q/K per-variable widths, Tm attention
# steps.  d* functions are the adjoints used by reverse-mode differentiation.


def _np_tdot(w, h):
    # w: [N,p,q], h: [B,N,q] -> [B,N,p];  out[b,n,i] = sum_j w[n,i,j] h[b,n,j]
    return np.einsum("npq,bnq->bnp", w, h)


def _np_tdot_dw(g, h):
    return np.einsum("bnp,bnq->npq", g, h)


def _np_tdot_dh(g, w):
    return np.einsum("bnp,npq->bnq", g, w)


def _np_rowdot(ws, h):
    # ws: [N,K], h: [B,N,K] -> [B,N];  out[b,n] = sum_k ws[n,k] h[b,n,k]
    return np.einsum("nk,bnk->bn", ws, h)


def _np_rowdot_dw(g, h):
    return np.einsum("bn,bnk->nk", g, h)


def _np_rowdot_dh(g, ws):
    return g[:, :, None] * ws[None, :, :]


def _np_shared_dot(wv, h):
    # wv: [K], h: [B,N,K] -> [B,N];  same weight vector for every variable
    return np.einsum("k,bnk->bn", wv, h)


def _np_shared_dot_dw(g, h):
    return np.einsum("bn,bnk->k", g, h)


def _np_shared_dot_dh(g, wv):
    return g[:, :, None] * wv[None, None, :]


def _np_var_product(wx, x):
    # wx: [N,d], x: [B,N] -> [B,N,d];  out[b,n,k] = wx[n,k] x[b,n]
    return wx[None, :, :] * x[:, :, None]


def _np_var_product_dw(g, x):
    return np.einsum("bnd,bn->nd", g, x)


def _np_var_product_dx(g, wx):
    return np.einsum("bnd,nd->bn", g, wx)


def _np_attn_mix(a, hs):
    # a: [B,N,Tm], hs: [Tm,B,N,d] -> [B,N,d];  out = sum_t a[..,t] hs[t]
    return np.einsum("bnt,tbnd->bnd", a, hs)


def _np_attn_mix_da(g, hs):
    return np.einsum("bnd,tbnd->bnt", g, hs)


def _np_attn_mix_dh(g, a):
    return np.einsum("bnd,bnt->tbnd", g, a)


def _np_softmax_last(e):
    # softmax over the last axis with max subtraction for stability
    m = np.max(e, axis=-1, keepdims=True)
    ex = np.exp(e - m)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def _np_softmax_last_vjp(y, g):
    # full Jacobian-vector product per row: y * (g - <g,y>)
    dot = np.sum(g * y, axis=-1, keepdims=True)
    return y * (g - dot)


_NUMPY_IMPL = {
    "tdot": _np_tdot,
    "tdot_dw": _np_tdot_dw,
    "tdot_dh": _np_tdot_dh,
    "rowdot": _np_rowdot,
    "rowdot_dw": _np_rowdot_dw,
    "rowdot_dh": _np_rowdot_dh,
    "shared_dot": _np_shared_dot,
    "shared_dot_dw": _np_shared_dot_dw,
    "shared_dot_dh": _np_shared_dot_dh,
    "var_product": _np_var_product,
    "var_product_dw": _np_var_product_dw,
    "var_product_dx": _np_var_product_dx,
    "attn_mix": _np_attn_mix,
    "attn_mix_da": _np_attn_mix_da,
    "attn_mix_dh": _np_attn_mix_dh,
    "softmax_last": _np_softmax_last,
    "softmax_last_vjp": _np_softmax_last_vjp,
}


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

def _build_numba_impl():
    from numba import njit

    @njit(cache=True)
    def nb_tdot(w, h):
        B, N, q = h.shape
        p = w.shape[1]
        out = np.zeros((B, N, p))
        for b in range(B):
            for n in range(N):
                for i in range(p):
                    acc = 0.0
                    for j in range(q):
                        acc += w[n, i, j] * h[b, n, j]
                    out[b, n, i] = acc
        return out

    @njit(cache=True)
    def nb_tdot_dw(g, h):
        B, N, p = g.shape
        q = h.shape[2]
        out = np.zeros((N, p, q))
        for b in range(B):
            for n in range(N):
                for i in range(p):
                    for j in range(q):
                        out[n, i, j] += g[b, n, i] * h[b, n, j]
        return out

    @njit(cache=True)
    def nb_tdot_dh(g, w):
        B, N, p = g.shape
        q = w.shape[2]
        out = np.zeros((B, N, q))
        for b in range(B):
            for n in range(N):
                for j in range(q):
                    acc = 0.0
                    for i in range(p):
                        acc += g[b, n, i] * w[n, i, j]
                    out[b, n, j] = acc
        return out

    @njit(cache=True)
    def nb_rowdot(ws, h):
        B, N, K = h.shape
        out = np.zeros((B, N))
        for b in range(B):
            for n in range(N):
                acc = 0.0
                for k in range(K):
                    acc += ws[n, k] * h[b, n, k]
                out[b, n] = acc
        return out

    @njit(cache=True)
    def nb_rowdot_dw(g, h):
        B, N, K = h.shape
        out = np.zeros((N, K))
        for b in range(B):
            for n in range(N):
                for k in range(K):
                    out[n, k] += g[b, n] * h[b, n, k]
        return out

    @njit(cache=True)
    def nb_rowdot_dh(g, ws):
        B, N = g.shape
        K = ws.shape[1]
        out = np.empty((B, N, K))
        for b in range(B):
            for n in range(N):
                for k in range(K):
                    out[b, n, k] = g[b, n] * ws[n, k]
        return out

    @njit(cache=True)
    def nb_shared_dot(wv, h):
        B, N, K = h.shape
        out = np.zeros((B, N))
        for b in range(B):
            for n in range(N):
                acc = 0.0
                for k in range(K):
                    acc += wv[k] * h[b, n, k]
                out[b, n] = acc
        return out

    @njit(cache=True)
    def nb_shared_dot_dw(g, h):
        B, N, K = h.shape
        out = np.zeros(K)
        for b in range(B):
            for n in range(N):
                for k in range(K):
                    out[k] += g[b, n] * h[b, n, k]
        return out

    @njit(cache=True)
    def nb_shared_dot_dh(g, wv):
        B, N = g.shape
        K = wv.shape[0]
        out = np.empty((B, N, K))
        for b in range(B):
            for n in range(N):
                for k in range(K):
                    out[b, n, k] = g[b, n] * wv[k]
        return out

    @njit(cache=True)
    def nb_var_product(wx, x):
        B, N = x.shape
        d = wx.shape[1]
        out = np.empty((B, N, d))
        for b in range(B):
            for n in range(N):
                for k in range(d):
                    out[b, n, k] = wx[n, k] * x[b, n]
        return out

    @njit(cache=True)
    def nb_var_product_dw(g, x):
        B, N, d = g.shape
        out = np.zeros((N, d))
        for b in range(B):
            for n in range(N):
                for k in range(d):
                    out[n, k] += g[b, n, k] * x[b, n]
        return out

    @njit(cache=True)
    def nb_var_product_dx(g, wx):
        B, N, d = g.shape
        out = np.zeros((B, N))
        for b in range(B):
            for n in range(N):
                acc = 0.0
                for k in range(d):
                    acc += g[b, n, k] * wx[n, k]
                out[b, n] = acc
        return out

    @njit(cache=True)
    def nb_attn_mix(a, hs):
        Tm, B, N, d = hs.shape
        out = np.zeros((B, N, d))
        for t in range(Tm):
            for b in range(B):
                for n in range(N):
                    w = a[b, n, t]
                    for k in range(d):
                        out[b, n, k] += w * hs[t, b, n, k]
        return out

    @njit(cache=True)
    def nb_attn_mix_da(g, hs):
        Tm, B, N, d = hs.shape
        out = np.zeros((B, N, Tm))
        for t in range(Tm):
            for b in range(B):
                for n in range(N):
                    acc = 0.0
                    for k in range(d):
                        acc += g[b, n, k] * hs[t, b, n, k]
                    out[b, n, t] = acc
        return out

    @njit(cache=True)
    def nb_attn_mix_dh(g, a):
        B, N, Tm = a.shape
        d = g.shape[2]
        out = np.empty((Tm, B, N, d))
        for t in range(Tm):
            for b in range(B):
                for n in range(N):
                    w = a[b, n, t]
                    for k in range(d):
                        out[t, b, n, k] = w * g[b, n, k]
        return out

    @njit(cache=True)
    def nb_softmax_last_vjp(y, g):
        yf = y.reshape(-1, y.shape[-1])
        gf = g.reshape(-1, g.shape[-1])
        out = np.empty_like(yf)
        R, C = yf.shape
        for r in range(R):
            dot = 0.0
            for c in range(C):
                dot += gf[r, c] * yf[r, c]
            for c in range(C):
                out[r, c] = yf[r, c] * (gf[r, c] - dot)
        return out.reshape(y.shape)

    return {
        "tdot": nb_tdot,
        "tdot_dw": nb_tdot_dw,
        "tdot_dh": nb_tdot_dh,
        "rowdot": nb_rowdot,
        "rowdot_dw": nb_rowdot_dw,
        "rowdot_dh": nb_rowdot_dh,
        "shared_dot": nb_shared_dot,
        "shared_dot_dw": nb_shared_dot_dw,
        "shared_dot_dh": nb_shared_dot_dh,
        "var_product": nb_var_product,
        "var_product_dw": nb_var_product_dw,
        "var_product_dx": nb_var_product_dx,
        "attn_mix": nb_attn_mix,
        "attn_mix_da": nb_attn_mix_da,
        "attn_mix_dh": nb_attn_mix_dh,
        # softmax forward stays numpy in both backends: its cost is the
        # exponential, where numpy's vectorized exp beats scalar libm calls
        "softmax_last": _np_softmax_last,
        "softmax_last_vjp": nb_softmax_last_vjp,
    }


def _select_backend():
    if os.environ.get(_PURE_NUMPY_ENV, "").strip() not in ("", "0"):
        return "numpy", _NUMPY_IMPL
    try:
        impl = _build_numba_impl()
    except ImportError:
        return "numpy", _NUMPY_IMPL
    return "numba", impl


BACKEND, _ACTIVE = _select_backend()
IMPLS = {"numpy": _NUMPY_IMPL}
if BACKEND == "numba":
    IMPLS["numba"] = _ACTIVE

tdot = _ACTIVE["tdot"]
tdot_dw = _ACTIVE["tdot_dw"]
tdot_dh = _ACTIVE["tdot_dh"]
rowdot = _ACTIVE["rowdot"]
rowdot_dw = _ACTIVE["rowdot_dw"]
rowdot_dh = _ACTIVE["rowdot_dh"]
shared_dot = _ACTIVE["shared_dot"]
shared_dot_dw = _ACTIVE["shared_dot_dw"]
shared_dot_dh = _ACTIVE["shared_dot_dh"]
var_product_batched = _ACTIVE["var_product"]
var_product_dw = _ACTIVE["var_product_dw"]
var_product_dx = _ACTIVE["var_product_dx"]
attn_mix = _ACTIVE["attn_mix"]
attn_mix_da = _ACTIVE["attn_mix_da"]
attn_mix_dh = _ACTIVE["attn_mix_dh"]
softmax_last = _ACTIVE["softmax_last"]
softmax_last_vjp = _ACTIVE["softmax_last_vjp"]


# ---------------------------------------------------------------------------
# public rank-limited operations
# ---------------------------------------------------------------------------


def tensordot_axisN(w, h) -> np.ndarray:
    """Per-variable matrix-vector product: out[n] = w[n] @ h[n].

    ``w`` has shape [N,p,q] (one matrix per variable), ``h`` has shape [N,q].
    Returns [N,p].
    """
    w, h = _f64(w), _f64(h)
    _require(w.ndim == 3 and h.ndim == 2,
             f"tensordot_axisN expects ranks (3,2), got shapes {w.shape} and {h.shape}")
    _require(w.shape[0] == h.shape[0] and w.shape[2] == h.shape[1],
             f"tensordot_axisN shape mismatch: w {w.shape} vs h {h.shape}")
    return tdot(w, h[None])[0]


def tensordot_seq(a, hs) -> np.ndarray:
    """Temporal mix of a hidden-state sequence: out[n] = sum_t a[n,t] hs[t,n].

    ``a`` has shape [N,T1], ``hs`` has shape [T1,N,d].  Returns [N,d].
    """
    a, hs = _f64(a), _f64(hs)
    _require(a.ndim == 2 and hs.ndim == 3,
             f"tensordot_seq expects ranks (2,3), got shapes {a.shape} and {hs.shape}")
    _require(a.shape[1] == hs.shape[0] and a.shape[0] == hs.shape[1],
             f"tensordot_seq shape mismatch: a {a.shape} vs hs {hs.shape}")
    return attn_mix(a[None], np.ascontiguousarray(hs[:, None]))[0]


def var_product(wx, x) -> np.ndarray:
    """Scale each weight row by its variable's scalar input: out[n] = wx[n] * x[n]."""
    wx, x = _f64(wx), _f64(x)
    _require(wx.ndim == 2 and x.ndim == 1,
             f"var_product expects ranks (2,1), got shapes {wx.shape} and {x.shape}")
    _require(wx.shape[0] == x.shape[0],
             f"var_product shape mismatch: wx {wx.shape} vs x {x.shape}")
    return var_product_batched(wx, x[None])[0]


def matmul(a, b) -> np.ndarray:
    """Matrix-vector product [m,k] @ [k] -> [m]."""
    a, b = _f64(a), _f64(b)
    _require(a.ndim == 2 and b.ndim == 1,
             f"matmul expects ranks (2,1), got shapes {a.shape} and {b.shape}")
    _require(a.shape[1] == b.shape[0],
             f"matmul shape mismatch: {a.shape} vs {b.shape}")
    return a @ b


def softmax_rows(e) -> np.ndarray:
    """Row-wise softmax of a [N,T1] score matrix, max-subtracted for stability."""
    e = _f64(e)
    _require(e.ndim == 2, f"softmax_rows expects rank 2, got shape {e.shape}")
    return softmax_last(e)


def vec(h) -> np.ndarray:
    """Flatten [N,d] to [N*d] variable-major: all d entries of variable 0 first."""
    h = _f64(h)
    _require(h.ndim == 2, f"vec expects rank 2, got shape {h.shape}")
    return h.reshape(-1)


def matricize(v, n: int, d: int) -> np.ndarray:
    """Inverse of :func:`vec`: reshape [n*d] back to [n,d]."""
    v = _f64(v)
    _require(v.ndim == 1, f"matricize expects rank 1, got shape {v.shape}")
    _require(v.shape[0] == n * d,
             f"matricize length {v.shape[0]} != {n}*{d}")
    return v.reshape(n, d)


def concat(arrays, axis: int = 0) -> np.ndarray:
    """Concatenate tensors along an existing axis (shapes must agree elsewhere)."""
    arrays = [_f64(a) for a in arrays]
    _require(len(arrays) > 0, "concat of zero tensors")
    nd = arrays[0].ndim
    for a in arrays[1:]:
        _require(a.ndim == nd, f"concat rank mismatch: {arrays[0].shape} vs {a.shape}")
        for ax in range(nd):
            if ax != axis % nd:
                _require(a.shape[ax] == arrays[0].shape[ax],
                         f"concat shape mismatch on axis {ax}: {arrays[0].shape} vs {a.shape}")
    return np.concatenate(arrays, axis=axis)


def reshape(a, shape) -> np.ndarray:
    """Row-major reshape; total element count must be preserved."""
    a = _f64(a)
    target = tuple(int(s) for s in shape)
    _require(int(np.prod(target)) == a.size,
             f"reshape from {a.shape} to {target} changes element count")
    return a.reshape(target)


def add(a, b) -> np.ndarray:
    a, b = _f64(a), _f64(b)
    _require(a.shape == b.shape, f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = _f64(a), _f64(b)
    _require(a.shape == b.shape, f"sub shape mismatch: {a.shape} vs {b.shape}")
    return a - b


def mul(a, b) -> np.ndarray:
    a, b = _f64(a), _f64(b)
    _require(a.shape == b.shape, f"mul shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def tanh(a) -> np.ndarray:
    return np.tanh(_f64(a))


def sigmoid(a) -> np.ndarray:
    """Elementwise logistic function via tanh: overflow-free for any input."""
    return 0.5 * (1.0 + np.tanh(0.5 * _f64(a)))


def logsumexp_last(s) -> np.ndarray:
    """log(sum(exp(s))) over the last axis, max-shifted.

    Exact for a single-element axis: reduces to the element itself.
    """
    s = _f64(s)
    m = np.max(s, axis=-1, keepdims=True)
    return (m + np.log(np.sum(np.exp(s - m), axis=-1, keepdims=True)))[..., 0]
