"""Tape-based reverse-mode differentiation over the kernel operations.

A :class:`Tape` records a DAG of :class:`Node` objects in construction order,
so node ids are already topological.  ``backward`` walks the tape in strictly
decreasing id order and accumulates parent gradients in that fixed order,
which makes gradients bit-reproducible for an identical tape.

Activations may carry an explicit leading batch axis; parameters never do.
Operations whose output is batched but whose parameter input is not sum their
parameter adjoint over the batch axis.  Constant leaves (inputs, dropout
masks) are not differentiated: gradient flow stops at any node with no
parameter ancestor.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import kernels as K
from .errors import ContractError, DimensionError


class Node:
    """One recorded value: id, op tag, parents, forward value, vjp closure."""

    __slots__ = ("idx", "op", "value", "parents", "vjp", "tape", "track")

    def __init__(self, idx, op, value, parents, vjp, tape, track):
        self.idx = idx
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp
        self.tape = tape
        self.track = track

    @property
    def shape(self):
        return self.value.shape


class Tape:
    """Ordered op recording plus named parameter leaves."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def _emit(self, op: str, value: np.ndarray, parents: tuple,
              vjp: Optional[Callable], track: Optional[bool] = None) -> Node:
        for p in parents:
            if p.tape is not self:
                raise ContractError(f"input node of op '{op}' is not on this tape")
        if track is None:
            track = any(p.track for p in parents)
        node = Node(len(self.nodes), op, value, parents, vjp, self, track)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return self._emit("const", np.asarray(value, dtype=np.float64), (), None, track=False)

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ContractError(f"duplicate parameter name '{name}'")
        node = self._emit("param", np.asarray(value, dtype=np.float64), (), None, track=True)
        self.params[name] = node
        return node

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss with respect to every parameter leaf."""
        if loss.tape is not self:
            raise ContractError("loss node is not on this tape")
        if loss.value.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: list[Optional[np.ndarray]] = [None] * len(self.nodes)
        grads[loss.idx] = np.ones_like(loss.value)
        for node in reversed(self.nodes[: loss.idx + 1]):
            g = grads[node.idx]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None or not parent.track:
                    continue
                acc = grads[parent.idx]
                grads[parent.idx] = pg if acc is None else acc + pg
        out = {}
        for name, node in self.params.items():
            g = grads[node.idx]
            out[name] = np.zeros_like(node.value) if g is None else np.asarray(g)
        return out


def _same_shape(a: Node, b: Node, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Node, b: Node) -> Node:
    _same_shape(a, b, "add")
    return a.tape._emit("add", a.value + b.value, (a, b), lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    _same_shape(a, b, "sub")
    return a.tape._emit("sub", a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a: Node, b: Node) -> Node:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return a.tape._emit("mul", av * bv, (a, b), lambda g: (g * bv, g * av))


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return a.tape._emit("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Node) -> Node:
    y = K.sigmoid(a.value)
    return a.tape._emit("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))


def log(a: Node) -> Node:
    av = a.value
    return a.tape._emit("log", np.log(av), (a,), lambda g: (g / av,))


def exp(a: Node) -> Node:
    y = np.exp(a.value)
    return a.tape._emit("exp", y, (a,), lambda g: (g * y,))


def square(a: Node) -> Node:
    av = a.value
    return a.tape._emit("square", av * av, (a,), lambda g: (2.0 * av * g,))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape._emit("scale", c * a.value, (a,), lambda g: (c * g,))


def add_const(a: Node, c: float) -> Node:
    return a.tape._emit("add_const", a.value + float(c), (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# rank-limited contractions (single sequence)
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    value = K.matmul(a.value, b.value)
    av, bv = a.value, b.value
    return a.tape._emit("matmul", value, (a, b),
                        lambda g: (np.outer(g, bv), av.T @ g))


def tensordot_axisN(w: Node, h: Node) -> Node:
    value = K.tensordot_axisN(w.value, h.value)
    wv, hv = w.value, h.value
    return w.tape._emit("tensordot_axisN", value, (w, h),
                        lambda g: (K.tdot_dw(g[None], hv[None]),
                                   K.tdot_dh(g[None], wv)[0]))


def tensordot_seq(a: Node, hs: Node) -> Node:
    value = K.tensordot_seq(a.value, hs.value)
    av = a.value
    hsv = np.ascontiguousarray(hs.value[:, None])
    return a.tape._emit("tensordot_seq", value, (a, hs),
                        lambda g: (K.attn_mix_da(g[None], hsv)[0],
                                   K.attn_mix_dh(g[None], av[None])[:, 0]))


def var_product(wx: Node, x: Node) -> Node:
    value = K.var_product(wx.value, x.value)
    wxv, xv = wx.value, x.value
    return wx.tape._emit("var_product", value, (wx, x),
                         lambda g: (K.var_product_dw(g[None], xv[None]),
                                    K.var_product_dx(g[None], wxv)[0]))


def softmax_rows(e: Node) -> Node:
    y = K.softmax_rows(e.value)
    return e.tape._emit("softmax_rows", y, (e,),
                        lambda g: (K.softmax_last_vjp(y, g),))


def concat1d(parts: list[Node]) -> Node:
    for p in parts:
        if p.value.ndim != 1:
            raise DimensionError(f"concat1d expects rank-1 parts, got shape {p.shape}")
    sizes = [p.value.size for p in parts]
    offsets = np.cumsum([0] + sizes)
    value = np.concatenate([p.value for p in parts])

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return parts[0].tape._emit("concat1d", value, tuple(parts), vjp)


def slice1d(x: Node, lo: int, hi: int) -> Node:
    if x.value.ndim != 1 or not (0 <= lo <= hi <= x.value.size):
        raise DimensionError(f"slice1d [{lo}:{hi}] invalid for shape {x.shape}")
    xv = x.value

    def vjp(g):
        out = np.zeros_like(xv)
        out[lo:hi] = g
        return (out,)

    return x.tape._emit("slice1d", xv[lo:hi].copy(), (x,), vjp)


def vec(h: Node) -> Node:
    value = K.vec(h.value)
    shp = h.shape
    return h.tape._emit("vec", value, (h,), lambda g: (g.reshape(shp),))


def matricize(v: Node, n: int, d: int) -> Node:
    value = K.matricize(v.value, n, d)
    return v.tape._emit("matricize", value, (v,), lambda g: (g.reshape(-1),))


def sum_all(x: Node) -> Node:
    shp = x.shape
    value = np.array([float(np.sum(x.value))])
    return x.tape._emit("sum_all", value, (x,),
                        lambda g: (np.full(shp, g[0]),))


def sumsq(x: Node) -> Node:
    xv = x.value
    value = np.array([float(np.sum(xv * xv))])
    return x.tape._emit("sumsq", value, (x,), lambda g: (2.0 * g[0] * xv,))


# ---------------------------------------------------------------------------
# batched contractions (leading batch axis on activations, none on parameters)
# ---------------------------------------------------------------------------


def bt_tensordot(w: Node, h: Node) -> Node:
    # w: [N,p,q] parameter, h: [B,N,q] -> [B,N,p]
    if w.value.ndim != 3 or h.value.ndim != 3 or \
            w.shape[0] != h.shape[1] or w.shape[2] != h.shape[2]:
        raise DimensionError(f"bt_tensordot shape mismatch: w {w.shape} vs h {h.shape}")
    wv, hv = w.value, h.value
    return w.tape._emit("bt_tensordot", K.tdot(wv, hv), (w, h),
                        lambda g: (K.tdot_dw(g, hv), K.tdot_dh(g, wv)))


def bt_var_product(wx: Node, x: Node) -> Node:
    # wx: [N,d] parameter, x: [B,N] -> [B,N,d]
    if wx.value.ndim != 2 or x.value.ndim != 2 or wx.shape[0] != x.shape[1]:
        raise DimensionError(f"bt_var_product shape mismatch: wx {wx.shape} vs x {x.shape}")
    wxv, xv = wx.value, x.value
    return wx.tape._emit("bt_var_product", K.var_product_batched(wxv, xv), (wx, x),
                         lambda g: (K.var_product_dw(g, xv), K.var_product_dx(g, wxv)))


def bt_rowdot(ws: Node, h: Node) -> Node:
    # ws: [N,K] parameter, h: [B,N,K] -> [B,N]
    if ws.value.ndim != 2 or h.value.ndim != 3 or ws.shape != h.shape[1:]:
        raise DimensionError(f"bt_rowdot shape mismatch: ws {ws.shape} vs h {h.shape}")
    wsv, hv = ws.value, h.value
    return ws.tape._emit("bt_rowdot", K.rowdot(wsv, hv), (ws, h),
                         lambda g: (K.rowdot_dw(g, hv), K.rowdot_dh(g, wsv)))


def bt_shared_dot(wv: Node, h: Node) -> Node:
    # wv: [K] parameter shared across variables, h: [B,N,K] -> [B,N]
    if wv.value.ndim != 1 or h.value.ndim != 3 or wv.shape[0] != h.shape[2]:
        raise DimensionError(f"bt_shared_dot shape mismatch: wv {wv.shape} vs h {h.shape}")
    wvv, hv = wv.value, h.value
    return wv.tape._emit("bt_shared_dot", K.shared_dot(wvv, hv), (wv, h),
                         lambda g: (K.shared_dot_dw(g, hv), K.shared_dot_dh(g, wvv)))


def affine(x: Node, w: Node, b: Node) -> Node:
    # x: [B,K], w: [mout,K], b: [mout] -> [B,mout]
    if x.value.ndim != 2 or w.value.ndim != 2 or x.shape[1] != w.shape[1] \
            or b.shape != (w.shape[0],):
        raise DimensionError(
            f"affine shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}")
    xv, wv = x.value, w.value
    value = xv @ wv.T + b.value[None, :]
    return x.tape._emit("affine", value, (x, w, b),
                        lambda g: (g @ wv, g.T @ xv, g.sum(axis=0)))


def bt_matvec(w: Node, x: Node) -> Node:
    # w: [K] parameter, x: [B,K] -> [B]
    if w.value.ndim != 1 or x.value.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"bt_matvec shape mismatch: w {w.shape} vs x {x.shape}")
    wv, xv = w.value, x.value
    return w.tape._emit("bt_matvec", xv @ wv, (w, x),
                        lambda g: (g @ xv, np.outer(g, wv)))


def add_bias(x: Node, b: Node) -> Node:
    # bias broadcast over the leading batch axis only
    if b.shape != x.shape[1:]:
        raise DimensionError(f"add_bias shape mismatch: x {x.shape} vs b {b.shape}")
    return x.tape._emit("add_bias", x.value + b.value[None], (x, b),
                        lambda g: (g, g.sum(axis=0)))


def add_scalar_param(x: Node, b: Node) -> Node:
    if b.value.size != 1:
        raise DimensionError(f"add_scalar_param bias must be size 1, got {b.shape}")
    return x.tape._emit("add_scalar_param", x.value + b.value.reshape(()), (x, b),
                        lambda g: (g, np.array([float(np.sum(g))])))


def stack_last(parts: list[Node]) -> Node:
    # T nodes of shape s -> one node of shape s + (T,)
    shp = parts[0].shape
    for p in parts:
        if p.shape != shp:
            raise DimensionError(f"stack_last shape mismatch: {shp} vs {p.shape}")
    value = np.stack([p.value for p in parts], axis=-1)

    def vjp(g):
        return tuple(np.ascontiguousarray(g[..., t]) for t in range(len(parts)))

    return parts[0].tape._emit("stack_last", value, tuple(parts), vjp)


def softmax_last(e: Node) -> Node:
    y = K.softmax_last(e.value)
    return e.tape._emit("softmax_last", y, (e,),
                        lambda g: (K.softmax_last_vjp(y, g),))


def attn_mix(a: Node, hs: list[Node]) -> Node:
    # a: [B,N,Tm] with one [B,N,d] node per mixed step
    if a.value.ndim != 3 or a.shape[2] != len(hs):
        raise DimensionError(
            f"attn_mix needs one step node per weight column: a {a.shape}, {len(hs)} steps")
    av = a.value
    hsv = np.ascontiguousarray(np.stack([h.value for h in hs], axis=0))

    def vjp(g):
        dh = K.attn_mix_dh(g, av)
        return (K.attn_mix_da(g, hsv),) + tuple(dh[t] for t in range(len(hs)))

    return a.tape._emit("attn_mix", K.attn_mix(av, hsv), (a, *hs), vjp)


def concat_last(a: Node, b: Node) -> Node:
    if a.value.ndim != b.value.ndim or a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat_last shape mismatch: {a.shape} vs {b.shape}")
    ka = a.shape[-1]
    value = np.concatenate([a.value, b.value], axis=-1)
    return a.tape._emit("concat_last", value, (a, b),
                        lambda g: (np.ascontiguousarray(g[..., :ka]),
                                   np.ascontiguousarray(g[..., ka:])))


def slice_last(x: Node, lo: int, hi: int) -> Node:
    if not (0 <= lo <= hi <= x.shape[-1]):
        raise DimensionError(f"slice_last [{lo}:{hi}] invalid for shape {x.shape}")
    xv = x.value

    def vjp(g):
        out = np.zeros_like(xv)
        out[..., lo:hi] = g
        return (out,)

    return x.tape._emit("slice_last", np.ascontiguousarray(xv[..., lo:hi]), (x,), vjp)


def reshape(x: Node, shape) -> Node:
    value = K.reshape(x.value, shape)
    shp = x.shape
    return x.tape._emit("reshape", value, (x,), lambda g: (g.reshape(shp),))


def sub_bcast(mu: Node, y: Node) -> Node:
    # mu: [B,N], y: [B]; subtract the per-sequence target from every column
    if mu.value.ndim != 2 or y.value.ndim != 1 or mu.shape[0] != y.shape[0]:
        raise DimensionError(f"sub_bcast shape mismatch: mu {mu.shape} vs y {y.shape}")
    return mu.tape._emit("sub_bcast", mu.value - y.value[:, None], (mu, y),
                         lambda g: (g, -g.sum(axis=1)))


def logsumexp_last(s: Node) -> Node:
    value = K.logsumexp_last(s.value)
    soft = np.exp(s.value - value[..., None])
    return s.tape._emit("logsumexp_last", value, (s,),
                        lambda g: (soft * g[..., None],))


def mix_vars(p: Node, h: Node) -> Node:
    # p: [B,N] weights, h: [B,N,K] -> [B,K];  out[b] = sum_n p[b,n] h[b,n]
    if p.value.ndim != 2 or h.value.ndim != 3 or p.shape != h.shape[:2]:
        raise DimensionError(f"mix_vars shape mismatch: p {p.shape} vs h {h.shape}")
    pv, hv = p.value, h.value
    return p.tape._emit("mix_vars", np.einsum("bn,bnk->bk", pv, hv), (p, h),
                        lambda g: (np.einsum("bk,bnk->bn", g, hv),
                                   pv[:, :, None] * g[:, None, :]))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------


def gradcheck(build_loss, params: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central finite differences.

    ``build_loss(tape, param_nodes)`` must deterministically construct a
    scalar loss node from the given parameter leaves.  Parameters are
    perturbed in place one element at a time and restored afterwards.
    """
    params = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}

    def value_at() -> float:
        t = Tape()
        nodes = {k: t.param(k, v) for k, v in params.items()}
        return float(build_loss(t, nodes).value.sum())

    t = Tape()
    nodes = {k: t.param(k, v) for k, v in params.items()}
    grads = t.backward(build_loss(t, nodes))

    max_err = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            f_plus = value_at()
            flat[i] = saved - h
            f_minus = value_at()
            flat[i] = saved
            fd = (f_plus - f_minus) / (2.0 * h)
            ga = gflat[i]
            err = abs(ga - fd) / max(1e-8, abs(ga) + abs(fd))
            max_err = max(max_err, err)
    return max_err
