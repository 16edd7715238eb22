"""Recurrent cell with a per-variable hidden-state matrix.

The hidden state is an [N,d] matrix whose row ``n`` belongs to input variable
``n``.  The candidate update ``J`` touches only row-local information (row n
sees H[n], x[n] and row-n weights), while the input/forget/output gates read
the full ``[x ++ vec(H)]`` vector and therefore mix variables.  Flattening
between the matrix and the gate/memory vector is variable-major: entries
``[n*d, (n+1)*d)`` of the memory cell belong to variable ``n``.

Both a single-sequence implementation (plain arrays, used as the reference
contract) and a batched tape builder (used for training) are provided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from . import tape as tp
from .errors import ContractError, DimensionError


@dataclass
class CellParams:
    """Learnable tensors of one cell for N variables with d units each."""

    Wh: np.ndarray     # [N,d,d] hidden-to-hidden, one matrix per variable
    Wx: np.ndarray     # [N,d]   input-to-hidden, one column per variable
    bj: np.ndarray     # [N,d]   candidate-update bias
    Wgate: np.ndarray  # [3D, N+D] gate weights, D = N*d, gate order (i, f, o)
    bgate: np.ndarray  # [3D]

    @property
    def n_vars(self) -> int:
        return self.Wh.shape[0]

    @property
    def width(self) -> int:
        return self.Wh.shape[1]

    @property
    def layer_size(self) -> int:
        return self.n_vars * self.width

    def validate(self) -> None:
        n, d = self.n_vars, self.width
        full = n * d
        ok = (self.Wh.shape == (n, d, d) and self.Wx.shape == (n, d)
              and self.bj.shape == (n, d)
              and self.Wgate.shape == (3 * full, n + full)
              and self.bgate.shape == (3 * full,))
        if not ok:
            raise DimensionError(
                f"inconsistent cell parameter shapes for N={n}, d={d}: "
                f"Wh {self.Wh.shape}, Wx {self.Wx.shape}, bj {self.bj.shape}, "
                f"Wgate {self.Wgate.shape}, bgate {self.bgate.shape}")


@dataclass
class CellState:
    H: np.ndarray  # [N,d]
    c: np.ndarray  # [D]


@dataclass
class UnrollOutput:
    history: np.ndarray  # [T,N,d]; history[t] is the state after input t
    final: CellState


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_cell_params(n_vars: int, d: int, rng: np.random.Generator) -> CellParams:
    """Glorot-uniform weights per 2-D slice; biases zero, forget-gate bias 1."""
    full = n_vars * d
    Wh = _glorot(rng, (n_vars, d, d), d, d)
    Wx = _glorot(rng, (n_vars, d), 1, d)
    Wgate = _glorot(rng, (3 * full, n_vars + full), n_vars + full, 3 * full)
    bgate = np.zeros(3 * full)
    bgate[full:2 * full] = 1.0
    return CellParams(Wh=Wh, Wx=Wx, bj=np.zeros((n_vars, d)),
                      Wgate=Wgate, bgate=bgate)


def cell_update_matrix(params: CellParams, H_prev: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Candidate update J: row n depends only on H_prev[n], x[n] and row-n weights."""
    H_prev = np.asarray(H_prev, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if H_prev.shape != (params.n_vars, params.width) or x.shape != (params.n_vars,):
        raise DimensionError(
            f"cell_update_matrix expects H {params.n_vars, params.width} and "
            f"x ({params.n_vars},), got {H_prev.shape} and {x.shape}")
    pre = K.add(K.add(K.tensordot_axisN(params.Wh, H_prev),
                      K.var_product(params.Wx, x)), params.bj)
    return K.tanh(pre)


def gates(params: CellParams, H_prev: np.ndarray, x: np.ndarray):
    """Input/forget/output gates from the concatenated [x ++ vec(H_prev)]."""
    full = params.layer_size
    z = K.concat([np.asarray(x, dtype=np.float64), K.vec(H_prev)])
    act = K.sigmoid(K.add(K.matmul(params.Wgate, z), params.bgate))
    return act[:full], act[full:2 * full], act[2 * full:]


def step(params: CellParams, state: CellState, x: np.ndarray) -> CellState:
    """One recurrent update of the memory cell and hidden-state matrix."""
    n, d = params.n_vars, params.width
    J = cell_update_matrix(params, state.H, x)
    i, f, o = gates(params, state.H, x)
    c = K.add(K.mul(f, state.c), K.mul(i, K.vec(J)))
    H = K.matricize(K.mul(o, K.tanh(c)), n, d)
    return CellState(H=H, c=c)


def zero_state(params: CellParams) -> CellState:
    return CellState(H=np.zeros((params.n_vars, params.width)),
                     c=np.zeros(params.layer_size))


def unroll(params: CellParams, xs: np.ndarray) -> UnrollOutput:
    """Run the cell over a [T,N] input window from the all-zero initial state."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != params.n_vars:
        raise DimensionError(
            f"unroll expects input [T,{params.n_vars}], got {xs.shape}")
    T = xs.shape[0]
    if T < 2:
        raise ContractError(f"unroll needs T >= 2 steps, got T={T}")
    state = zero_state(params)
    history = np.empty((T, params.n_vars, params.width))
    for t in range(T):
        state = step(params, state, xs[t])
        history[t] = state.H
    return UnrollOutput(history=history, final=state)


# ---------------------------------------------------------------------------
# batched tape builder
# ---------------------------------------------------------------------------


def unroll_nodes(t: tp.Tape, pn: dict[str, tp.Node], xs: np.ndarray) -> list[tp.Node]:
    """Record the batched unroll on a tape; returns one [B,N,d] node per step.

    ``xs`` is a [B,T,N] constant.  The history stays a list of per-step nodes
    so every recorded value keeps rank <= 3.
    """
    n_vars, d = pn["Wh"].shape[0], pn["Wh"].shape[1]
    full = n_vars * d
    B, T, nx = xs.shape
    if nx != n_vars:
        raise DimensionError(f"unroll_nodes expects [B,T,{n_vars}] inputs, got {xs.shape}")
    if T < 2:
        raise ContractError(f"unroll_nodes needs T >= 2 steps, got T={T}")

    H = t.constant(np.zeros((B, n_vars, d)))
    c = t.constant(np.zeros((B, full)))
    history = []
    for step_i in range(T):
        x = t.constant(np.ascontiguousarray(xs[:, step_i, :]))
        pre = tp.add_bias(tp.add(tp.bt_tensordot(pn["Wh"], H),
                                 tp.bt_var_product(pn["Wx"], x)), pn["bj"])
        J = tp.tanh(pre)
        z = tp.concat_last(x, tp.reshape(H, (B, full)))
        act = tp.sigmoid(tp.affine(z, pn["Wgate"], pn["bgate"]))
        gi = tp.slice_last(act, 0, full)
        gf = tp.slice_last(act, full, 2 * full)
        go = tp.slice_last(act, 2 * full, 3 * full)
        c = tp.add(tp.mul(gf, c), tp.mul(gi, tp.reshape(J, (B, full))))
        H = tp.reshape(tp.mul(go, tp.tanh(c)), (B, n_vars, d))
        history.append(H)
    return history
