"""Model variants sharing the cell and attention components.

* ``mvlstm``   - joint cell (gates see all variables) + mixture attention head,
                 trained by mixture negative log-likelihood.
* ``mvfusion`` - joint cell + temporal attention, but the per-variable
                 summaries are fused into one state by the variable attention;
                 a single linear output trained by squared error.
* ``mvindep``  - one fully independent single-variable recurrence per input
                 variable (gates included), histories stacked into the same
                 mixture attention head.
* ``vanilla``  - plain LSTM with the same total layer size and a linear
                 output on the final hidden state; squared-error baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cell, head
from . import tape as tp
from .cell import CellParams, _glorot
from .errors import ConfigError, DimensionError
from .head import HeadParams, MixtureOutput

VARIANT_TAGS = ("mvlstm", "mvfusion", "mvindep", "vanilla")


@dataclass
class FusionParams:
    Ws: np.ndarray     # [N,d]
    bs: np.ndarray     # [N]
    Wv: np.ndarray     # [2d]
    bv: np.ndarray     # [1]
    w_out: np.ndarray  # [2d]
    b_out: np.ndarray  # [1]


@dataclass
class VanillaParams:
    Wall: np.ndarray   # [4D, n_in+D] gate order (i, f, o, candidate)
    ball: np.ndarray   # [4D]
    w_out: np.ndarray  # [D]
    b_out: np.ndarray  # [1]


# ---------------------------------------------------------------------------
# single-sequence reference forwards
# ---------------------------------------------------------------------------


def mvfusion_forward(params: FusionParams, history: np.ndarray,
                     y_next: float) -> tuple[float, float]:
    """Fused-state prediction and its squared-error loss for one sequence."""
    n_vars, two_d = history.shape[1], 2 * history.shape[2]
    hp = HeadParams(Ws=params.Ws, bs=params.bs, Wv=params.Wv, bv=params.bv,
                    Wo=np.zeros((n_vars, two_d)), bo=np.zeros(n_vars))
    Htilde = head.temporal_attention(hp, history)
    prior = head.prior_attention(hp, Htilde)
    fused = prior @ Htilde
    yhat = float(params.w_out @ fused + params.b_out[0])
    return yhat, float((y_next - yhat) ** 2)


def mvindep_forward(indep_cells: list[CellParams], head_params: HeadParams,
                    xs: np.ndarray, y_next: float) -> MixtureOutput:
    """Unroll one single-variable cell per input variable, then mix."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != len(indep_cells):
        raise DimensionError(
            f"mvindep_forward expects [T,{len(indep_cells)}] inputs, got {xs.shape}")
    histories = []
    for n, cp in enumerate(indep_cells):
        if cp.n_vars != 1:
            raise DimensionError(f"independent cell {n} must have N=1, got {cp.n_vars}")
        histories.append(cell.unroll(cp, xs[:, n:n + 1]).history[:, 0, :])
    history = np.stack(histories, axis=1)
    return head.mixture_forward(head_params, history, y_next)


def vanilla_forward(params: VanillaParams, xs: np.ndarray,
                    y_next: float) -> tuple[float, float]:
    """Standard LSTM forward on one sequence; returns (yhat, squared error)."""
    from . import kernels as K

    xs = np.asarray(xs, dtype=np.float64)
    full = params.w_out.shape[0]
    h = np.zeros(full)
    c = np.zeros(full)
    for t in range(xs.shape[0]):
        z = np.concatenate([xs[t], h])
        act = params.Wall @ z + params.ball
        gi = K.sigmoid(act[:full])
        gf = K.sigmoid(act[full:2 * full])
        go = K.sigmoid(act[2 * full:3 * full])
        gc = np.tanh(act[3 * full:])
        c = gf * c + gi * gc
        h = go * np.tanh(c)
    yhat = float(params.w_out @ h + params.b_out[0])
    return yhat, float((y_next - yhat) ** 2)


# ---------------------------------------------------------------------------
# trainable model wrappers
# ---------------------------------------------------------------------------


class _ModelBase:
    tag = ""
    mixture = False
    weight_names: tuple[str, ...] = ()

    def __init__(self, n_vars: int, d: int):
        if n_vars < 1 or d < 1:
            raise ConfigError(f"model needs n_vars >= 1 and d >= 1, got {n_vars}, {d}")
        self.n_vars = n_vars
        self.d = d

    @property
    def layer_size(self) -> int:
        return self.n_vars * self.d

    def dropout_mask(self, rng: np.random.Generator, batch: int,
                     rate: float) -> np.ndarray:
        """Inverted-dropout mask over whole summary rows.

        Each variable's summarized state h~[n] is kept or dropped as one
        unit, so no single mixture component can monopolize the gradient.
        """
        keep = rng.random((batch, self.n_vars, 1)) >= rate
        return np.broadcast_to(keep / (1.0 - rate),
                               (batch, self.n_vars, 2 * self.d)).copy()


class MvLstmModel(_ModelBase):
    tag = "mvlstm"
    mixture = True
    weight_names = ("Wh", "Wx", "Wgate", "Ws", "Wv", "Wo")

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        cp = cell.init_cell_params(self.n_vars, self.d, rng)
        hp = head.init_head_params(self.n_vars, self.d, rng)
        return {"Wh": cp.Wh, "Wx": cp.Wx, "bj": cp.bj,
                "Wgate": cp.Wgate, "bgate": cp.bgate,
                "Ws": hp.Ws, "bs": hp.bs, "Wv": hp.Wv, "bv": hp.bv,
                "Wo": hp.Wo, "bo": hp.bo}

    def cell_params(self, params) -> CellParams:
        return CellParams(Wh=params["Wh"], Wx=params["Wx"], bj=params["bj"],
                          Wgate=params["Wgate"], bgate=params["bgate"])

    def head_params(self, params) -> HeadParams:
        return HeadParams(Ws=params["Ws"], bs=params["bs"], Wv=params["Wv"],
                          bv=params["bv"], Wo=params["Wo"], bo=params["bo"])

    def build_graph(self, t: tp.Tape, pn, xs, y=None, dropout_mask=None):
        history = cell.unroll_nodes(t, pn, xs)
        out = head.mixture_nodes(t, pn, history, y=y, dropout_mask=dropout_mask)
        if y is not None:
            out["data_loss"] = tp.scale(tp.sum_all(out["loglik"]), -1.0)
        return out


class MvFusionModel(_ModelBase):
    tag = "mvfusion"
    mixture = False
    weight_names = ("Wh", "Wx", "Wgate", "Ws", "Wv", "w_out")

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        cp = cell.init_cell_params(self.n_vars, self.d, rng)
        Ws = _glorot(rng, (self.n_vars, self.d), self.d, 1)
        Wv = _glorot(rng, (2 * self.d,), 2 * self.d, 1)
        w_out = _glorot(rng, (2 * self.d,), 2 * self.d, 1)
        return {"Wh": cp.Wh, "Wx": cp.Wx, "bj": cp.bj,
                "Wgate": cp.Wgate, "bgate": cp.bgate,
                "Ws": Ws, "bs": np.zeros(self.n_vars),
                "Wv": Wv, "bv": np.zeros(1),
                "w_out": w_out, "b_out": np.zeros(1)}

    def fusion_params(self, params) -> FusionParams:
        return FusionParams(Ws=params["Ws"], bs=params["bs"], Wv=params["Wv"],
                            bv=params["bv"], w_out=params["w_out"],
                            b_out=params["b_out"])

    def cell_params(self, params) -> CellParams:
        return CellParams(Wh=params["Wh"], Wx=params["Wx"], bj=params["bj"],
                          Wgate=params["Wgate"], bgate=params["bgate"])

    def build_graph(self, t: tp.Tape, pn, xs, y=None, dropout_mask=None):
        history = cell.unroll_nodes(t, pn, xs)
        Htilde = head.attention_nodes(t, pn, history)
        if dropout_mask is not None:
            Htilde = tp.mul(Htilde, t.constant(dropout_mask))
        prior = head.prior_nodes(t, pn, Htilde)
        fused = tp.mix_vars(prior, Htilde)
        yhat = tp.add_scalar_param(tp.bt_matvec(pn["w_out"], fused), pn["b_out"])
        out = {"prior": prior, "yhat": yhat}
        if y is not None:
            diff = tp.sub(yhat, t.constant(np.asarray(y, dtype=np.float64)))
            out["data_loss"] = tp.sum_all(tp.square(diff))
        return out


class MvIndepModel(_ModelBase):
    tag = "mvindep"
    mixture = True
    weight_names = ("Wh", "Wx", "Wgate", "Ws", "Wv", "Wo")

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        n, d = self.n_vars, self.d
        Wh = _glorot(rng, (n, d, d), d, d)
        Wx = _glorot(rng, (n, d), 1, d)
        Wgate = _glorot(rng, (n, 3 * d, 1 + d), 1 + d, 3 * d)
        bgate = np.zeros((n, 3 * d))
        bgate[:, d:2 * d] = 1.0
        hp = head.init_head_params(n, d, rng)
        return {"Wh": Wh, "Wx": Wx, "bj": np.zeros((n, d)),
                "Wgate": Wgate, "bgate": bgate,
                "Ws": hp.Ws, "bs": hp.bs, "Wv": hp.Wv, "bv": hp.bv,
                "Wo": hp.Wo, "bo": hp.bo}

    def cell_list(self, params) -> list[CellParams]:
        """Per-variable N=1 cells carved out of the stacked parameter arrays."""
        n, d = self.n_vars, self.d
        cells = []
        for i in range(n):
            cells.append(CellParams(
                Wh=params["Wh"][i:i + 1], Wx=params["Wx"][i:i + 1],
                bj=params["bj"][i:i + 1], Wgate=params["Wgate"][i],
                bgate=params["bgate"][i]))
        return cells

    def head_params(self, params) -> HeadParams:
        return HeadParams(Ws=params["Ws"], bs=params["bs"], Wv=params["Wv"],
                          bv=params["bv"], Wo=params["Wo"], bo=params["bo"])

    def _unroll_nodes(self, t: tp.Tape, pn, xs):
        n, d = self.n_vars, self.d
        B, T, nx = xs.shape
        if nx != n:
            raise DimensionError(f"expected [B,T,{n}] inputs, got {xs.shape}")
        H = t.constant(np.zeros((B, n, d)))
        c = t.constant(np.zeros((B, n, d)))
        history = []
        for step_i in range(T):
            x = t.constant(np.ascontiguousarray(xs[:, step_i, :]))
            pre = tp.add_bias(tp.add(tp.bt_tensordot(pn["Wh"], H),
                                     tp.bt_var_product(pn["Wx"], x)), pn["bj"])
            J = tp.tanh(pre)
            z = tp.concat_last(tp.reshape(x, (B, n, 1)), H)
            act = tp.sigmoid(tp.add_bias(tp.bt_tensordot(pn["Wgate"], z), pn["bgate"]))
            gi = tp.slice_last(act, 0, d)
            gf = tp.slice_last(act, d, 2 * d)
            go = tp.slice_last(act, 2 * d, 3 * d)
            c = tp.add(tp.mul(gf, c), tp.mul(gi, J))
            H = tp.mul(go, tp.tanh(c))
            history.append(H)
        return history

    def build_graph(self, t: tp.Tape, pn, xs, y=None, dropout_mask=None):
        history = self._unroll_nodes(t, pn, xs)
        out = head.mixture_nodes(t, pn, history, y=y, dropout_mask=dropout_mask)
        if y is not None:
            out["data_loss"] = tp.scale(tp.sum_all(out["loglik"]), -1.0)
        return out


class VanillaModel(_ModelBase):
    tag = "vanilla"
    mixture = False
    weight_names = ("Wall", "w_out")

    def init_params(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        full = self.layer_size
        n_in = self.n_vars + full
        Wall = _glorot(rng, (4 * full, n_in), n_in, 4 * full)
        ball = np.zeros(4 * full)
        ball[full:2 * full] = 1.0
        w_out = _glorot(rng, (full,), full, 1)
        return {"Wall": Wall, "ball": ball, "w_out": w_out, "b_out": np.zeros(1)}

    def vanilla_params(self, params) -> VanillaParams:
        return VanillaParams(Wall=params["Wall"], ball=params["ball"],
                             w_out=params["w_out"], b_out=params["b_out"])

    def dropout_mask(self, rng: np.random.Generator, batch: int,
                     rate: float) -> np.ndarray:
        # no per-variable rows here; standard unit dropout on the final state
        keep = rng.random((batch, self.layer_size)) >= rate
        return keep / (1.0 - rate)

    def build_graph(self, t: tp.Tape, pn, xs, y=None, dropout_mask=None):
        full = self.layer_size
        B, T, nx = xs.shape
        if nx != self.n_vars:
            raise DimensionError(f"expected [B,T,{self.n_vars}] inputs, got {xs.shape}")
        h = t.constant(np.zeros((B, full)))
        c = t.constant(np.zeros((B, full)))
        for step_i in range(T):
            x = t.constant(np.ascontiguousarray(xs[:, step_i, :]))
            act = tp.affine(tp.concat_last(x, h), pn["Wall"], pn["ball"])
            gi = tp.sigmoid(tp.slice_last(act, 0, full))
            gf = tp.sigmoid(tp.slice_last(act, full, 2 * full))
            go = tp.sigmoid(tp.slice_last(act, 2 * full, 3 * full))
            gc = tp.tanh(tp.slice_last(act, 3 * full, 4 * full))
            c = tp.add(tp.mul(gf, c), tp.mul(gi, gc))
            h = tp.mul(go, tp.tanh(c))
        if dropout_mask is not None:
            h = tp.mul(h, t.constant(dropout_mask))
        yhat = tp.add_scalar_param(tp.bt_matvec(pn["w_out"], h), pn["b_out"])
        out = {"yhat": yhat}
        if y is not None:
            diff = tp.sub(yhat, t.constant(np.asarray(y, dtype=np.float64)))
            out["data_loss"] = tp.sum_all(tp.square(diff))
        return out


_MODELS = {m.tag: m for m in (MvLstmModel, MvFusionModel, MvIndepModel, VanillaModel)}


def make_model(tag: str, n_vars: int, d: int) -> _ModelBase:
    if tag not in _MODELS:
        raise ConfigError(f"unknown variant '{tag}', expected one of {VARIANT_TAGS}")
    return _MODELS[tag](n_vars, d)


def forward_batch(model: _ModelBase, params: dict[str, np.ndarray],
                  xs: np.ndarray, y: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Evaluation-mode forward pass (no dropout); returns plain arrays.

    Always includes ``yhat`` [B].  Mixture variants add ``prior`` and ``mu``
    [B,N]; given targets they also add ``loglik`` [B] and ``posterior`` [B,N].
    """
    t = tp.Tape()
    pn = {k: t.constant(v) for k, v in params.items()}
    out = model.build_graph(t, pn, xs, y=y)
    res: dict[str, np.ndarray] = {}
    if model.mixture:
        prior, mu = out["prior"].value, out["mu"].value
        res["prior"] = prior
        res["mu"] = mu
        res["yhat"] = np.einsum("bn,bn->b", prior, mu)
        if y is not None:
            loglik = out["loglik"].value
            res["loglik"] = loglik
            res["posterior"] = np.exp(out["score"].value - loglik[:, None])
    else:
        res["yhat"] = out["yhat"].value
        if "prior" in out:
            res["prior"] = out["prior"].value
    return res
