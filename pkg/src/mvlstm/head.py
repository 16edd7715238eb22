"""Mixture temporal-and-variable attention head.

Per variable, a temporal attention over the first T-1 hidden states yields a
context vector that is concatenated with the final state into a summarized
state h~[n] of width 2d.  Each variable then contributes one Gaussian
component N(y | mu_n, sigma2) with mean ``Wo[n] . h~[n] + bo[n]``, gated by a
softmax over tanh-squashed scores of h~ (the prior attention).  The predictive
density is the resulting mixture; the posterior attention re-weights the prior
by each component's likelihood of the realized target.

The likelihood is evaluated in log space with log-sum-exp so poorly fitting
components cannot underflow the mixture sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from . import tape as tp
from .errors import ContractError, DimensionError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class HeadParams:
    Ws: np.ndarray  # [N,d]  temporal-attention weights, one row per variable
    bs: np.ndarray  # [N]
    Wv: np.ndarray  # [2d]   variable-attention weight, shared across variables
    bv: np.ndarray  # [1]
    Wo: np.ndarray  # [N,2d] per-variable output weights
    bo: np.ndarray  # [N]
    sigma2: float = 1.0  # component variance, fixed (not learned)

    @property
    def n_vars(self) -> int:
        return self.Ws.shape[0]


@dataclass
class MixtureOutput:
    mu: np.ndarray         # [N] component means
    prior: np.ndarray      # [N] p(component n | inputs)
    loglik: float          # log p(y | inputs)
    posterior: np.ndarray  # [N] p(component n | inputs, y)
    yhat: float            # prior-weighted mean
    Htilde: np.ndarray = field(repr=False, default=None)  # [N,2d]


def init_head_params(n_vars: int, d: int, rng: np.random.Generator) -> HeadParams:
    from .cell import _glorot

    Ws = _glorot(rng, (n_vars, d), d, 1)
    Wv = _glorot(rng, (2 * d,), 2 * d, 1)
    Wo = _glorot(rng, (n_vars, 2 * d), 2 * d, 1)
    return HeadParams(Ws=Ws, bs=np.zeros(n_vars), Wv=Wv, bv=np.zeros(1),
                      Wo=Wo, bo=np.zeros(n_vars))


def attention_parts(params: HeadParams, history: np.ndarray):
    """Temporal-attention internals: scores e [N,T-1], weights a, context [N,d]."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 3 or history.shape[1] != params.n_vars:
        raise DimensionError(
            f"history must be [T,{params.n_vars},d], got {history.shape}")
    T = history.shape[0]
    if T < 2:
        raise ContractError(f"temporal attention needs T >= 2, got T={T}")
    past = history[: T - 1]  # [T-1,N,d]
    e = np.tanh(np.einsum("nk,tnk->nt", params.Ws, past) + params.bs[:, None])
    a = K.softmax_rows(e)
    c_att = K.tensordot_seq(a, past)
    return e, a, c_att


def temporal_attention(params: HeadParams, history: np.ndarray) -> np.ndarray:
    """Context-enhanced summary [N,2d]: final state rows ++ attention context."""
    _, _, c_att = attention_parts(params, history)
    return np.concatenate([history[-1], c_att], axis=1)


def component_means(params: HeadParams, Htilde: np.ndarray) -> np.ndarray:
    Htilde = np.asarray(Htilde, dtype=np.float64)
    if Htilde.shape != params.Wo.shape:
        raise DimensionError(
            f"component_means expects Htilde {params.Wo.shape}, got {Htilde.shape}")
    return np.einsum("nk,nk->n", params.Wo, Htilde) + params.bo


def prior_attention(params: HeadParams, Htilde: np.ndarray) -> np.ndarray:
    """Variable gating: softmax over tanh(Wv . h~[n] + bv); tanh bounds the
    score range, so max/min prior ratio never exceeds e^2."""
    scores = np.tanh(Htilde @ params.Wv + params.bv[0])
    return K.softmax_rows(scores[None])[0]


def log_gaussian(y: float, mu: float, sigma2: float) -> float:
    """Log-density of N(y | mu, sigma2)."""
    if sigma2 <= 0:
        raise ContractError(f"sigma2 must be positive, got {sigma2}")
    return float(-0.5 * np.log(2.0 * np.pi * sigma2) - (y - mu) ** 2 / (2.0 * sigma2))


def mixture_forward(params: HeadParams, history: np.ndarray, y_next: float) -> MixtureOutput:
    """Full head evaluation for one sequence and realized target."""
    Htilde = temporal_attention(params, history)
    mu = component_means(params, Htilde)
    prior = prior_attention(params, Htilde)
    logN = -0.5 * np.log(2.0 * np.pi * params.sigma2) \
        - (y_next - mu) ** 2 / (2.0 * params.sigma2)
    s = np.log(prior) + logN
    loglik = float(K.logsumexp_last(s))
    posterior = np.exp(s - loglik)
    yhat = float(prior @ mu)
    return MixtureOutput(mu=mu, prior=prior, loglik=loglik,
                         posterior=posterior, yhat=yhat, Htilde=Htilde)


def predict(params: HeadParams, history: np.ndarray) -> float:
    """Prior-weighted sum of component means; needs no target value."""
    Htilde = temporal_attention(params, history)
    mu = component_means(params, Htilde)
    prior = prior_attention(params, Htilde)
    return float(prior @ mu)


# ---------------------------------------------------------------------------
# batched tape builders
# ---------------------------------------------------------------------------


def attention_nodes(t: tp.Tape, pn: dict[str, tp.Node],
                    history: list[tp.Node]) -> tp.Node:
    """Batched temporal attention over per-step [B,N,d] nodes -> H~ [B,N,2d]."""
    T = len(history)
    if T < 2:
        raise ContractError(f"temporal attention needs T >= 2, got T={T}")
    scores = [tp.add_bias(tp.bt_rowdot(pn["Ws"], history[i]), pn["bs"])
              for i in range(T - 1)]
    e = tp.tanh(tp.stack_last(scores))
    a = tp.softmax_last(e)
    c_att = tp.attn_mix(a, history[: T - 1])
    return tp.concat_last(history[T - 1], c_att)


def prior_nodes(t: tp.Tape, pn: dict[str, tp.Node], Htilde: tp.Node) -> tp.Node:
    scores = tp.tanh(tp.add_scalar_param(tp.bt_shared_dot(pn["Wv"], Htilde), pn["bv"]))
    return tp.softmax_last(scores)


def mixture_nodes(t: tp.Tape, pn: dict[str, tp.Node], history: list[tp.Node],
                  y: np.ndarray | None = None, dropout_mask: np.ndarray | None = None,
                  sigma2: float = 1.0) -> dict[str, tp.Node]:
    """Record the mixture head; with a target, adds log-likelihood nodes.

    Returns nodes: Htilde [B,N,2d], mu [B,N], prior [B,N], and when ``y`` is
    given also score [B,N] (log prior + log component density) and
    loglik [B].
    """
    Htilde = attention_nodes(t, pn, history)
    if dropout_mask is not None:
        Htilde = tp.mul(Htilde, t.constant(dropout_mask))
    mu = tp.add_bias(tp.bt_rowdot(pn["Wo"], Htilde), pn["bo"])
    prior = prior_nodes(t, pn, Htilde)
    out = {"Htilde": Htilde, "mu": mu, "prior": prior}
    if y is not None:
        diff = tp.sub_bcast(mu, t.constant(np.asarray(y, dtype=np.float64)))
        logN = tp.add_const(tp.scale(tp.square(diff), -0.5 / sigma2),
                            -0.5 * (LOG_2PI + np.log(sigma2)))
        score = tp.add(tp.log(prior), logN)
        out["score"] = score
        out["loglik"] = tp.logsumexp_last(score)
    return out
