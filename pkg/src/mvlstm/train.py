"""Mini-batch training with Adam, L2 on weights, and early stopping.

The loss is the sum over the batch of per-sequence losses (mixture negative
log-likelihood, or squared error for the non-mixture variants) plus
``l2_lambda`` times the squared norm of the weight tensors; biases stay
unregularized so the forget-gate prior survives.

Determinism: all randomness (init, shuffling, dropout masks) flows through
one generator seeded from the config, batches are visited in shuffle order,
and Adam updates parameters in sorted-name order.  ``threads`` sets the
batch-parallel width; each batch splits into that many contiguous chunks
whose gradients are reduced in chunk order, so results are reproducible for
any fixed width.  With ``threads == 1`` the per-epoch wall_ms log column is
written as 0 to keep the training log byte-reproducible.
"""

from __future__ import annotations

import copy
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .data import Datasets, SplitData
from .errors import ConfigError, ContractError, DivergenceError
from .evaluate import rmse
from .variants import _ModelBase, forward_batch

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.001
    l2_lambda: float = 0.001
    dropout: float = 0.5
    d_per_variable: int = 10
    max_epochs: int = 30
    patience: int = 10
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        if self.batch_size < 1 or self.d_per_variable < 1 or self.threads < 1:
            raise ConfigError("batch_size, d_per_variable and threads must be >= 1")
        if self.learning_rate < 0 or self.l2_lambda < 0:
            raise ConfigError("learning_rate and l2_lambda must be >= 0")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs must be >= 0 and patience >= 1")


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray], lr: float) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update, in place, in sorted parameter order."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name in sorted(params):
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / corr1
        v_hat = state.v[name] / corr2
        params[name] -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params


def loss_node(model: _ModelBase, t: tp.Tape, pn: dict[str, tp.Node],
              inputs: np.ndarray, targets: np.ndarray, l2_lambda: float,
              dropout_mask: np.ndarray | None = None) -> tp.Node:
    """Batch data loss plus L2 over the model's weight tensors."""
    out = model.build_graph(t, pn, inputs, y=targets, dropout_mask=dropout_mask)
    loss = out["data_loss"]
    if l2_lambda > 0:
        for name in model.weight_names:
            loss = tp.add(loss, tp.scale(tp.sumsq(pn[name]), l2_lambda))
    return loss


def batch_loss(model: _ModelBase, params: dict[str, np.ndarray],
               inputs: np.ndarray, targets: np.ndarray, l2_lambda: float = 0.0,
               dropout_mask: np.ndarray | None = None) -> float:
    """Loss value only (evaluation path of the training objective)."""
    if len(targets) == 0:
        raise ContractError("batch_loss needs a nonempty batch")
    t = tp.Tape()
    pn = {k: t.constant(v) for k, v in params.items()}
    return float(loss_node(model, t, pn, inputs, targets, l2_lambda,
                           dropout_mask).value.sum())


def batch_loss_and_grads(model: _ModelBase, params: dict[str, np.ndarray],
                         inputs: np.ndarray, targets: np.ndarray,
                         l2_lambda: float = 0.0,
                         dropout_mask: np.ndarray | None = None,
                         threads: int = 1):
    """Loss and parameter gradients for one batch.

    With ``threads > 1`` the batch is split into that many contiguous chunks
    evaluated on independent tapes (in a thread pool) and reduced in chunk
    order.  The L2 term is recorded on the first chunk's tape only.
    """
    if len(targets) == 0:
        raise ContractError("batch_loss_and_grads needs a nonempty batch")
    n = len(targets)
    chunks = min(threads, n)

    def run_chunk(ci: int):
        lo = ci * n // chunks
        hi = (ci + 1) * n // chunks
        t = tp.Tape()
        pn = {k: t.param(k, v) for k, v in params.items()}
        mask = None if dropout_mask is None else dropout_mask[lo:hi]
        loss = loss_node(model, t, pn, inputs[lo:hi], targets[lo:hi],
                         l2_lambda if ci == 0 else 0.0, mask)
        return float(loss.value.sum()), t.backward(loss)

    if chunks == 1:
        return run_chunk(0)
    with ThreadPoolExecutor(max_workers=chunks) as pool:
        results = list(pool.map(run_chunk, range(chunks)))
    total = 0.0
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    for loss_val, g in results:
        total += loss_val
        for k in grads:
            grads[k] += g[k]
    return total, grads


def predict_split(model: _ModelBase, params: dict[str, np.ndarray],
                  split: SplitData, batch_size: int) -> np.ndarray:
    """Normalized-unit predictions over a split, in windows order."""
    outs = []
    n = len(split.batch)
    for lo in range(0, n, batch_size):
        xs = split.batch.inputs[lo:lo + batch_size]
        outs.append(forward_batch(model, params, xs)["yhat"])
    return np.concatenate(outs) if outs else np.zeros(0)


def validation_rmse(model: _ModelBase, params: dict[str, np.ndarray],
                    datasets: Datasets, batch_size: int) -> float:
    """Validation RMSE in original units."""
    yhat = predict_split(model, params, datasets.valid, batch_size)
    return rmse(datasets.valid.targets_orig, datasets.stats.inverse_target(yhat))


@dataclass
class FitResult:
    params: dict[str, np.ndarray]
    log: list[dict] = field(default_factory=list)
    best_valid_rmse: float = float("nan")
    best_epoch: int = 0
    rng_state: dict | None = None


def fit(model: _ModelBase, datasets: Datasets, config: TrainConfig,
        progress=None) -> FitResult:
    """Train with shuffled mini-batches and keep the best-validation params.

    ``progress``, when given, is called with each epoch's log row.
    """
    config.validate()
    if len(datasets.train.batch) == 0 or len(datasets.valid.batch) == 0:
        raise ContractError("fit needs nonempty train and valid splits")
    rng = np.random.default_rng(config.seed)
    params = model.init_params(rng)
    adam = AdamState.init(params)
    inputs = datasets.train.batch.inputs
    targets = datasets.train.batch.targets
    n_train = len(targets)

    best_rmse = validation_rmse(model, params, datasets, config.batch_size)
    best_params = copy.deepcopy(params)
    best_epoch = 0
    since_best = 0
    log: list[dict] = []

    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n_train)
        epoch_loss = 0.0
        for bi, lo in enumerate(range(0, n_train, config.batch_size)):
            idx = perm[lo:lo + config.batch_size]
            mask = None
            if config.dropout > 0:
                mask = model.dropout_mask(rng, len(idx), config.dropout)
            loss_val, grads = batch_loss_and_grads(
                model, params, inputs[idx], targets[idx], config.l2_lambda,
                dropout_mask=mask, threads=config.threads)
            if not np.isfinite(loss_val):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {bi} "
                    f"(first window index {int(idx[0])})")
            adam_step(adam, params, grads, config.learning_rate)
            epoch_loss += loss_val
        valid = validation_rmse(model, params, datasets, config.batch_size)
        wall_ms = 0.0 if config.threads == 1 else (time.perf_counter() - t0) * 1e3
        log.append({"epoch": epoch, "train_loss": epoch_loss,
                    "valid_rmse": valid, "wall_ms": wall_ms})
        if progress is not None:
            progress(log[-1])
        if valid < best_rmse:
            best_rmse = valid
            best_params = copy.deepcopy(params)
            best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    return FitResult(params=best_params, log=log, best_valid_rmse=best_rmse,
                     best_epoch=best_epoch,
                     rng_state=rng.bit_generator.state)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------


def save_checkpoint(path: str, variant: str, config: dict,
                    params: dict[str, np.ndarray], n_vars: int, d: int,
                    var_names: list[str], rng_state: dict | None = None) -> None:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "variant": variant,
        "config": config,
        "n_vars": int(n_vars),
        "d": int(d),
        "var_names": list(var_names),
        "rng_state": rng_state,
        "tensors": {
            name: {"shape": list(arr.shape),
                   "data": [float(v) for v in arr.reshape(-1)]}
            for name, arr in sorted(params.items())
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


def load_checkpoint(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format_version {version!r} in {path}")
    params = {}
    for name, blob in payload["tensors"].items():
        params[name] = np.array(blob["data"], dtype=np.float64).reshape(blob["shape"])
    payload["params"] = params
    return payload


def write_training_log(path: str, log: list[dict]) -> None:
    """CSV log: epoch, train_loss, valid_rmse, wall_ms (floats via repr)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,valid_rmse,wall_ms\n")
        for row in log:
            fh.write(f"{row['epoch']},{row['train_loss']!r},"
                     f"{row['valid_rmse']!r},{row['wall_ms']!r}\n")
