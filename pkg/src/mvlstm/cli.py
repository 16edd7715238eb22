"""Command-line entry point: generate | train | eval | interpret | gradcheck.

Exit codes: 0 success, 1 usage/config error, 2 runtime/numeric failure.
Every artifact a command writes echoes the run configuration that produced
it, and identical seeds with ``--threads 1`` reproduce artifacts byte for
byte.  Set ``MVLSTM_LOG=info`` for per-epoch training progress on stderr.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys

import numpy as np

from . import data as dat
from . import evaluate as ev
from . import synth
from . import tape as tp
from . import train as tr
from .errors import (ConfigError, ContractError, DataError, DimensionError,
                     DivergenceError)
from .variants import VARIANT_TAGS, forward_batch, make_model

CONFIG_DEFAULTS = {
    "target_column": "y",
    "window_T": 30,
    "difference": False,
    "fill_policy": "strict",
    "split": {"train": 0.7, "valid": 0.1, "test": 0.2},
    "window_stride": 1,
    "batch_size": 64,
    "learning_rate": 0.001,
    "l2_lambda": 0.001,
    "dropout": 0.5,
    "d_per_variable": 10,
    "max_epochs": 30,
    "patience": 10,
    "seed": 0,
    "threads": 1,
}


def load_run_config(path: str | None = None,
                    overrides: dict | None = None) -> dict:
    """Defaults, or a complete JSON config file, plus CLI overrides.

    A config file must carry exactly the known keys: unknown and missing
    fields are both errors naming the field.
    """
    cfg = copy.deepcopy(CONFIG_DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config is not valid JSON: {exc}") from None
        unknown = sorted(set(user) - set(cfg))
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        missing = sorted(set(cfg) - set(user))
        if missing:
            raise ConfigError(f"missing config field(s): {', '.join(missing)}")
        cfg.update(user)
    for key, value in (overrides or {}).items():
        if value is not None:
            cfg[key] = value
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: dict) -> None:
    if cfg["window_T"] < 2:
        raise ConfigError(f"window_T must be >= 2, got {cfg['window_T']}")
    if cfg["window_stride"] < 1:
        raise ConfigError(f"window_stride must be >= 1, got {cfg['window_stride']}")
    if cfg["fill_policy"] not in ("strict", "ffill"):
        raise ConfigError(f"fill_policy must be strict|ffill, got {cfg['fill_policy']!r}")
    if not isinstance(cfg["target_column"], str) or not cfg["target_column"]:
        raise ConfigError("target_column must be a nonempty string")
    split = cfg["split"]
    if not isinstance(split, dict) or set(split) != {"train", "valid", "test"}:
        raise ConfigError("split must be an object with keys train, valid, test")
    _split_spec(cfg).validate()
    _train_config(cfg).validate()


def _split_spec(cfg: dict) -> dat.SplitSpec:
    s = cfg["split"]
    return dat.SplitSpec(train=float(s["train"]), valid=float(s["valid"]),
                         test=float(s["test"]))


def _train_config(cfg: dict) -> tr.TrainConfig:
    return tr.TrainConfig(
        batch_size=int(cfg["batch_size"]),
        learning_rate=float(cfg["learning_rate"]),
        l2_lambda=float(cfg["l2_lambda"]),
        dropout=float(cfg["dropout"]),
        d_per_variable=int(cfg["d_per_variable"]),
        max_epochs=int(cfg["max_epochs"]),
        patience=int(cfg["patience"]),
        seed=int(cfg["seed"]),
        threads=int(cfg["threads"]),
    )


def _load_datasets(data_path: str, cfg: dict) -> dat.Datasets:
    series = dat.load_csv(data_path, cfg["target_column"], cfg["fill_policy"])
    series = dat.difference(series, enabled=bool(cfg["difference"]))
    return dat.prepare(series, window_T=int(cfg["window_T"]),
                       split=_split_spec(cfg), stride=int(cfg["window_stride"]))


def _select_split(datasets: dat.Datasets, name: str) -> dat.SplitData:
    if name == "all":
        batches = [datasets.train, datasets.valid, datasets.test]
        inputs = np.concatenate([b.batch.inputs for b in batches])
        targets = np.concatenate([b.batch.targets for b in batches])
        indices = np.concatenate([b.batch.indices for b in batches])
        orig = np.concatenate([b.targets_orig for b in batches])
        return dat.SplitData(batch=dat.SequenceBatch(inputs, targets, indices),
                             targets_orig=orig)
    return datasets.split(name)


def _dump_json(payload: dict, path: str | None) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return text


def _manifest_path(out_csv: str) -> str:
    base, _ = os.path.splitext(out_csv)
    return base + ".manifest.json"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    series, manifest = synth.generate_dataset(args.n_exo, args.length, args.seed)
    dat.write_csv(args.out, series)
    manifest_path = args.out_manifest or _manifest_path(args.out)
    _dump_json(manifest, manifest_path)
    print(f"wrote {series.length} rows x {series.n_vars} columns to {args.out}")
    print(f"manifest: {manifest_path}")
    return 0


def cmd_train(args) -> int:
    overrides = {
        "seed": args.seed, "max_epochs": args.max_epochs,
        "threads": args.threads, "batch_size": args.batch_size,
        "learning_rate": args.learning_rate, "l2_lambda": args.l2_lambda,
        "dropout": args.dropout, "d_per_variable": args.d,
        "patience": args.patience, "window_T": args.window_t,
        "window_stride": args.window_stride,
        "target_column": args.target_column,
    }
    cfg = load_run_config(args.config, overrides)
    datasets = _load_datasets(args.data, cfg)
    model = make_model(args.variant, len(datasets.names), cfg["d_per_variable"])
    progress = None
    if os.environ.get("MVLSTM_LOG", "").lower() in ("info", "debug", "1"):
        progress = lambda row: print(
            f"epoch {row['epoch']}: train_loss={row['train_loss']:.4f} "
            f"valid_rmse={row['valid_rmse']:.6f}", file=sys.stderr)
    result = tr.fit(model, datasets, _train_config(cfg), progress=progress)
    tr.save_checkpoint(args.out_checkpoint, model.tag, cfg, result.params,
                       model.n_vars, model.d, datasets.names,
                       rng_state=result.rng_state)
    log_path = args.out_log or args.out_checkpoint + ".log.csv"
    tr.write_training_log(log_path, result.log)
    final = tr.validation_rmse(model, result.params, datasets, cfg["batch_size"])
    print(f"checkpoint: {args.out_checkpoint}")
    print(f"training log: {log_path}")
    print(f"valid_rmse: {final!r}")
    return 0


def _load_model_for_eval(args):
    payload = tr.load_checkpoint(args.checkpoint)
    cfg = payload["config"]
    datasets = _load_datasets(args.data, cfg)
    if len(datasets.names) != payload["n_vars"]:
        raise ConfigError(
            f"checkpoint was trained on {payload['n_vars']} variables but "
            f"data has {len(datasets.names)}")
    model = make_model(payload["variant"], payload["n_vars"], payload["d"])
    return payload, cfg, datasets, model


def cmd_eval(args) -> int:
    payload, cfg, datasets, model = _load_model_for_eval(args)
    split = _select_split(datasets, args.split)
    yhat_raw = tr.predict_split(model, payload["params"], split, cfg["batch_size"])
    yhat = datasets.stats.inverse_target(yhat_raw)
    metrics = {
        "rmse": ev.rmse(split.targets_orig, yhat),
        "mae": ev.mae(split.targets_orig, yhat),
        "n": int(len(split.batch)),
        "split": args.split,
        "config": cfg,
    }
    print(_dump_json(metrics, args.out))
    return 0


def cmd_interpret(args) -> int:
    if args.bins < 2:
        raise ContractError(f"need at least 2 bins, got {args.bins}")
    payload, cfg, datasets, model = _load_model_for_eval(args)
    split = _select_split(datasets, args.split)
    priors, posteriors = ev.collect_attention(model, payload["params"], split,
                                              batch_size=cfg["batch_size"])
    report = ev.build_report(datasets.names, priors, posteriors, args.split,
                             args.checkpoint, bins=args.bins, config=cfg)
    _dump_json(report, args.out)
    hist_path = args.out_hist or args.out + ".hist.csv"
    ev.write_histogram_csv(hist_path, datasets.names, report["histograms"])
    top = ", ".join(f"{name}({report['importance'][name]:.3f})"
                    for name in report["ranking"][:3])
    print(f"report: {args.out}")
    print(f"histograms: {hist_path}")
    print(f"top variables: {top}")
    return 0


def _corrupt_node(loss: tp.Node) -> tp.Node:
    # negative-control hook: forward identity with a deliberately wrong vjp
    return loss.tape._emit("corrupt_identity", loss.value, (loss,),
                           lambda g: (1.01 * g,))


def cmd_gradcheck(args) -> int:
    model = make_model(args.variant, args.n, args.d)
    rng = np.random.default_rng(args.seed)
    params = model.init_params(rng)
    xs = rng.standard_normal((1, args.t, args.n))
    y = rng.standard_normal(1)

    def build(t, pn):
        loss = model.build_graph(t, pn, xs, y=y)["data_loss"]
        if args.corrupt_gradient:
            loss = _corrupt_node(loss)
        return loss

    err = tp.gradcheck(build, params)
    print(f"max relative gradient error: {err:.6e}")
    if err > args.threshold:
        print(f"FAIL: exceeds threshold {args.threshold:g}", file=sys.stderr)
        return 2
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvlstm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a seeded synthetic dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=int, default=5000,
                   help="simulated steps incl. burn-in; rows = length - 100")
    p.add_argument("--n-exo", type=int, default=10)
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--out-manifest", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a variant and write a checkpoint")
    p.add_argument("--config", default=None, help="JSON run config (complete)")
    p.add_argument("--data", required=True)
    p.add_argument("--variant", choices=VARIANT_TAGS, default="mvlstm")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-log", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--l2-lambda", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--d", type=int, default=None, help="units per variable")
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--window-t", type=int, default=None)
    p.add_argument("--window-stride", type=int, default=None)
    p.add_argument("--target-column", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics (original units) on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "valid", "test", "all"),
                   default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("interpret", help="variable importance + histograms")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "valid", "test", "all"),
                   default="test")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--out-hist", default=None)
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("gradcheck", help="finite-difference check of the gradients")
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--t", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--variant", choices=VARIANT_TAGS, default="mvlstm")
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--corrupt-gradient", action="store_true",
                   help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ContractError, DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, DimensionError, ArithmeticError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
