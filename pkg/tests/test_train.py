"""Trainer: loss additivity, Adam update math, early stopping, descent
property, divergence reporting, checkpoint round-trips and determinism."""

import copy
import json

import numpy as np
import pytest

from mvlstm import data as dat
from mvlstm import train as tr
from mvlstm.errors import ConfigError, ContractError, DivergenceError
from mvlstm.variants import make_model


def toy_datasets(seed=0, L=400, n_vars=3, T=5, linear_target=False):
    """Small random series; optionally y_{t} = previous value of column 0."""
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((L, n_vars))
    if linear_target:
        values[1:, -1] = values[:-1, 0]
    series = dat.RawSeries(names=[f"c{i}" for i in range(n_vars - 1)] + ["y"],
                           values=values)
    return dat.prepare(series, window_T=T)


class TestBatchLoss:
    def test_zero_l2_single_sequence_equals_negative_loglik(self):
        datasets = toy_datasets()
        model = make_model("mvlstm", 3, 2)
        params = model.init_params(np.random.default_rng(1))
        xs = datasets.train.batch.inputs[:1]
        y = datasets.train.batch.targets[:1]
        from mvlstm import cell, head
        ref = head.mixture_forward(model.head_params(params),
                                   cell.unroll(model.cell_params(params), xs[0]).history,
                                   y[0])
        loss = tr.batch_loss(model, params, xs, y, l2_lambda=0.0)
        assert abs(loss - (-ref.loglik)) <= 1e-12

    def test_zero_weights_zero_regularizer(self):
        datasets = toy_datasets()
        model = make_model("mvlstm", 3, 2)
        params = model.init_params(np.random.default_rng(2))
        for name in model.weight_names:
            params[name] = np.zeros_like(params[name])
        xs = datasets.train.batch.inputs[:2]
        y = datasets.train.batch.targets[:2]
        assert tr.batch_loss(model, params, xs, y, 0.0) == \
            tr.batch_loss(model, params, xs, y, 10.0)

    def test_batch_additivity(self):
        datasets = toy_datasets()
        model = make_model("mvlstm", 3, 2)
        params = model.init_params(np.random.default_rng(3))
        xs = datasets.train.batch.inputs[:2]
        y = datasets.train.batch.targets[:2]
        both = tr.batch_loss(model, params, xs, y, 0.0)
        solo = sum(tr.batch_loss(model, params, xs[i:i + 1], y[i:i + 1], 0.0)
                   for i in range(2))
        assert abs(both - solo) <= 1e-12

    def test_empty_batch_rejected(self):
        model = make_model("mvlstm", 3, 2)
        params = model.init_params(np.random.default_rng(4))
        with pytest.raises(ContractError):
            tr.batch_loss(model, params, np.zeros((0, 5, 3)), np.zeros(0))

    def test_training_gradient_path_passes_gradcheck(self):
        # the exact loss_node used by the optimizer (data term + L2) checks
        # out against finite differences, so fit trains on validated grads
        from mvlstm import tape as tp

        datasets = toy_datasets(seed=42)
        model = make_model("mvlstm", 3, 2)
        params = model.init_params(np.random.default_rng(43))
        xs = datasets.train.batch.inputs[:1]
        y = datasets.train.batch.targets[:1]

        def build(t, pn):
            return tr.loss_node(model, t, pn, xs, y, l2_lambda=0.01)

        assert tp.gradcheck(build, params) <= 1e-4

    def test_threads_reduce_to_same_gradients(self):
        datasets = toy_datasets(seed=5)
        model = make_model("mvlstm", 3, 2)
        params = model.init_params(np.random.default_rng(6))
        xs = datasets.train.batch.inputs[:8]
        y = datasets.train.batch.targets[:8]
        l1, g1 = tr.batch_loss_and_grads(model, params, xs, y, 0.001, threads=1)
        l4, g4 = tr.batch_loss_and_grads(model, params, xs, y, 0.001, threads=4)
        assert abs(l1 - l4) <= 1e-9
        for k in g1:
            assert np.abs(g1[k] - g4[k]).max() <= 1e-9


class TestAdam:
    def test_first_step_magnitude(self):
        params = {"w": np.zeros(4)}
        state = tr.AdamState.init(params)
        tr.adam_step(state, params, {"w": np.ones(4)}, lr=0.01)
        assert np.abs(np.abs(params["w"]) - 0.01).max() <= 1e-6 * 0.01

    def test_zero_gradient_no_motion(self):
        params = {"w": np.full(3, 0.5)}
        state = tr.AdamState.init(params)
        tr.adam_step(state, params, {"w": np.zeros(3)}, lr=0.1)
        np.testing.assert_array_equal(params["w"], np.full(3, 0.5))

    def test_deterministic_across_runs(self):
        def run():
            rng = np.random.default_rng(7)
            params = {"a": rng.standard_normal(5), "b": rng.standard_normal((2, 2))}
            state = tr.AdamState.init(params)
            for _ in range(10):
                grads = {k: np.sin(v) for k, v in params.items()}
                tr.adam_step(state, params, grads, lr=0.05)
            return params

        p1, p2 = run(), run()
        for k in p1:
            assert np.array_equal(p1[k], p2[k])


class TestFit:
    def test_zero_learning_rate_freezes_parameters(self):
        datasets = toy_datasets(seed=8)
        model = make_model("mvlstm", 3, 2)
        cfg = tr.TrainConfig(batch_size=32, learning_rate=0.0, dropout=0.0,
                             d_per_variable=2, max_epochs=3, patience=5, seed=9)
        result = tr.fit(model, datasets, cfg)
        init = model.init_params(np.random.default_rng(9))
        for k in init:
            assert np.array_equal(result.params[k], init[k])
        rmses = [row["valid_rmse"] for row in result.log]
        assert len(set(rmses)) == 1

    def test_max_epochs_zero_returns_initial_params(self):
        datasets = toy_datasets(seed=10)
        model = make_model("mvlstm", 3, 2)
        cfg = tr.TrainConfig(batch_size=32, d_per_variable=2, max_epochs=0,
                             seed=11)
        result = tr.fit(model, datasets, cfg)
        init = model.init_params(np.random.default_rng(11))
        for k in init:
            assert np.array_equal(result.params[k], init[k])
        assert result.log == []

    def test_learns_linear_target_beats_mean_predictor(self):
        datasets = toy_datasets(seed=12, L=1500, linear_target=True)
        model = make_model("mvlstm", 3, 4)
        cfg = tr.TrainConfig(batch_size=64, learning_rate=0.005, dropout=0.0,
                             l2_lambda=0.0001, d_per_variable=4, max_epochs=5,
                             patience=5, seed=13)
        result = tr.fit(model, datasets, cfg)
        mean_pred = np.full_like(datasets.valid.targets_orig,
                                 datasets.train.targets_orig.mean())
        from mvlstm.evaluate import rmse
        baseline = rmse(datasets.valid.targets_orig, mean_pred)
        assert result.best_valid_rmse < baseline

    def test_same_seed_identical_log_and_params(self):
        datasets = toy_datasets(seed=14)
        model = make_model("mvlstm", 3, 2)
        cfg = tr.TrainConfig(batch_size=32, d_per_variable=2, max_epochs=3,
                             seed=15)
        r1 = tr.fit(model, datasets, cfg)
        r2 = tr.fit(model, datasets, cfg)
        assert r1.log == r2.log
        for k in r1.params:
            assert np.array_equal(r1.params[k], r2.params[k])

    def test_one_step_descent_small_lr(self):
        datasets = toy_datasets(seed=16)
        model = make_model("mvlstm", 3, 2)
        xs = datasets.train.batch.inputs[:16]
        y = datasets.train.batch.targets[:16]
        descents = 0
        for trial in range(100):
            params = model.init_params(np.random.default_rng(100 + trial))
            before, grads = tr.batch_loss_and_grads(model, params, xs, y, 0.001)
            state = tr.AdamState.init(params)
            tr.adam_step(state, params, grads, lr=1e-4)
            after = tr.batch_loss(model, params, xs, y, 0.001)
            descents += after <= before
        assert descents >= 95

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_with_location(self):
        datasets = toy_datasets(seed=17)
        model = make_model("mvlstm", 3, 2)
        # Adam's unit-scaled steps keep moderate blowups finite; an absurd
        # rate overflows the squared residual into inf/NaN within one epoch
        cfg = tr.TrainConfig(batch_size=32, learning_rate=1e200, dropout=0.0,
                             d_per_variable=2, max_epochs=4, patience=5, seed=18)
        with pytest.raises(DivergenceError, match=r"epoch \d+, batch \d+"):
            tr.fit(model, datasets, cfg)

    def test_empty_split_rejected(self):
        datasets = toy_datasets(seed=19)
        empty = dat.SplitData(batch=dat.SequenceBatch(np.zeros((0, 5, 3)),
                                                      np.zeros(0), np.zeros(0)),
                              targets_orig=np.zeros(0))
        broken = dat.Datasets(train=datasets.train, valid=empty,
                              test=datasets.test, stats=datasets.stats,
                              names=datasets.names, window_T=5)
        model = make_model("mvlstm", 3, 2)
        with pytest.raises(ContractError):
            tr.fit(model, broken, tr.TrainConfig(d_per_variable=2, max_epochs=1))

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            tr.TrainConfig(dropout=1.0).validate()
        with pytest.raises(ConfigError):
            tr.TrainConfig(batch_size=0).validate()
        with pytest.raises(ConfigError):
            tr.TrainConfig(patience=0).validate()


class TestCheckpoint:
    def test_roundtrip_preserves_params_and_rmse(self, tmp_path):
        datasets = toy_datasets(seed=20)
        model = make_model("mvlstm", 3, 2)
        cfg = tr.TrainConfig(batch_size=32, d_per_variable=2, max_epochs=2,
                             seed=21)
        result = tr.fit(model, datasets, cfg)
        rmse_before = tr.validation_rmse(model, result.params, datasets, 32)

        path = str(tmp_path / "ckpt.json")
        tr.save_checkpoint(path, model.tag, {"seed": 21}, result.params,
                           model.n_vars, model.d, datasets.names,
                           rng_state=result.rng_state)
        payload = tr.load_checkpoint(path)
        assert payload["variant"] == "mvlstm"
        for k, v in result.params.items():
            assert np.array_equal(payload["params"][k], v)
        rmse_after = tr.validation_rmse(model, payload["params"], datasets, 32)
        assert rmse_before == rmse_after  # bit-exact

    def test_rejects_unknown_format_version(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format_version": 99, "tensors": {}}))
        with pytest.raises(ConfigError):
            tr.load_checkpoint(str(path))

    def test_training_log_format(self, tmp_path):
        path = str(tmp_path / "log.csv")
        tr.write_training_log(path, [{"epoch": 1, "train_loss": 2.5,
                                      "valid_rmse": 1.25, "wall_ms": 0.0}])
        lines = open(path).read().splitlines()
        assert lines[0] == "epoch,train_loss,valid_rmse,wall_ms"
        assert lines[1] == "1,2.5,1.25,0.0"
