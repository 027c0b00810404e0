import numpy as np
import pytest
from _gradcheck import max_relative_error

from fieldyield.data import normalize_dataset
from fieldyield.errors import DataValidationError
from fieldyield.grid import build_spatial_weights
from fieldyield.network import (
    MtlArch,
    backward,
    concat_features,
    dense_forward,
    forward,
    init_model,
    sigmoid,
)
from fieldyield.synth import synth_field
from fieldyield.training import LossConfig, _task_batches, loss_and_gradients, mse_data_loss


def tiny_setup(n_tasks=2, dropout=0.0, seed=5):
    ds, _ = synth_field(3, 3, n_tasks, seed=seed)
    dsn, _ = normalize_dataset(ds)
    dims = dsn.source_dims()
    arch = MtlArch(
        source_dims=tuple(dims.items()),
        extractor_width=3,
        shared_width=4,
        head_widths=(4, 3),
        dropout=dropout,
    )
    return dsn, arch


def densify(model, seed=0):
    """Give the zero-initialized tensors random values so gradient flows
    through every layer during finite-difference checks."""
    rng = np.random.default_rng(seed)
    for name, p in model.params.items():
        if not np.any(p):
            p[:] = 0.5 * rng.standard_normal(p.shape)
    return model


class TestSigmoid:
    def test_zero(self):
        assert sigmoid(0.0) == 0.5

    def test_hand_value(self):
        assert sigmoid(2.0) == pytest.approx(0.8807971, abs=1e-6)

    def test_complement_identity(self):
        xs = np.linspace(-20, 20, 101)
        assert np.max(np.abs(sigmoid(xs) + sigmoid(-xs) - 1.0)) < 1e-12

    def test_stable_at_extremes(self):
        assert sigmoid(700.0) == 1.0
        assert sigmoid(-700.0) == pytest.approx(0.0, abs=1e-300)
        assert np.isfinite(sigmoid(np.array([-750.0, 750.0]))).all()


class TestDenseForward:
    def test_zero_parameters_sigmoid(self):
        out = dense_forward(np.zeros(3), np.zeros((3, 2)), np.zeros(2), "sigmoid")
        assert out.tolist() == [0.5, 0.5]

    def test_identity_linear(self):
        x = np.array([1.0, -2.0, 3.0])
        out = dense_forward(x, np.eye(3), np.zeros(3), "linear")
        assert np.array_equal(out, x)

    def test_hand_value(self):
        out = dense_forward(np.array([1.0, 2.0]), np.array([[1.0], [1.0]]), np.array([0.5]), "linear")
        assert out.tolist() == [3.5]

    def test_dimension_mismatch(self):
        with pytest.raises(DataValidationError):
            dense_forward(np.zeros(3), np.zeros((2, 2)), np.zeros(2))


class TestConcatFeatures:
    def test_definition(self):
        out = concat_features([np.array([1.0]), np.array([2.0])])
        assert out.tolist() == [1.0, 2.0]

    def test_width_sum(self):
        parts = [np.zeros((5, 8)) for _ in range(4)]
        assert concat_features(parts).shape == (5, 32)

    def test_single_source_identity(self):
        x = np.arange(6.0).reshape(2, 3)
        assert np.array_equal(concat_features([x]), x)

    def test_empty_rejected(self):
        with pytest.raises(DataValidationError):
            concat_features([])


class TestForward:
    def test_zero_network_zero_output(self):
        dsn, arch = tiny_setup(n_tasks=1)
        model = init_model(arch, dsn.tasks, 0)
        for name in model.params:
            model.params[name][:] = 0.0
        yhat, _ = forward(model, dsn.model_inputs(dsn.tasks[0]), dsn.tasks[0])
        assert np.array_equal(yhat, np.zeros(9))

    def test_infer_deterministic(self):
        dsn, arch = tiny_setup(dropout=0.5)
        model = densify(init_model(arch, dsn.tasks, 1), seed=1)
        feats = dsn.model_inputs(dsn.tasks[0])
        a, _ = forward(model, feats, dsn.tasks[0], mode="infer")
        b, _ = forward(model, feats, dsn.tasks[0], mode="infer")
        assert np.array_equal(a, b)

    def test_zero_dropout_train_equals_infer(self):
        dsn, arch = tiny_setup(dropout=0.0)
        model = densify(init_model(arch, dsn.tasks, 1), seed=1)
        feats = dsn.model_inputs(dsn.tasks[0])
        a, _ = forward(model, feats, dsn.tasks[0], mode="train", rng=np.random.default_rng(0))
        b, _ = forward(model, feats, dsn.tasks[0], mode="infer")
        assert np.array_equal(a, b)

    def test_unknown_task_rejected(self):
        dsn, arch = tiny_setup()
        model = init_model(arch, dsn.tasks, 1)
        with pytest.raises(DataValidationError):
            forward(model, dsn.model_inputs(dsn.tasks[0]), 1999)

    def test_train_mode_needs_rng_when_dropping(self):
        dsn, arch = tiny_setup(dropout=0.2)
        model = init_model(arch, dsn.tasks, 1)
        with pytest.raises(DataValidationError):
            forward(model, dsn.model_inputs(dsn.tasks[0]), dsn.tasks[0], mode="train")

    def test_fixed_mask_train_matches_scaled_subnetwork(self):
        # with a fixed mask, train-mode output equals infer on the surviving
        # subnetwork scaled by 1/(1-rate)
        dsn, arch = tiny_setup(dropout=0.4)
        model = densify(init_model(arch, dsn.tasks, 3), seed=3)
        feats = dsn.model_inputs(dsn.tasks[0])
        yhat, cache = forward(model, feats, dsn.tasks[0], mode="train", rng=np.random.default_rng(7))
        h = cache["a_shared"]
        t = dsn.tasks[0]
        for i, layer in enumerate(cache["head"]):
            s = sigmoid(h @ model.params[f"head.{t}.h{i}.W"] + model.params[f"head.{t}.h{i}.b"])
            h = s * layer["scale"]
        manual = h @ model.params[f"head.{t}.out.W"] + model.params[f"head.{t}.out.b"][0]
        assert np.max(np.abs(manual - yhat)) < 1e-12

    def test_task_isolation(self):
        dsn, arch = tiny_setup(n_tasks=2)
        model = init_model(arch, dsn.tasks, 4)
        rng = np.random.default_rng(0)
        for name, p in model.params.items():
            if name.endswith("out.W"):  # zero at init; make heads live
                p[:] = rng.normal(size=p.shape)
        t0, t1 = dsn.tasks
        before0, _ = forward(model, dsn.model_inputs(t0), t0)
        before1, _ = forward(model, dsn.model_inputs(t1), t1)
        model.params[f"head.{t1}.h0.W"] += 0.5
        after0, _ = forward(model, dsn.model_inputs(t0), t0)
        after1, _ = forward(model, dsn.model_inputs(t1), t1)
        assert np.array_equal(before0, after0)
        assert not np.array_equal(before1, after1)

    def test_init_deterministic(self):
        dsn, arch = tiny_setup()
        a = init_model(arch, dsn.tasks, 9)
        b = init_model(arch, dsn.tasks, 9)
        for name in a.param_names():
            assert np.array_equal(a.params[name], b.params[name])


class TestBackward:
    def test_single_sample_linear_least_squares(self):
        # single task, lambda 0: gradient of the sum-of-squares data term
        dsn, arch = tiny_setup(n_tasks=1)
        model = init_model(arch, dsn.tasks, 2)
        t = dsn.tasks[0]
        feats = {s: v[:1] for s, v in dsn.model_inputs(t).items()}
        target = dsn.tables[t].yields[:1]
        yhat, cache = forward(model, feats, t)
        grads = backward(model, [(cache, 2.0 * (yhat - target))])
        # output-layer gradient has the closed form 2*(yhat-y)*h
        h = cache["head"][-1]["out"]
        expected = 2.0 * (yhat - target) @ h
        assert np.max(np.abs(grads[f"head.{t}.out.W"] - expected)) < 1e-12

    def test_gradients_finite_on_random_batches(self):
        dsn, arch = tiny_setup(n_tasks=2)
        model = densify(init_model(arch, dsn.tasks, 8), seed=8)
        cfg = LossConfig(lam=0.3, weights=build_spatial_weights(dsn.grid, 2.0))
        batches = _task_batches(dsn, arch.sources, cfg)
        *_, grads = loss_and_gradients(model, batches, cfg)
        for name, g in grads.items():
            assert np.all(np.isfinite(g)), name

    def test_missing_cache_rejected(self):
        dsn, arch = tiny_setup(n_tasks=1)
        model = init_model(arch, dsn.tasks, 2)
        with pytest.raises(DataValidationError):
            backward(model, [({}, np.zeros(9))])

    @pytest.mark.parametrize("lam", [0.0, 0.5])
    def test_gradient_matches_finite_differences(self, lam):
        dsn, arch = tiny_setup(n_tasks=2)
        model = densify(init_model(arch, dsn.tasks, 11), seed=11)
        cfg = LossConfig(lam=lam, weights=build_spatial_weights(dsn.grid, 1.5))
        batches = _task_batches(dsn, arch.sources, cfg)
        *_, grads = loss_and_gradients(model, batches, cfg)
        worst, where = max_relative_error(
            model, lambda: loss_and_gradients(model, batches, cfg)[0], grads
        )
        assert worst < 1e-5, f"max rel err {worst:.2e} at {where}"

    def test_gradient_with_fixed_dropout_masks(self):
        dsn, arch = tiny_setup(n_tasks=1, dropout=0.3)
        model = densify(init_model(arch, dsn.tasks, 2), seed=2)
        cfg = LossConfig(lam=0.2, weights=build_spatial_weights(dsn.grid, 1.5))
        batches = _task_batches(dsn, arch.sources, cfg)

        def loss():
            # reseeding per evaluation pins the dropout masks
            return loss_and_gradients(model, batches, cfg, mode="train", rng=np.random.default_rng(5))[0]

        *_, grads = loss_and_gradients(model, batches, cfg, mode="train", rng=np.random.default_rng(5))
        worst, where = max_relative_error(model, loss, grads)
        assert worst < 1e-5, f"max rel err {worst:.2e} at {where}"

    def test_gradient_predicted_neighbor_mode(self):
        dsn, arch = tiny_setup(n_tasks=1)
        model = densify(init_model(arch, dsn.tasks, 6), seed=6)
        cfg = LossConfig(lam=0.7, neighbor_target="predicted", weights=build_spatial_weights(dsn.grid, 1.5))
        batches = _task_batches(dsn, arch.sources, cfg)
        *_, grads = loss_and_gradients(model, batches, cfg)
        worst, where = max_relative_error(
            model, lambda: loss_and_gradients(model, batches, cfg)[0], grads
        )
        assert worst < 1e-5, f"max rel err {worst:.2e} at {where}"

    def test_batch_permutation_invariance(self):
        dsn, arch = tiny_setup(n_tasks=1)
        model = densify(init_model(arch, dsn.tasks, 3), seed=3)
        t = dsn.tasks[0]
        feats = dsn.model_inputs(t)
        y = dsn.tables[t].yields
        yhat, cache = forward(model, feats, t)
        grads = backward(model, [(cache, 2.0 * (yhat - y))])
        perm = np.random.default_rng(0).permutation(len(y))
        feats_p = {s: v[perm] for s, v in feats.items()}
        yhat_p, cache_p = forward(model, feats_p, t)
        grads_p = backward(model, [(cache_p, 2.0 * (yhat_p - y[perm]))])
        assert abs(mse_data_loss(y, yhat) - mse_data_loss(y[perm], yhat_p)) < 1e-10
        for name in grads:
            assert np.max(np.abs(grads[name] - grads_p[name])) < 1e-10, name
