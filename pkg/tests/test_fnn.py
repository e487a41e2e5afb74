import math

import numpy as np
import pytest

from chromfit import column, fnn, seeds
from chromfit.column import ColumnConfig, DetectorSpec, InjectionProfile
from chromfit.datagen import NormStats, Sample
from chromfit.errors import ConfigError, DivergenceError
from chromfit.fnn import (
    CvReport,
    FnnModel,
    GridRow,
    GridSpace,
    TrainConfig,
    cross_validate,
    forward,
    gradients,
    grid_search,
    loss,
    predict,
    r_squared,
    r_squared_per_entry,
    read_model,
    train,
    write_grid_report,
    write_history,
    write_model,
)
from chromfit.isotherm import IsothermParams


def toy_model(sizes=(10, 7, 5, 8), activation="sigmoid", seed=0):
    return FnnModel.init(sizes, activation, np.random.default_rng(seed))


class TestModel:
    def test_init_shapes_and_bounds(self):
        model = toy_model()
        assert model.layer_sizes == (10, 7, 5, 8)
        assert [w.shape for w in model.weights] == [(7, 10), (5, 7), (8, 5)]
        assert [b.shape for b in model.biases] == [(7,), (5,), (8,)]
        for (fan_in, fan_out), w in zip(((10, 7), (7, 5), (5, 8)), model.weights):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            assert np.all(np.abs(w) <= limit)
        assert all(np.all(b == 0) for b in model.biases)

    def test_init_seeded(self):
        a = FnnModel.init((4, 3), "tanh", np.random.default_rng(1))
        b = FnnModel.init((4, 3), "tanh", np.random.default_rng(1))
        assert np.array_equal(a.weights[0], b.weights[0])

    def test_copy_is_independent(self):
        model = toy_model()
        other = model.copy()
        other.weights[0][0, 0] += 1.0
        assert model.weights[0][0, 0] != other.weights[0][0, 0]

    def test_parameter_count(self):
        model = toy_model()
        assert model.parameter_count() == (7 * 10 + 7) + (5 * 7 + 5) + (8 * 5 + 8)

    def test_validation(self):
        with pytest.raises(ConfigError):
            FnnModel.init((5,), "sigmoid")
        with pytest.raises(ConfigError):
            FnnModel.init((5, 3), "relu")
        good = toy_model()
        with pytest.raises(ConfigError):
            FnnModel(good.layer_sizes, "sigmoid", good.weights[:-1], good.biases)
        with pytest.raises(ConfigError):
            FnnModel((10, 7, 5, 8), "sigmoid",
                     [np.zeros((7, 10)), np.zeros((5, 7)), np.zeros((8, 6))],
                     [np.zeros(7), np.zeros(5), np.zeros(8)])


class TestForward:
    def test_zero_parameters_give_midrange(self):
        model = FnnModel((4, 3, 8), "sigmoid",
                         [np.zeros((3, 4)), np.zeros((8, 3))],
                         [np.zeros(3), np.zeros(8)])
        out = forward(model, np.ones(4))
        assert np.array_equal(out, np.full(8, 50.0))

    def test_hand_sized_tanh_chain(self):
        w0 = np.array([[0.3, -0.2], [0.1, 0.4]])
        b0 = np.array([0.05, -0.1])
        w1 = np.array([[0.7, -0.5]])
        b1 = np.array([0.2])
        model = FnnModel((2, 2, 1), "tanh", [w0, w1], [b0, b1])
        x = np.array([1.0, 2.0])
        a0 = math.tanh(0.3 * 1.0 - 0.2 * 2.0 + 0.05)
        a1 = math.tanh(0.1 * 1.0 + 0.4 * 2.0 - 0.1)
        z = 0.7 * a0 - 0.5 * a1 + 0.2
        expected = 100.0 / (1.0 + math.exp(-z))
        out = forward(model, x)
        assert out.shape == (1,)
        assert out[0] == pytest.approx(expected, rel=1e-12)

    def test_outputs_strictly_inside_range(self):
        rng = np.random.default_rng(2)
        model = toy_model()
        for _ in range(20):
            out = forward(model, rng.normal(0, 5, 10))
            assert np.all(out > 0.0) and np.all(out < 100.0)
        # saturate the output node hard in both directions
        saturated = toy_model((3, 8))
        saturated.biases[0][:4] = 1e4
        saturated.biases[0][4:] = -1e4
        out = forward(saturated, np.zeros(3))
        assert np.all(out > 0.0) and np.all(out < 100.0)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        model = toy_model(activation="tanh")
        batch = rng.normal(0, 1, (6, 10))
        stacked = forward(model, batch)
        for i in range(6):
            # batched and single evaluations take different BLAS paths
            assert np.allclose(stacked[i], forward(model, batch[i]),
                               rtol=1e-12, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigError):
            forward(toy_model(), np.zeros(11))


class TestLoss:
    def test_perfect_predictions_zero_loss(self):
        model = toy_model()
        x = np.random.default_rng(4).normal(0, 1, (5, 10))
        y = forward(model, x)
        cfg = TrainConfig(loss_norm="L2")
        assert loss(model, x, y, cfg) == 0.0
        assert loss(model, x, y, TrainConfig(loss_norm="L1")) == 0.0

    def test_unit_error_data_term(self):
        model = toy_model()
        x = np.ones(10)
        y = forward(model, x) - 1.0
        assert loss(model, x, y, TrainConfig(loss_norm="L2")) == pytest.approx(1.0)
        assert loss(model, x, y, TrainConfig(loss_norm="L1")) == pytest.approx(1.0)

    def test_zero_weight_model_has_zero_penalty(self):
        model = FnnModel((4, 8), "sigmoid", [np.zeros((8, 4))], [np.zeros(8)])
        x = np.zeros((2, 4))
        y = np.full((2, 8), 30.0)
        cfg = TrainConfig(loss_norm="L2", alpha_w=1.0)
        # predictions sit at the 50-vector, penalty contributes nothing
        assert loss(model, x, y, cfg) == pytest.approx(400.0)

    def test_penalty_accounting(self):
        model = toy_model()
        x = np.random.default_rng(5).normal(0, 1, (3, 10))
        y = forward(model, x)
        w_sq = sum(float(np.sum(w ** 2)) for w in model.weights)
        cfg = TrainConfig(loss_norm="L2", alpha_w=0.5, alpha_b=2.0)
        assert loss(model, x, y, cfg) == pytest.approx(0.5 * w_sq, rel=1e-12)
        w_abs = sum(float(np.sum(np.abs(w))) for w in model.weights)
        cfg1 = TrainConfig(loss_norm="L1", alpha_w=0.25)
        assert loss(model, x, y, cfg1) == pytest.approx(0.25 * w_abs, rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(loss_norm="Linf")
        with pytest.raises(ConfigError):
            TrainConfig(alpha_w=-0.1)
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0.0)
        with pytest.raises(ConfigError):
            TrainConfig(patience=0)
        with pytest.raises(ConfigError):
            TrainConfig(optimizer="lbfgs")


def flat_params(model):
    return np.concatenate([a.ravel() for a in model.weights + model.biases])


def set_flat_params(model, theta):
    pos = 0
    for arr in model.weights + model.biases:
        arr.flat[:] = theta[pos:pos + arr.size]
        pos += arr.size


def fd_gradient(model, x, y, cfg, step=1e-6):
    theta = flat_params(model)
    grad = np.empty_like(theta)
    probe = model.copy()
    for j in range(theta.size):
        bumped = theta.copy()
        bumped[j] += step
        set_flat_params(probe, bumped)
        up = loss(probe, x, y, cfg)
        bumped[j] -= 2 * step
        set_flat_params(probe, bumped)
        down = loss(probe, x, y, cfg)
        grad[j] = (up - down) / (2 * step)
    return grad


def relative_error(a, b):
    # the floor absorbs finite-difference roundoff on near-zero partials
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-4)
    return np.abs(a - b) / scale


GRADCHECK_SEEDS = {("sigmoid", "L1"): 21, ("sigmoid", "L2"): 22,
                   ("tanh", "L1"): 23, ("tanh", "L2"): 24}


class TestGradients:
    @pytest.mark.parametrize("activation", ["sigmoid", "tanh"])
    @pytest.mark.parametrize("norm", ["L1", "L2"])
    def test_matches_finite_differences(self, activation, norm):
        rng = np.random.default_rng(GRADCHECK_SEEDS[(activation, norm)])
        cfg = TrainConfig(loss_norm=norm, alpha_w=0.01, alpha_b=0.003)
        for _ in range(5):
            model = FnnModel.init((10, 7, 5, 8), activation, rng)
            for b in model.biases:
                b += rng.normal(0, 0.1, b.shape)
            x = rng.normal(0, 1, (3, 10))
            # keep targets away from predictions so the L1 term stays smooth
            y = forward(model, x) + rng.choice([-1.0, 1.0], (3, 8)) * rng.uniform(
                0.5, 1.5, (3, 8))
            grad_w, grad_b = gradients(model, x, y, cfg)
            analytic = np.concatenate([g.ravel() for g in grad_w + grad_b])
            numeric = fd_gradient(model, x, y, cfg)
            assert relative_error(analytic, numeric).max() < 1e-5

    def test_zero_error_no_regularization_zero_gradient(self):
        model = toy_model()
        x = np.random.default_rng(8).normal(0, 1, (4, 10))
        y = forward(model, x)
        grad_w, grad_b = gradients(model, x, y, TrainConfig())
        assert all(np.all(g == 0) for g in grad_w)
        assert all(np.all(g == 0) for g in grad_b)

    def test_l2_penalty_gradient_is_linear_in_weight(self):
        model = toy_model()
        x = np.random.default_rng(9).normal(0, 1, (2, 10))
        y = forward(model, x)  # zero data gradient isolates the penalty
        cfg = TrainConfig(loss_norm="L2", alpha_w=0.7, alpha_b=0.3)
        grad_w, grad_b = gradients(model, x, y, cfg)
        for g, w in zip(grad_w, model.weights):
            assert np.allclose(g, 2 * 0.7 * w, rtol=1e-12)
        for g, b in zip(grad_b, model.biases):
            assert np.allclose(g, 2 * 0.3 * b, rtol=1e-12)

    def test_l1_subgradient_zero_at_zero(self):
        model = FnnModel((3, 2), "sigmoid", [np.zeros((2, 3))], [np.zeros(2)])
        x = np.ones((2, 3))
        y = forward(model, x)
        grad_w, grad_b = gradients(model, x, y,
                                   TrainConfig(loss_norm="L1", alpha_w=5.0,
                                               alpha_b=5.0))
        assert np.all(grad_w[0] == 0)
        assert np.all(grad_b[0] == 0)


class TestRSquared:
    def test_perfect(self):
        y = np.random.default_rng(10).uniform(0, 100, (6, 8))
        assert r_squared(y, y) == 1.0

    def test_mean_predictor_scores_zero(self):
        y = np.random.default_rng(11).uniform(0, 100, (6, 8))
        pred = np.tile(y.mean(axis=0), (6, 1))
        assert r_squared(pred, y) == 0.0

    def test_hand_computed_scalar_case(self):
        assert r_squared(np.array([1.5, 2.5]), np.array([1.0, 3.0])) == 0.75

    def test_never_exceeds_one(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            y = rng.uniform(0, 100, (5, 8))
            pred = rng.uniform(0, 100, (5, 8))
            assert r_squared(pred, y) <= 1.0

    def test_identical_targets_rejected(self):
        y = np.full((4, 8), 3.0)
        with pytest.raises(ConfigError):
            r_squared(y + 1.0, y)

    def test_shape_and_count_checks(self):
        with pytest.raises(ConfigError):
            r_squared(np.zeros((3, 8)), np.zeros((4, 8)))
        with pytest.raises(ConfigError):
            r_squared(np.array([1.0]), np.array([2.0]))

    def test_per_entry(self):
        rng = np.random.default_rng(13)
        y = rng.uniform(0, 100, (20, 8))
        pred = y.copy()
        pred[:, 3] = y[:, 3].mean()
        scores = r_squared_per_entry(pred, y)
        assert scores.shape == (8,)
        assert np.all(scores[np.arange(8) != 3] == 1.0)
        assert scores[3] == 0.0


def simulate_linear_pair(a1, a2, config, profile):
    params = IsothermParams(a1 / 2, 0.0, a1 / 2, 0.0, a2 / 2, 0.0, a2 / 2, 0.0)
    result = column.simulate(config, params, profile)
    return column.total_response(result, DetectorSpec()).response


def linear_regime_data(n, seed):
    """Desk-scale learnable task: chromatogram -> retention coefficients."""
    config = ColumnConfig(n_cells=30, horizon_T=720.0, n_time_points_NT=60)
    # unequal injection heights keep the two peaks attributable to their
    # components; equal heights would make (a1, a2) and (a2, a1) identical
    profile = InjectionProfile(15.0, 5.0)
    rng = seeds.stream(seed, "smoke")
    features, targets = [], []
    for _ in range(n):
        a1, a2 = rng.uniform(0.5, 4.0, 2)
        response = simulate_linear_pair(a1, a2, config, profile)
        features.append(np.concatenate([response, [15.0, 5.0]]))
        targets.append([10.0 * a1, 10.0 * a2])
    return np.array(features), np.array(targets)


def standardized(x, reference):
    mean = reference.mean(axis=0)
    std = reference.std(axis=0)
    return (x - mean) / np.where(std > 0, std, 1.0)


@pytest.fixture(scope="module")
def smoke():
    x, y = linear_regime_data(200, seed=42)
    x_train, y_train = standardized(x[:150], x[:150]), y[:150]
    x_val, y_val = standardized(x[150:], x[:150]), y[150:]
    cfg = TrainConfig(loss_norm="L2", epochs=300, batch_size=32,
                      learning_rate=0.005, seed=3, optimizer="adam")
    model = FnnModel.init((62, 24, 2), "sigmoid", seeds.stream(3, "init"))
    result = train(model, (x_train, y_train), (x_val, y_val), cfg)
    return result, (x_train, y_train), (x_val, y_val), cfg


class TestTrain:
    def test_smoke_train_learns_linear_regime(self, smoke):
        result, (x_train, y_train), _, _ = smoke
        assert r_squared(forward(result.model, x_train), y_train) > 0.9

    def test_history_shape_and_decreasing_trend(self, smoke):
        result, _, _, cfg = smoke
        assert len(result.history) == cfg.epochs
        assert [row.epoch for row in result.history] == list(range(1, cfg.epochs + 1))
        losses = [row.loss for row in result.history]
        assert losses[-1] < losses[0]
        # loss column carries the penalties; data term alone here (alpha = 0)
        assert all(row.loss == row.data_term for row in result.history)

    def test_best_epoch_tracks_validation(self, smoke):
        result, _, _, _ = smoke
        best_r2 = max(row.val_r2 for row in result.history)
        assert result.history[result.best_epoch - 1].val_r2 == best_r2

    def test_deterministic_and_order_free(self, smoke):
        result, (x_train, y_train), (x_val, y_val), cfg = smoke
        model = FnnModel.init((62, 24, 2), "sigmoid", seeds.stream(3, "init"))
        rerun = train(model, (x_train, y_train), (x_val, y_val), cfg)
        for a, b in zip(result.model.weights, rerun.model.weights):
            assert a.tobytes() == b.tobytes()
        perm = np.random.default_rng(0).permutation(len(x_train))
        model = FnnModel.init((62, 24, 2), "sigmoid", seeds.stream(3, "init"))
        shuffled = train(model, (x_train[perm], y_train[perm]),
                         (x_val, y_val), cfg)
        for a, b in zip(result.model.weights, shuffled.model.weights):
            assert a.tobytes() == b.tobytes()
        assert [r.loss for r in result.history] == [r.loss for r in shuffled.history]

    def test_divergence_reported_with_epoch(self):
        rng = np.random.default_rng(14)
        model = toy_model((5, 4, 8))
        x = rng.normal(0, 1, (10, 5))
        y = rng.uniform(10, 90, (10, 8))
        cfg = TrainConfig(loss_norm="L2", alpha_w=1.0, epochs=10,
                          learning_rate=1e150)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(DivergenceError) as err:
                train(model, (x, y), (x, y), cfg)
        assert err.value.epoch is not None

    def test_early_stopping(self):
        rng = np.random.default_rng(15)
        model = toy_model((5, 4, 8))
        x = rng.normal(0, 1, (10, 5))
        y = rng.uniform(10, 90, (10, 8))
        # learning rate below float resolution: no epoch can improve on the first
        cfg = TrainConfig(epochs=50, learning_rate=1e-300, patience=1)
        result = train(model, (x, y), (x, y), cfg)
        assert result.stopped_early
        assert len(result.history) == 2
        assert result.best_epoch == 1


def smooth_task(n, d_in=5, d_out=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, (n, d_in))
    mix = rng.normal(0, 1, (d_in, d_out))
    y = 50.0 + 30.0 * np.tanh(x @ mix)
    return x, y


class TestGridSearch:
    def test_default_space_has_64_combinations(self):
        assert len(GridSpace().combinations()) == 64

    def test_desk_grid_rows_and_ranking(self, tmp_path):
        x, y = smooth_task(60)
        data = ((x[:40], y[:40]), (x[40:], y[40:]))
        space = GridSpace(hidden_structures=((4,), (6, 3)), loss_norms=("L2",),
                          activations=("sigmoid", "tanh"),
                          alpha_bs=(0.001,), alpha_ws=(0.001,))
        cfg = TrainConfig(epochs=30, batch_size=16, learning_rate=0.01,
                          seed=1, optimizer="adam")
        rows = grid_search(space, data[0], data[1], cfg)
        assert len(rows) == 4
        assert all(isinstance(r, GridRow) for r in rows)
        vals = [r.val_r2 for r in rows]
        assert vals == sorted(vals, reverse=True)
        structures = {r.hidden_structure for r in rows}
        assert structures == {(4,), (6, 3)}
        write_grid_report(tmp_path / "grid.csv", rows)
        lines = (tmp_path / "grid.csv").read_text().splitlines()
        assert lines[0] == ("hidden_structure,loss_norm,activation,"
                            "alpha_b,alpha_w,train_r2,val_r2")
        assert len(lines) == 5

    def test_empty_candidate_list_rejected(self):
        with pytest.raises(ConfigError):
            GridSpace(loss_norms=())


class TestCrossValidate:
    def make_dataset(self, n):
        rng = np.random.default_rng(16)
        config = ColumnConfig(n_cells=10, horizon_T=130.0, n_time_points_NT=4)
        samples = []
        for _ in range(n):
            target = IsothermParams.from_array(rng.uniform(1, 99, 8))
            samples.append(Sample(response=rng.uniform(0, 2, 4),
                                  injection=rng.uniform(1, 29, 2),
                                  target=target))
        from chromfit.datagen import Dataset
        return Dataset(samples=samples, column=config, detector=DetectorSpec())

    def test_report_shape_and_average(self):
        ds = self.make_dataset(40)
        cfg = TrainConfig(epochs=5, batch_size=8, learning_rate=0.01, seed=2)
        report = cross_validate(ds, cfg, (4,), k=5)
        assert report.k == 5
        assert len(report.train_r2) == 5
        assert report.average_r2 == pytest.approx(np.mean(report.val_r2), abs=0)

    def test_deterministic(self):
        ds = self.make_dataset(30)
        cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=0.01, seed=2)
        a = cross_validate(ds, cfg, (3,), k=3)
        b = cross_validate(ds, cfg, (3,), k=3)
        assert a == b

    def test_real_samples_woven_into_folds(self):
        ds = self.make_dataset(40)
        rng = np.random.default_rng(17)
        reals = [Sample(response=rng.uniform(0, 2, 4),
                        injection=np.array([5.0, 15.0]),
                        target=IsothermParams.from_array(rng.uniform(1, 99, 8)),
                        origin="real") for _ in range(5)]
        cfg = TrainConfig(epochs=3, batch_size=8, learning_rate=0.01, seed=2)
        report = cross_validate(ds, cfg, (3,), k=4, real_samples=reals)
        assert report.k == 4

    def test_validation(self):
        ds = self.make_dataset(6)
        cfg = TrainConfig(epochs=1)
        with pytest.raises(ConfigError):
            cross_validate(ds, cfg, (3,), k=1)
        with pytest.raises(ConfigError):
            cross_validate(ds, cfg, (3,), k=7)
        missing = self.make_dataset(6)
        missing.samples[0] = Sample(response=missing.samples[0].response,
                                    injection=missing.samples[0].injection)
        with pytest.raises(ConfigError):
            cross_validate(missing, cfg, (3,), k=2)


class TestPredict:
    def setup_pieces(self):
        model = toy_model((6, 5, 8))
        stats = NormStats(mean=np.full(6, 2.0), std=np.full(6, 0.5))
        model.norm_fingerprint = stats.fingerprint()
        sample = Sample(response=np.array([1.0, 2.0, 3.0, 4.0]),
                        injection=np.array([5.0, 15.0]))
        return model, stats, sample

    def test_matches_manual_pipeline(self):
        model, stats, sample = self.setup_pieces()
        estimate = predict(model, stats, sample)
        manual = forward(model, (sample.features() - stats.mean) / stats.std)
        assert np.array_equal(estimate.as_array(), manual)
        assert isinstance(estimate, IsothermParams)

    def test_requires_matching_stats(self):
        model, stats, sample = self.setup_pieces()
        other = NormStats(mean=np.zeros(6), std=np.ones(6))
        with pytest.raises(ConfigError):
            predict(model, other, sample)
        with pytest.raises(ConfigError):
            predict(model, None, sample)

    def test_feature_length_checked(self):
        model, stats, _ = self.setup_pieces()
        short = Sample(response=np.array([1.0, 2.0]),
                       injection=np.array([5.0, 15.0]))
        with pytest.raises(ConfigError):
            predict(model, stats, short)

    def test_repeatable(self):
        model, stats, sample = self.setup_pieces()
        a = predict(model, stats, sample)
        b = predict(model, stats, sample)
        assert a == b


class TestSerialization:
    def test_model_round_trip(self, tmp_path):
        model = toy_model(activation="tanh")
        model.norm_fingerprint = "abc123"
        path = tmp_path / "model.json"
        write_model(path, model)
        back = read_model(path)
        assert back.layer_sizes == model.layer_sizes
        assert back.activation == "tanh"
        assert back.norm_fingerprint == "abc123"
        for a, b in zip(model.weights, back.weights):
            assert a.tobytes() == b.tobytes()
        for a, b in zip(model.biases, back.biases):
            assert a.tobytes() == b.tobytes()

    def test_model_rewrite_is_byte_identical(self, tmp_path):
        model = toy_model()
        write_model(tmp_path / "a.json", model)
        write_model(tmp_path / "b.json", model)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "something-else"}')
        with pytest.raises(ConfigError):
            read_model(path)

    def test_history_csv(self, tmp_path):
        rows = [fnn.HistoryRow(1, 2.5, 2.0, 0.1, 0.05),
                fnn.HistoryRow(2, 1.5, 1.25, 0.4, 0.3)]
        path = tmp_path / "history.csv"
        write_history(path, rows)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,loss,data_term,train_r2,val_r2"
        assert lines[1] == "1,2.5,2,0.1,0.05"
        assert len(lines) == 3

    def test_cv_report_csv(self, tmp_path):
        report = CvReport((0.9, 0.8), (0.85, 0.75))
        path = tmp_path / "cv.csv"
        fnn.write_cv_report(path, report)
        lines = path.read_text().splitlines()
        assert lines[0] == "fold,train_r2,val_r2"
        assert lines[-1] == "average,,0.8"

    def test_weight_percentiles_rows(self):
        model = toy_model()
        rows = fnn.weight_percentiles(model)
        assert len(rows) == 3 * 7
        layers = {layer for layer, _, _ in rows}
        assert layers == {0, 1, 2}
