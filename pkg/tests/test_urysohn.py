"""Tests for the additive model and its Kaczmarz identification."""

import numpy as np
import numpy.testing as nptest
import pytest

from rowfit.basis import PwlBasis
from rowfit.data import Dataset, FitConfig, rmse_normalized
from rowfit.urysohn import (
    UrysohnModel,
    evaluate,
    fit,
    kaczmarz_step,
    predict,
    series_to_records,
)


def random_model(rng, m=3, n=5, lo=0.0, hi=1.0):
    return UrysohnModel(rng.uniform(-1.0, 1.0, size=(m, n)), PwlBasis(lo, hi, n))


def dense_row(model, x_row):
    """The record's coefficient row against the flattened parameters."""
    m, n = model.u.shape
    row = np.zeros(m * n)
    for j in range(m):
        se = model.basis.eval(x_row[j])
        row[j * n + se.indices] = se.values
    return row


class TestEvaluate:
    def test_zero_parameters(self):
        model = UrysohnModel(np.zeros((3, 4)), PwlBasis(0.0, 1.0, 4))
        assert evaluate(model, np.array([0.1, 0.5, 0.9])) == 0.0

    def test_midpoint_interpolation(self):
        model = UrysohnModel(np.array([[3.0, 7.0]]), PwlBasis(0.0, 1.0, 2))
        assert evaluate(model, np.array([0.5])) == pytest.approx(5.0, rel=1e-15)

    def test_inputs_at_nodes_pick_matching_columns(self):
        rng = np.random.default_rng(0)
        model = random_model(rng, m=4, n=6)
        cols = [1, 3, 0, 5]
        x = model.basis.nodes[cols]
        expected = sum(model.u[j, p] for j, p in enumerate(cols))
        assert evaluate(model, x) == pytest.approx(expected, rel=1e-14)

    def test_linear_in_parameters(self):
        rng = np.random.default_rng(1)
        basis = PwlBasis(0.0, 1.0, 5)
        u1 = rng.normal(size=(3, 5))
        u2 = rng.normal(size=(3, 5))
        x = rng.uniform(0, 1, size=3)
        lhs = evaluate(UrysohnModel(u1 + u2, basis), x)
        rhs = evaluate(UrysohnModel(u1, basis), x) + evaluate(UrysohnModel(u2, basis), x)
        assert abs(lhs - rhs) <= 1e-12

    def test_dimension_mismatch(self):
        model = UrysohnModel(np.zeros((3, 4)), PwlBasis(0.0, 1.0, 4))
        with pytest.raises(ValueError, match="3"):
            evaluate(model, np.zeros(2))


class TestKaczmarzStep:
    def test_projection_exact_for_unit_mu(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            model = random_model(rng)
            x = rng.uniform(-0.2, 1.2, size=3)
            y = rng.normal()
            kaczmarz_step(model, x, y, mu=1.0)
            assert abs(evaluate(model, x) - y) <= 1e-12

    @pytest.mark.parametrize("mu", [0.0, 2.0, -0.5, 2.5])
    def test_mu_outside_open_interval_rejected(self, mu):
        model = random_model(np.random.default_rng(3))
        with pytest.raises(ValueError, match="mu"):
            kaczmarz_step(model, np.array([0.1, 0.5, 0.9]), 1.0, mu)

    def test_matches_explicit_row_projection(self):
        # oracle: the classical update Z + mu (y - M z)/||M||^2 M' computed
        # densely on the flattened parameters
        rng = np.random.default_rng(4)
        model = random_model(rng)
        x = rng.uniform(0, 1, size=3)
        y = rng.normal()
        row = dense_row(model, x)
        z = model.u.ravel().copy()
        mu = 0.7
        expected = z + mu * (y - row @ z) / (row @ row) * row
        kaczmarz_step(model, x, y, mu)
        nptest.assert_allclose(model.u.ravel(), expected, rtol=0, atol=1e-14)

    def test_touches_at_most_two_entries_per_input(self):
        rng = np.random.default_rng(5)
        model = random_model(rng, m=4, n=7)
        before = model.u.copy()
        kaczmarz_step(model, rng.uniform(0, 1, size=4), 5.0, 1.0)
        changed = np.sum(model.u != before)
        assert changed <= 2 * 4

    def test_fejer_monotone_toward_generator(self):
        rng = np.random.default_rng(6)
        m, n = 2, 4
        truth = random_model(rng, m=m, n=n)
        xs = rng.uniform(0, 1, size=(50, m))
        ys = predict(truth, xs)
        for mu in (0.5, 1.0, 1.5):
            model = UrysohnModel(np.zeros((m, n)), truth.basis)
            dist = np.linalg.norm(model.u - truth.u)
            for i in range(50):
                kaczmarz_step(model, xs[i], ys[i], mu)
                new_dist = np.linalg.norm(model.u - truth.u)
                assert new_dist <= dist + 1e-12
                dist = new_dist

    def test_single_record_single_pass_exact(self):
        model = UrysohnModel(np.zeros((2, 3)), PwlBasis(0.0, 1.0, 3))
        data = Dataset(np.array([[0.2, 0.8]]), np.array([4.0]))
        fitted, report = fit(data, FitConfig(mu=1.0, passes=1), nodes=3, x_range=(0.0, 1.0))
        assert abs(evaluate(fitted, data.x[0]) - 4.0) <= 1e-12
        assert report.passes_run == 1


class TestConsistentSystemConvergence:
    def test_two_record_system_matches_least_norm_oracle(self):
        # oracle: the minimum-norm solution of the underdetermined linear
        # system, via dense least squares on the stacked rows
        rng = np.random.default_rng(7)
        basis = PwlBasis(0.0, 1.0, 3)
        model = UrysohnModel(np.zeros((2, 3)), basis)
        xs = rng.uniform(0, 1, size=(2, 2))
        ys = np.array([1.0, -2.0])
        rows = np.array([dense_row(model, x) for x in xs])
        z_oracle, *_ = np.linalg.lstsq(rows, ys, rcond=None)
        for sweep in range(10_000):
            for i in range(2):
                kaczmarz_step(model, xs[i], ys[i], mu=1.0)
            resid = ys - predict(model, xs)
            if np.max(np.abs(resid)) <= 1e-10:
                break
        assert np.max(np.abs(ys - predict(model, xs))) <= 1e-10
        nptest.assert_allclose(model.u.ravel(), z_oracle, atol=1e-8)


class TestFit:
    def test_recovers_generator_predictions(self):
        rng = np.random.default_rng(8)
        truth = random_model(rng, m=3, n=5)
        xs = rng.uniform(0, 1, size=(400, 3))
        train = Dataset(xs, predict(truth, xs))
        x_val = rng.uniform(0, 1, size=(200, 3))
        val = Dataset(x_val, predict(truth, x_val))
        model, report = fit(
            train,
            FitConfig(mu=1.0, passes=200, epsilon=0.0, patience=1),
            nodes=5,
            x_range=(0.0, 1.0),
        )
        val_rmse = rmse_normalized(val.y, predict(model, val.x), val.y_min, val.y_max)
        assert val_rmse <= 1e-6
        assert not report.failed

    def test_small_mu_narrows_noise_oscillation(self):
        # on an inconsistent (noisy) system the iterates settle into a band
        # around the least-squares optimum whose size shrinks with mu;
        # oracle: the dense least-squares solution of the stacked rows
        rng = np.random.default_rng(9)
        truth = random_model(rng, m=2, n=4)
        xs = rng.uniform(0, 1, size=(150, 2))
        ys = predict(truth, xs) + rng.normal(0.0, 0.1, size=150)
        data = Dataset(xs, ys)
        rows = np.array([dense_row(truth, x) for x in xs])
        z_ls, *_ = np.linalg.lstsq(rows, ys, rcond=None)
        rmse_ls = rmse_normalized(ys, rows @ z_ls, data.y_min, data.y_max)
        excess = {}
        spread = {}
        for mu in (1.0, 0.05):
            _, report = fit(
                data,
                FitConfig(mu=mu, passes=200, epsilon=0.0, patience=1, shuffle=True, seed=3),
                nodes=4,
                x_range=(0.0, 1.0),
            )
            tail = np.array(report.rmse_per_pass[-50:])
            excess[mu] = np.mean(tail) - rmse_ls
            spread[mu] = np.std(tail)
        assert excess[0.05] >= -1e-12
        assert excess[0.05] < excess[1.0]
        assert spread[0.05] < spread[1.0]

    def test_plateau_stops_early(self):
        rng = np.random.default_rng(10)
        truth = random_model(rng, m=2, n=3)
        xs = rng.uniform(0, 1, size=(60, 2))
        data = Dataset(xs, predict(truth, xs))
        _, report = fit(
            data,
            FitConfig(mu=1.0, passes=500, epsilon=1e-12, patience=5),
            nodes=3,
            x_range=(0.0, 1.0),
        )
        assert report.passes_run < 500

    def test_custom_initial_guess_honored(self):
        rng = np.random.default_rng(30)
        truth = random_model(rng, m=2, n=3)
        xs = rng.uniform(0, 1, size=(5, 2))
        data = Dataset(xs, predict(truth, xs))
        u0 = np.full((2, 3), 10.0)
        # a tiny step scale keeps the first pass close to the start
        model, _ = fit(
            data,
            FitConfig(mu=0.01, passes=1),
            nodes=3,
            x_range=(0.0, 1.0),
            u0=u0,
        )
        assert np.all(np.abs(model.u - u0) < 1.0)
        with pytest.raises(ValueError, match="shape"):
            fit(data, FitConfig(), nodes=3, u0=np.zeros((1, 3)))

    def test_shuffle_changes_visit_order_but_still_fits(self):
        rng = np.random.default_rng(11)
        truth = random_model(rng, m=2, n=4)
        xs = rng.uniform(0, 1, size=(100, 2))
        data = Dataset(xs, predict(truth, xs))
        cfg = FitConfig(mu=1.0, passes=100, epsilon=0.0, patience=1, shuffle=True, seed=7)
        model, report = fit(data, cfg, nodes=4, x_range=(0.0, 1.0))
        assert report.rmse_per_pass[-1] <= 1e-6


class TestSeriesToRecords:
    def test_memory_two_window(self):
        ds = series_to_records([1.0, 2.0, 3.0, 4.0], [10.0, 20.0, 30.0, 40.0], 2)
        nptest.assert_array_equal(ds.x, [[2.0, 1.0], [3.0, 2.0], [4.0, 3.0]])
        nptest.assert_array_equal(ds.y, [20.0, 30.0, 40.0])

    def test_memory_one_pairs(self):
        ds = series_to_records([1.0, 2.0], [5.0, 6.0], 1)
        nptest.assert_array_equal(ds.x, [[1.0], [2.0]])
        nptest.assert_array_equal(ds.y, [5.0, 6.0])

    def test_memory_equals_length_single_record(self):
        ds = series_to_records([1.0, 2.0, 3.0], [7.0, 8.0, 9.0], 3)
        nptest.assert_array_equal(ds.x, [[3.0, 2.0, 1.0]])
        nptest.assert_array_equal(ds.y, [9.0])

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="too short"):
            series_to_records([1.0, 2.0], [1.0, 2.0], 3)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            series_to_records([1.0, 2.0, 3.0], [1.0, 2.0], 1)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(12)
        model = random_model(rng, m=3, n=6, lo=-1.5, hi=2.5)
        path = tmp_path / "model.json"
        model.save(path)
        back = UrysohnModel.load(path)
        nptest.assert_array_equal(back.u, model.u)
        assert back.basis.lo == model.basis.lo
        assert back.basis.hi == model.basis.hi
        assert back.basis.count == model.basis.count

    def test_schema_mismatch_rejected(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text('{"schema": "rowfit/urysohn-v99", "m": 1, "n": 2}')
        with pytest.raises(ValueError, match="schema"):
            UrysohnModel.load(path)
