"""Tests for the ridge model, its row-action solver and the Newton baseline."""

import math

import numpy as np
import numpy.testing as nptest
import pytest

from rowfit import kolmogorov_arnold
from rowfit.basis import GaussBasis, PwlBasis
from rowfit.data import Dataset, gen_ridge_data, rmse_normalized
from rowfit.ridge import (
    GnState,
    RidgeModel,
    benchmark_model,
    evaluate,
    gn_fit,
    gn_state,
    nk_fit,
    nk_step,
    perturbed_init,
    predict,
)


def random_model(rng, m=3, s=3):
    return RidgeModel(
        rng.normal(size=m),
        rng.normal(size=s),
        GaussBasis(np.sort(rng.uniform(0.0, 3.0, size=s))),
    )


def stacked(model):
    return np.concatenate([model.g, model.c])


def with_params(model, z):
    s = model.basis.count
    return RidgeModel(z[s:].copy(), z[:s].copy(), model.basis)


def objective(model, data):
    r = predict(model, data.x) - data.y
    return 0.5 * float(r @ r)


class TestEvaluate:
    def test_zero_outer_coefficients(self):
        model = benchmark_model()
        model.g[:] = 0.0
        assert evaluate(model, np.zeros(5)) == 0.0

    def test_benchmark_model_at_origin(self):
        # theta = 0, so yhat = 2.1 e^-0.5 - 0.9 e^-4.5 + 0.7 e^-12.5
        expected = 2.1 * math.exp(-0.5) - 0.9 * math.exp(-4.5) + 0.7 * math.exp(-12.5)
        assert evaluate(benchmark_model(), np.zeros(5)) == pytest.approx(expected, rel=1e-14)

    def test_predict_matches_evaluate(self):
        rng = np.random.default_rng(0)
        model = random_model(rng)
        xs = rng.uniform(-1, 1, size=(20, 3))
        nptest.assert_allclose(
            predict(model, xs), [evaluate(model, x) for x in xs], rtol=1e-14
        )

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        step = 1e-6
        for _ in range(50):
            model = random_model(rng)
            x = rng.uniform(-1, 1, size=3)
            se = model.basis.eval(float(model.c @ x))
            grad = np.concatenate([se.values, float(model.g @ se.derivs) * x])
            z = stacked(model)
            for idx in rng.choice(z.size, size=3, replace=False):
                zp = z.copy()
                zp[idx] += step
                up = evaluate(with_params(model, zp), x)
                zp[idx] -= 2 * step
                down = evaluate(with_params(model, zp), x)
                fd = (up - down) / (2 * step)
                assert fd == pytest.approx(grad[idx], rel=1e-6, abs=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="5"):
            evaluate(benchmark_model(), np.zeros(3))


class TestNkStep:
    def test_zero_residual_is_noop(self):
        rng = np.random.default_rng(2)
        model = random_model(rng)
        x = rng.uniform(-1, 1, size=3)
        y = evaluate(model, x)
        c0, g0 = model.c.copy(), model.g.copy()
        assert nk_step(model, x, y, mu=1.0)
        nptest.assert_array_equal(model.c, c0)
        nptest.assert_array_equal(model.g, g0)

    def test_linearized_projection_exact_for_unit_mu(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            model = random_model(rng)
            x = rng.uniform(-1, 1, size=3)
            y = rng.normal()
            se = model.basis.eval(float(model.c @ x))
            grad = np.concatenate([se.values, float(model.g @ se.derivs) * x])
            resid = y - evaluate(model, x)
            z0 = stacked(model)
            nk_step(model, x, y, mu=1.0)
            dz = stacked(model) - z0
            assert abs(resid - grad @ dz) <= 1e-10

    def test_degenerate_gradient_skipped(self):
        model = RidgeModel(
            np.array([1000.0, 0.0]), np.array([1.0, -1.0]), GaussBasis(np.array([0.5, 1.5]))
        )
        x = np.array([1.0, 0.0])  # theta = 1000, all Gaussians underflow
        c0, g0 = model.c.copy(), model.g.copy()
        assert not nk_step(model, x, 1.0, mu=0.5)
        nptest.assert_array_equal(model.c, c0)
        nptest.assert_array_equal(model.g, g0)

    @pytest.mark.parametrize("mu", [0.0, 2.0, -1.0])
    def test_mu_validated(self, mu):
        with pytest.raises(ValueError, match="mu"):
            nk_step(benchmark_model(), np.zeros(5), 1.0, mu)

    def test_kernel_loop_matches_single_steps(self):
        rng = np.random.default_rng(4)
        data = gen_ridge_data(40, rng)
        init = perturbed_init(0.5, rng)
        via_kernel, skipped = nk_fit(data, init, mu=0.3, iterations=95)
        manual = init.copy()
        for q in range(95):
            nk_step(manual, data.x[q % 40], data.y[q % 40], mu=0.3)
        assert skipped == 0
        nptest.assert_allclose(via_kernel.c, manual.c, rtol=0, atol=1e-12)
        nptest.assert_allclose(via_kernel.g, manual.g, rtol=0, atol=1e-12)

    def test_benchmark_regime_mostly_recovers_at_small_alpha(self):
        hits = 0
        for run in range(30):
            rng = np.random.default_rng(1000 + run)
            data = gen_ridge_data(400, rng)
            init = perturbed_init(0.4, rng)
            model, _ = nk_fit(data, init, mu=0.1, iterations=10000)
            rmse = rmse_normalized(
                data.y, predict(model, data.x), data.y_min, data.y_max
            )
            hits += rmse < 0.05
        assert hits >= 27


class TestGnSystem:
    def test_hessian_symmetric(self):
        rng = np.random.default_rng(5)
        data = Dataset(rng.uniform(0, 1, size=(30, 3)), rng.normal(size=30))
        state = gn_state(random_model(rng), data)
        nptest.assert_allclose(state.hessian, state.hessian.T, atol=1e-10)
        assert isinstance(state, GnState)

    def test_gradient_matches_finite_differences_of_objective(self):
        rng = np.random.default_rng(6)
        step = 1e-6
        for _ in range(10):
            model = random_model(rng, m=3, s=2)
            data = Dataset(rng.uniform(0, 1, size=(20, 3)), rng.normal(size=20))
            state = gn_state(model, data)
            z = stacked(model)
            for idx in range(z.size):
                zp = z.copy()
                zp[idx] += step
                up = objective(with_params(model, zp), data)
                zp[idx] -= 2 * step
                down = objective(with_params(model, zp), data)
                fd = (up - down) / (2 * step)
                scale = max(abs(state.gradient[idx]), 1e-4)
                assert abs(fd - state.gradient[idx]) <= 1e-6 * scale + 1e-8

    def test_hessian_matches_finite_differences_of_gradient(self):
        rng = np.random.default_rng(7)
        step = 1e-5
        for _ in range(10):
            model = random_model(rng, m=3, s=2)
            data = Dataset(rng.uniform(0, 1, size=(20, 3)), rng.normal(size=20))
            state = gn_state(model, data)
            z = stacked(model)
            for idx in range(z.size):
                zp = z.copy()
                zp[idx] += step
                up = gn_state(with_params(model, zp), data).gradient
                zp[idx] -= 2 * step
                down = gn_state(with_params(model, zp), data).gradient
                fd = (up - down) / (2 * step)
                scale = np.maximum(np.abs(state.hessian[:, idx]), 1e-3)
                assert np.all(np.abs(fd - state.hessian[:, idx]) <= 1e-4 * scale + 1e-6)


class TestGnFit:
    def test_exact_start_converges_immediately(self):
        rng = np.random.default_rng(8)
        data = gen_ridge_data(400, rng)
        result = gn_fit(data, benchmark_model())
        assert result.converged
        assert result.iterations <= 5
        rmse = rmse_normalized(
            data.y, predict(result.model, data.x), data.y_min, data.y_max
        )
        assert rmse <= 1e-8

    def test_small_perturbation_converges_to_solution(self):
        rng = np.random.default_rng(9)
        data = gen_ridge_data(400, rng)
        init = perturbed_init(0.1, rng)
        result = gn_fit(data, init)
        assert result.converged and not result.failed
        rmse = rmse_normalized(
            data.y, predict(result.model, data.x), data.y_min, data.y_max
        )
        assert rmse < 0.01

    def test_objective_decreases_under_damped_steps(self):
        # far from convergence with the 0.1 step scale the objective should
        # not increase; run the iteration one step at a time
        for seed in (10, 11, 12):
            rng = np.random.default_rng(seed)
            data = gen_ridge_data(400, rng)
            model = perturbed_init(0.2, rng)
            values = [objective(model, data)]
            for _ in range(5):
                result = gn_fit(data, model, max_iters=1)
                model = result.model
                values.append(objective(model, data))
            for a, b in zip(values, values[1:]):
                assert b <= a + 1e-9

    def test_singular_hessian_marks_failure(self):
        # duplicate centers make the outer-coefficient block exactly singular
        rng = np.random.default_rng(13)
        data = gen_ridge_data(50, rng)
        bad = RidgeModel(
            benchmark_model().c,
            np.array([1.0, 1.0, 0.7]),
            GaussBasis(np.array([1.5, 1.5, 2.5])),
        )
        result = gn_fit(data, bad)
        assert result.failed and not result.converged

    def test_delta_validated(self):
        with pytest.raises(ValueError, match="delta"):
            gn_fit(gen_ridge_data(10, np.random.default_rng(0)), benchmark_model(), delta=0.0)

    def test_strict_gradient_criterion_flag(self):
        rng = np.random.default_rng(14)
        data = gen_ridge_data(400, rng)
        result = gn_fit(data, perturbed_init(0.05, rng), require_small_gradient=True)
        # at a true minimum of a consistent system both step and gradient
        # collapse, so the stricter criterion still converges
        assert result.converged


class TestSolverAgreement:
    def test_nk_and_gn_share_the_basin_at_small_alpha(self):
        rng = np.random.default_rng(15)
        data = gen_ridge_data(400, rng)
        init = perturbed_init(0.1, rng)
        nk_model, _ = nk_fit(data, init, mu=0.1, iterations=10000)
        gn_result = gn_fit(data, init)
        for model in (nk_model, gn_result.model):
            rmse = rmse_normalized(data.y, predict(model, data.x), data.y_min, data.y_max)
            assert rmse < 0.01


class TestRidgeAsDegenerateTree:
    def test_single_addend_tree_with_linear_inner_matches(self):
        # a one-addend tree whose inner nodal values sample c_j x reproduces
        # the ridge model: hat interpolation of a linear function is exact
        model = benchmark_model()
        inner = PwlBasis(0.0, 1.0, 6)
        h = np.array([[cj * inner.nodes for cj in model.c]])
        tree = kolmogorov_arnold.KaModel(
            h, model.g.reshape(1, -1).copy(), inner, model.basis
        )
        rng = np.random.default_rng(16)
        for x in rng.uniform(0.0, 1.0, size=(100, 5)):
            direct = evaluate(model, x)
            via_tree, _ = kolmogorov_arnold.evaluate(tree, x)
            assert abs(direct - via_tree) <= 1e-10


class TestPerturbedInit:
    def test_zero_alpha_is_exact(self):
        init = perturbed_init(0.0, np.random.default_rng(17))
        nptest.assert_array_equal(init.c, benchmark_model().c)
        nptest.assert_array_equal(init.g, benchmark_model().g)

    def test_perturbation_bounded_by_half_alpha(self):
        alpha = 1.6
        init = perturbed_init(alpha, np.random.default_rng(18))
        assert np.all(np.abs(init.c - benchmark_model().c) <= 0.5 * alpha)
        assert np.all(np.abs(init.g - benchmark_model().g) <= 0.5 * alpha)

    def test_deterministic(self):
        a = perturbed_init(0.8, np.random.default_rng(19))
        b = perturbed_init(0.8, np.random.default_rng(19))
        nptest.assert_array_equal(a.c, b.c)
        nptest.assert_array_equal(a.g, b.g)


class TestSerialization:
    def test_round_trip(self, tmp_path):
        model = random_model(np.random.default_rng(20), m=4, s=5)
        path = tmp_path / "ridge.json"
        model.save(path)
        back = RidgeModel.load(path)
        nptest.assert_array_equal(back.c, model.c)
        nptest.assert_array_equal(back.g, model.g)
        nptest.assert_array_equal(back.basis.centers, model.basis.centers)

    def test_schema_mismatch_rejected(self, tmp_path):
        path = tmp_path / "ridge.json"
        path.write_text('{"schema": "nope"}')
        with pytest.raises(ValueError, match="schema"):
            RidgeModel.load(path)
