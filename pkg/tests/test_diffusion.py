import math

import numpy as np
import pytest

from resshift import diffusion as D
from resshift.diffusion import DiffusionProcess, GaussianParams
from resshift.errors import (
    DegenerateDistributionError,
    ShapeError,
    StepError,
    UndefinedWeightError,
)
from resshift.rng import RandomStream
from resshift.schedule import ScheduleParams, build_schedule

from oracles import ZeroNoise, posterior_quadrature

SCHEDULE = build_schedule(ScheduleParams(15, 0.3, 2.0))


def images(seed, shape=(1, 8, 8)):
    rng = RandomStream(seed)
    return rng.child("x0").uniform(shape), rng.child("y0").uniform(shape)


class TestResidual:
    def test_identity_pair_gives_zero(self):
        x0, _ = images(0)
        np.testing.assert_array_equal(D.residual(x0, x0), np.zeros_like(x0))

    def test_constant_images(self):
        x0 = np.full((1, 4, 4), 0.2)
        y0 = np.full((1, 4, 4), 0.7)
        np.testing.assert_allclose(D.residual(x0, y0), 0.5)

    def test_algebraic_inverse(self):
        x0, y0 = images(1)
        np.testing.assert_array_equal(D.residual(x0, y0) + x0, y0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            D.residual(np.zeros((1, 4, 4)), np.zeros((1, 4, 5)))

    def test_non_finite_rejected(self):
        bad = np.full((1, 2, 2), np.nan)
        with pytest.raises(ShapeError):
            D.residual(bad, bad)


class TestForwardStep:
    def test_zero_noise_is_pure_shift(self):
        x0, y0 = images(2)
        e0 = y0 - x0
        out = D.forward_step(x0, e0, 3, SCHEDULE, ZeroNoise())
        np.testing.assert_array_equal(out, x0 + SCHEDULE.alpha(3) * e0)

    def test_zero_residual_zero_noise_identity(self):
        x0, _ = images(3)
        out = D.forward_step(x0, np.zeros_like(x0), 5, SCHEDULE, ZeroNoise())
        np.testing.assert_array_equal(out, x0)

    def test_step_bounds(self):
        x0, y0 = images(4)
        for t in (0, 16):
            with pytest.raises(StepError):
                D.forward_step(x0, y0 - x0, t, SCHEDULE, RandomStream(0))

    def test_monte_carlo_moments(self):
        # one scalar state, many trials: mean and std of the kernel
        t = 7
        n = 100000
        x_prev = np.full((n, 1, 1, 1), 0.3)
        e0 = np.full((n, 1, 1, 1), 0.4)
        out = D.forward_step(x_prev, e0, t, SCHEDULE, RandomStream(77, "fs"))
        mean_expect = 0.3 + SCHEDULE.alpha(t) * 0.4
        std_expect = 2.0 * math.sqrt(SCHEDULE.alpha(t))
        se = std_expect / math.sqrt(n)
        assert abs(out.mean() - mean_expect) < 4 * se
        assert abs(out.std() - std_expect) / std_expect < 0.02


class TestMarginal:
    def test_final_step_is_nearly_degraded_image(self):
        x0, y0 = images(5)
        params = D.marginal_params(x0, y0, 15, SCHEDULE)
        np.testing.assert_allclose(params.mean, x0 + 0.999 * (y0 - x0), rtol=0, atol=0)
        assert params.std == pytest.approx(2.0 * math.sqrt(0.999), rel=1e-12)

    def test_first_step_noise_floor(self):
        x0, y0 = images(6)
        assert D.marginal_params(x0, y0, 1, SCHEDULE).std == pytest.approx(0.04, rel=1e-12)

    def test_clean_pair_keeps_mean(self):
        x0, _ = images(7)
        for t in (1, 8, 15):
            np.testing.assert_array_equal(D.marginal_params(x0, x0, t, SCHEDULE).mean, x0)

    def test_sample_at_zero_noise_is_mean(self):
        x0, y0 = images(8)
        out = D.sample_marginal(x0, y0, 9, SCHEDULE, ZeroNoise())
        np.testing.assert_array_equal(out, D.marginal_params(x0, y0, 9, SCHEDULE).mean)

    def test_sample_deterministic_given_seed(self):
        x0, y0 = images(9)
        a = D.sample_marginal(x0, y0, 4, SCHEDULE, RandomStream(5, "m"))
        b = D.sample_marginal(x0, y0, 4, SCHEDULE, RandomStream(5, "m"))
        np.testing.assert_array_equal(a, b)

    def test_chain_marginal_equivalence(self):
        # iterating the one-step kernel t times must agree with the
        # closed-form single-shot draw in distribution
        n = 10000
        x0, y0 = images(10)
        x0b = np.broadcast_to(x0, (n, 1, 8, 8))
        y0b = np.broadcast_to(y0, (n, 1, 8, 8))
        e0 = y0b - x0b
        t_probe = 5
        x = np.array(x0b)
        chain_rng = RandomStream(42, "chain")
        for t in range(1, t_probe + 1):
            x = D.forward_step(x, e0, t, SCHEDULE, chain_rng)
        direct = D.sample_marginal(x0b, y0b, t_probe, SCHEDULE, RandomStream(42, "direct"))
        std = SCHEDULE.kappa * math.sqrt(SCHEDULE.eta(t_probe))
        se = std / math.sqrt(n)
        mean_gap = np.abs(x.mean(axis=0) - direct.mean(axis=0))
        assert np.all(mean_gap < 4 * math.sqrt(2.0) * se)
        var_rel = np.abs(x.var(axis=0) - direct.var(axis=0)) / std ** 2
        assert np.all(var_rel < 0.10)


class TestPosterior:
    def test_first_step_degenerates_to_prediction(self):
        x_t, x0 = images(11)
        params = D.posterior_params(x_t, x0, 1, SCHEDULE)
        np.testing.assert_array_equal(params.mean, x0)
        assert params.std == 0.0

    def test_coefficients_sum_to_one(self):
        for t in range(1, 16):
            a = SCHEDULE.eta(t - 1) / SCHEDULE.eta(t)
            b = SCHEDULE.alpha(t) / SCHEDULE.eta(t)
            assert a + b == pytest.approx(1.0, abs=1e-14)

    def test_matches_quadrature_oracle(self):
        rng = np.random.default_rng(123)
        for trial in range(20):
            x_t = float(rng.uniform(-1, 2))
            x0 = float(rng.uniform(0, 1))
            e0 = float(rng.uniform(-1, 1))
            t = int(rng.integers(2, 16))
            mean_o, var_o = posterior_quadrature(x_t, x0, e0, t, SCHEDULE.etas, 2.0)
            params = D.posterior_params(np.array([[[x_t]]]), np.array([[[x0]]]), t, SCHEDULE)
            assert params.mean[0, 0, 0] == pytest.approx(mean_o, abs=1e-10)
            assert params.std ** 2 == pytest.approx(var_o, abs=1e-10)

    def test_predicted_mean_substitution_identity(self):
        x_t, x0 = images(12)
        for t in (1, 2, 9, 15):
            np.testing.assert_array_equal(
                D.predicted_mean(x_t, x0, t, SCHEDULE),
                D.posterior_params(x_t, x0, t, SCHEDULE).mean,
            )

    def test_predicted_mean_first_step_returns_prediction(self):
        x_t, x0_hat = images(13)
        np.testing.assert_array_equal(D.predicted_mean(x_t, x0_hat, 1, SCHEDULE), x0_hat)

    def test_prediction_fixed_point(self):
        x, _ = images(14)
        for t in (1, 5, 15):
            np.testing.assert_allclose(D.predicted_mean(x, x, t, SCHEDULE), x, rtol=0, atol=1e-15)


class TestReverse:
    def test_init_zero_noise_returns_conditioner(self):
        _, y0 = images(15)
        np.testing.assert_array_equal(D.init_reverse(y0, SCHEDULE, ZeroNoise()), y0)

    def test_init_noise_scale(self):
        n = 100000
        y0 = np.zeros((n, 1, 1, 1))
        out = D.init_reverse(y0, SCHEDULE, RandomStream(3, "init"))
        expect = 2.0 * math.sqrt(0.999)
        assert abs(out.std() - expect) / expect < 0.02

    def test_reverse_step_final_is_deterministic(self):
        x_t, x0_hat = images(16)
        a = D.reverse_step(x_t, x0_hat, 1, SCHEDULE, RandomStream(0, "a"))
        b = D.reverse_step(x_t, x0_hat, 1, SCHEDULE, RandomStream(99, "b"))
        np.testing.assert_array_equal(a, x0_hat)
        np.testing.assert_array_equal(b, x0_hat)

    def test_reverse_step_zero_noise_is_predicted_mean(self):
        x_t, x0_hat = images(17)
        out = D.reverse_step(x_t, x0_hat, 8, SCHEDULE, ZeroNoise())
        np.testing.assert_array_equal(out, D.predicted_mean(x_t, x0_hat, 8, SCHEDULE))

    def test_reverse_step_noise_scale(self):
        n = 100000
        t = 9
        x_t = np.full((n, 1, 1, 1), 0.6)
        x0_hat = np.full((n, 1, 1, 1), 0.4)
        out = D.reverse_step(x_t, x0_hat, t, SCHEDULE, RandomStream(8, "rs"))
        expect = 2.0 * math.sqrt(SCHEDULE.eta(t - 1) / SCHEDULE.eta(t) * SCHEDULE.alpha(t))
        assert abs(out.std() - expect) / expect < 0.02


class TestSample:
    def test_perfect_denoiser_recovers_target_bitwise(self):
        for seed in range(4):
            x0, y0 = images(100 + seed)
            for T in (2, 15):
                schedule = build_schedule(ScheduleParams(T, 0.3, 2.0))
                out = D.sample(y0, lambda xt, y, t: x0, schedule, RandomStream(seed, "s"),
                               clamp=False)
                np.testing.assert_array_equal(out, x0)

    def test_denoiser_called_once_per_step(self):
        x0, y0 = images(18)
        calls = []
        D.sample(y0, lambda xt, y, t: calls.append(t) or x0, SCHEDULE, RandomStream(1))
        assert calls == list(range(15, 0, -1))

    def test_seeded_determinism(self):
        x0, y0 = images(19)
        f = lambda xt, y, t: np.clip(xt, 0, 1)
        a = D.sample(y0, f, SCHEDULE, RandomStream(12, "det"))
        b = D.sample(y0, f, SCHEDULE, RandomStream(12, "det"))
        np.testing.assert_array_equal(a, b)

    def test_output_clamped(self):
        x0, y0 = images(20)
        out = D.sample(y0, lambda xt, y, t: xt, SCHEDULE, RandomStream(2))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_on_step_sees_full_trajectory(self):
        x0, y0 = images(21)
        seen = []
        D.sample(y0, lambda xt, y, t: x0, SCHEDULE, RandomStream(3),
                 on_step=lambda t, x: seen.append(t))
        assert seen == list(range(15, -1, -1))


class TestTrainingLossContract:
    def test_weighted_rejects_first_step(self):
        x0, y0 = images(22)

        class Dummy:
            def loss_and_grad(self, *a, **k):
                return 0.0

        with pytest.raises(UndefinedWeightError):
            D.training_loss(x0, y0, 1, Dummy(), SCHEDULE, RandomStream(0), weighted=True)

    def test_loss_equals_independent_mse(self):
        from oracles import reference_mse
        from resshift.nn.denoiser import Denoiser, DenoiserConfig

        model = Denoiser(
            DenoiserConfig(in_channels=2, base_width=8, depth=1, time_embed_dim=16, T=15),
            RandomStream(50, "init"),
        )
        for p in model.params.values():
            p.data = p.data + 0.05 * RandomStream(51, "j").normal(p.data.shape)
        x0, y0 = images(52, shape=(2, 1, 8, 8))
        t = 6
        # zero marginal noise makes x_t deterministic, so the loss can be
        # recomputed from an independent prediction pass
        x_t = D.marginal_params(x0, y0, t, SCHEDULE).mean
        model.zero_grad()
        loss = D.training_loss(x0, y0, t, model, SCHEDULE, ZeroNoise())
        assert loss == pytest.approx(reference_mse(model.predict(x_t, y0, t), x0), abs=1e-12)

    def test_weighted_scales_per_example(self):
        from resshift.nn.denoiser import Denoiser, DenoiserConfig
        from resshift.schedule import loss_weight

        model = Denoiser(
            DenoiserConfig(in_channels=2, base_width=8, depth=1, time_embed_dim=16, T=15),
            RandomStream(53, "init"),
        )
        x0, y0 = images(54, shape=(2, 1, 8, 8))
        t = np.array([3, 11])
        model.zero_grad()
        plain = D.training_loss(x0, y0, t, model, SCHEDULE, ZeroNoise())
        model.zero_grad()
        weighted = D.training_loss(x0, y0, t, model, SCHEDULE, ZeroNoise(), weighted=True)
        x_t = D.marginal_params(x0, y0, t, SCHEDULE).mean
        pred = model.predict(x_t, y0, t)
        per_example = ((pred - x0) ** 2).reshape(2, -1).mean(axis=1)
        w = np.array([loss_weight(SCHEDULE, 3), loss_weight(SCHEDULE, 11)])
        assert plain == pytest.approx(float(per_example.mean()), abs=1e-12)
        assert weighted == pytest.approx(float((w * per_example).mean()), abs=1e-12)

    def test_smooth_transition_bound(self):
        # per-step mean shift of in-range images stays under sqrt(alpha_t)
        rng = RandomStream(23)
        x0 = rng.child("a").uniform((3, 8, 8))
        y0 = rng.child("b").uniform((3, 8, 8))
        e0 = y0 - x0
        for t in range(1, 16):
            a = SCHEDULE.alpha(t)
            shift = np.max(np.abs(a * e0))
            assert shift <= a < math.sqrt(a)


class TestKL:
    def test_identical_distributions(self):
        p = GaussianParams(np.zeros((1, 2, 2)), 1.0)
        assert D.kl_gaussians(p, p) == 0.0

    def test_unit_shift_half_nat(self):
        p = GaussianParams(np.zeros(1), 1.0)
        q = GaussianParams(np.ones(1), 1.0)
        assert D.kl_gaussians(p, q) == pytest.approx(0.5, rel=1e-12)

    def test_nonnegative_randomized(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            p = GaussianParams(rng.normal(size=4), float(rng.uniform(0.1, 3)))
            q = GaussianParams(rng.normal(size=4), float(rng.uniform(0.1, 3)))
            assert D.kl_gaussians(p, q) >= 0.0

    def test_degenerate_reference_rejected(self):
        p = GaussianParams(np.zeros(1), 1.0)
        with pytest.raises(DegenerateDistributionError):
            D.kl_gaussians(p, GaussianParams(np.zeros(1), 0.0))

    def test_point_mass_diverges(self):
        q = GaussianParams(np.zeros(1), 1.0)
        assert D.kl_gaussians(GaussianParams(np.zeros(1), 0.0), q) == math.inf


class TestProcessFacade:
    def test_shape_guard(self):
        proc = DiffusionProcess(schedule=SCHEDULE, shape=(1, 8, 8))
        with pytest.raises(ShapeError):
            proc.sample_marginal(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)), 3, RandomStream(0))

    def test_delegates_match_module_functions(self):
        proc = DiffusionProcess(schedule=SCHEDULE, shape=(1, 8, 8))
        x0, y0 = images(24)
        np.testing.assert_array_equal(proc.residual(x0, y0), D.residual(x0, y0))
        a = proc.sample_marginal(x0, y0, 5, RandomStream(9, "pf"))
        b = D.sample_marginal(x0, y0, 5, SCHEDULE, RandomStream(9, "pf"))
        np.testing.assert_array_equal(a, b)
