import numpy as np
import pytest

from cindes import diffusion as df
from cindes import network as nn
from cindes.errors import SamplerDivergedError
from cindes.estimator import AnalyticDensity, DensityModel, GaussianReference, UniformBox

from helpers import constant_net


def unit_gaussian_oracle(d=2):
    """Exact N(0, I_d) density via a zero logit over a Gaussian reference."""
    return DensityModel(
        params=nn.zero_params(nn.NetworkShape(d, 1, 1, 5.0)),
        reference=GaussianReference(np.zeros(d), np.eye(d)),
        covariate_dim=0,
        response_dim=d,
    )


def box_model(d=1, lo=0.0, hi=1.0, value=0.0):
    return DensityModel(
        params=constant_net(d, value),
        reference=UniformBox(np.full(d, lo), np.full(d, hi)),
        covariate_dim=0,
        response_dim=d,
    )


class TestConfig:
    def test_invariants(self):
        with pytest.raises(ValueError):
            df.DiffusionConfig(1.0, 0.01, 4, 8)  # horizon too short
        with pytest.raises(ValueError):
            df.DiffusionConfig(2.0, 0.0, 4, 8)
        with pytest.raises(ValueError):
            df.DiffusionConfig(2.0, 0.01, 5, 8)  # odd step count
        with pytest.raises(ValueError):
            df.DiffusionConfig(2.0, 0.01, 0, 8)
        with pytest.raises(ValueError):
            df.DiffusionConfig(2.0, 0.01, 4, 0)

    def test_recommended_scales_with_capacity(self):
        cfg = df.recommended_config(width=4, depth=2, n=100)
        assert cfg.steps == cfg.score_samples == 64
        assert cfg.terminal_time == 8.0
        assert cfg.early_stop == pytest.approx(1.0 / 64.0)
        big = df.recommended_config(width=4, depth=2, n=10**6)
        assert big.terminal_time == pytest.approx(np.log(10**6))


class TestSchedule:
    def test_spec_example_timesteps(self):
        cfg = df.DiffusionConfig(2.0, 0.01, 4, 1)
        sch = df.build_schedule(cfg)
        assert np.allclose(sch.timesteps, [0.0, 0.5, 1.0, 1.9, 1.99], atol=1e-12)
        assert sch.alphas[0] == pytest.approx(np.exp(-1.0), rel=1e-12)
        assert sch.alphabars[-1] == np.exp(-2.0 * 0.01)

    def test_exact_endpoints_and_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            cfg = df.DiffusionConfig(
                terminal_time=float(rng.uniform(1.5, 12.0)),
                early_stop=float(rng.uniform(1e-4, 0.5)),
                steps=2 * int(rng.integers(1, 200)),
                score_samples=1,
            )
            sch = df.build_schedule(cfg)
            half = cfg.steps // 2
            assert sch.timesteps[0] == 0.0
            assert sch.timesteps[half] == cfg.terminal_time - 1.0
            assert sch.timesteps[-1] == cfg.terminal_time - cfg.early_stop
            assert np.all(np.diff(sch.timesteps) > 0)
            gap = sch.alphabars[:-1] - sch.alphas * sch.alphabars[1:]
            assert np.max(np.abs(gap)) < 1e-12
            assert np.all((sch.alphas > 0) & (sch.alphas < 1))


class TestForwardMoments:
    def test_identity(self):
        for t in (1e-4, 0.01, 0.1, 1.0, 5.0):
            m, sigma = df.forward_moments(t)
            assert m == pytest.approx(np.exp(-t), rel=1e-15)
            assert abs(m * m + sigma * sigma - 1.0) < 1e-14

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            df.forward_moments(0.0)


class TestScoreEstimate:
    def test_constant_density_score_is_mean_noise(self):
        # all shifted points stay inside the box, so weights are equal
        model = box_model()
        t = 0.001
        m, sigma = df.forward_moments(t)
        k = 100000
        rng = np.random.default_rng(1)
        u = np.random.default_rng(1).spawn(0) if False else None
        probe = np.random.default_rng(1).standard_normal((k, 1))
        assert np.abs(probe).max() * sigma < 0.45  # precondition: in-box
        s = df.score_estimate(model, [0.5], t, None, k, np.random.default_rng(1))
        assert np.allclose(s, -probe.mean(axis=0) / sigma)
        assert np.linalg.norm(s) <= 5.0 * np.sqrt(1.0 / k) / sigma**2

    def test_exact_gaussian_score(self):
        oracle = unit_gaussian_oracle(2)
        s = df.score_estimate(oracle, [1.0, 0.0], 1.0, None, 100000, np.random.default_rng(2))
        assert np.allclose(s, [-1.0, 0.0], atol=0.05)

    def test_single_draw(self):
        # one positive weight: the ratio collapses to the single noise draw
        model = unit_gaussian_oracle(1)
        t = 0.5
        m, sigma = df.forward_moments(t)
        u1 = np.random.default_rng(3).standard_normal((1, 1))
        s = df.score_estimate(model, [0.5], t, None, 1, np.random.default_rng(3))
        assert s[0] == pytest.approx(-u1[0, 0] / sigma, rel=1e-12)

    def test_requires_positive_time(self):
        with pytest.raises(ValueError):
            df.score_estimate(box_model(), [0.5], 0.0, None, 8, np.random.default_rng(0))

    def test_degenerate_weights_flagged(self):
        model = box_model()
        diag = {}
        s = df.score_estimate(model, [40.0], 0.01, None, 16, np.random.default_rng(4), diag)
        assert np.all(s == 0.0)
        assert diag[df.DEGENERATE_SCORES] == 1

    def test_scale_invariance_bitwise(self):
        # dyadic log weights plus a dyadic constant: shifted sums are exact,
        # so the normalizer cancellation is bit-for-bit
        rng = np.random.default_rng(5)
        u = rng.standard_normal((1, 64, 2))
        logw = rng.integers(-8, 0, size=(1, 64)) / 2.0
        a = df._chain_scores(u, logw, 0.8)
        b = df._chain_scores(u, logw + 16.0, 0.8)
        assert np.array_equal(a, b)

    def test_scale_invariance_general_constant(self):
        oracle = AnalyticDensity(lambda Y, x: -0.5 * np.sum(Y**2, axis=1), response_dim=2)
        scaled = AnalyticDensity(
            lambda Y, x: -0.5 * np.sum(Y**2, axis=1) + np.log(3.7), response_dim=2
        )
        s1 = df.score_estimate(oracle, [0.3, -0.2], 0.7, None, 4096, np.random.default_rng(6))
        s2 = df.score_estimate(scaled, [0.3, -0.2], 0.7, None, 4096, np.random.default_rng(6))
        assert np.allclose(s1, s2, rtol=1e-9, atol=1e-12)

    def test_mc_error_shrinks_with_draws(self):
        oracle = unit_gaussian_oracle(1)
        y_test = np.random.default_rng(7).standard_normal((50, 1))
        ratios = []
        for seed in range(3):
            errs = {}
            for k in (100, 10000):
                rng = np.random.default_rng(100 + seed)
                se = np.array(
                    [df.score_estimate(oracle, y, 1.0, None, k, rng) for y in y_test]
                )
                errs[k] = np.mean((se[:, 0] + y_test[:, 0]) ** 2)
            ratios.append(errs[100] / errs[10000])
        assert np.median(ratios) > 5.0


class TestSampler:
    def test_fixed_seed_reproducible(self):
        oracle = unit_gaussian_oracle(2)
        cfg = df.DiffusionConfig(4.0, 0.01, 8, 32)
        a = df.sample(oracle, None, cfg, np.random.default_rng(8))
        b = df.sample(oracle, None, cfg, np.random.default_rng(8))
        assert np.array_equal(a, b)

    def test_batch_matches_serial(self):
        oracle = unit_gaussian_oracle(2)
        cfg = df.DiffusionConfig(4.0, 0.01, 8, 32)
        rows = df.sample_batch(oracle, None, cfg, 3, np.random.default_rng(9))
        children = np.random.default_rng(9).spawn(3)
        serial = np.stack([df.sample(oracle, None, cfg, c) for c in children])
        assert np.array_equal(rows, serial)

    def test_batch_edge_counts(self):
        oracle = unit_gaussian_oracle(1)
        cfg = df.DiffusionConfig(4.0, 0.01, 4, 8)
        assert df.sample_batch(oracle, None, cfg, 0, np.random.default_rng(0)).shape == (0, 1)
        rows = df.sample_batch(oracle, None, cfg, 8, np.random.default_rng(1))
        assert rows.shape == (8, 1)
        assert len(np.unique(rows)) == 8  # continuous noise: no repeats

    def test_stationary_gaussian_moments(self):
        # the N(0, I) target is invariant under the forward flow, so samples
        # must come back with unit moments
        oracle = unit_gaussian_oracle(2)
        cfg = df.DiffusionConfig(8.0, 0.01, 128, 4096)
        draws = df.sample_batch(oracle, None, cfg, 2000, np.random.default_rng(10))
        assert np.all(np.abs(draws.mean(axis=0)) < 0.1)
        assert np.all(np.abs(draws.var(axis=0) - 1.0) < 0.15)

    def test_divergence_reports_step(self):
        # raw 1/alpha coefficient with a huge first-half gap overflows the state
        model = box_model()
        cfg = df.DiffusionConfig(400.0, 0.5, 2, 2, sqrt_alpha_update=False)
        with pytest.raises(SamplerDivergedError) as err:
            df.sample(model, None, cfg, np.random.default_rng(11))
        assert err.value.step >= 0

    def test_mixture_oracle_end_to_end(self):
        # cheap smoke run: exact bimodal density through the full sampler;
        # log-space form so tail evaluations never underflow to log(0)
        from cindes.evaluate import histogram_tv

        def log_mix(Y, x):
            y = Y[:, 0]
            return np.logaddexp(
                -0.5 * ((y + 0.5) / 0.2) ** 2, -0.5 * ((y - 0.5) / 0.2) ** 2
            )

        oracle = AnalyticDensity(log_mix, response_dim=1)
        cfg = df.DiffusionConfig(6.0, 1e-4, 64, 512)
        draws = df.sample_batch(oracle, None, cfg, 1500, np.random.default_rng(12))

        def mix_pdf(Y, x):
            norm = 0.2 * np.sqrt(2.0 * np.pi)
            y = Y[:, 0]
            return (
                0.5 * np.exp(-0.5 * ((y + 0.5) / 0.2) ** 2)
                + 0.5 * np.exp(-0.5 * ((y - 0.5) / 0.2) ** 2)
            ) / norm

        # binomial noise alone is ~0.05 at this draw count; the rest is
        # score/discretization error at the cheap smoke settings
        tv = histogram_tv(draws, mix_pdf, bins=32, lo=-1.3, hi=1.3)
        assert tv < 0.15
