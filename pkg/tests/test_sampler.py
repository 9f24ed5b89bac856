import numpy as np
import pytest
from dataclasses import replace
from scipy import stats

from conftest import random_channel
from nagmcmc.channel import noise_variance_for_snr, transmit
from nagmcmc.detectors import detect_ml_exhaustive, zf_filter
from nagmcmc.modem import build_constellation, point_indices, qam_quantize
from nagmcmc.numerics import NotPositiveDefiniteError, gram, lambda_max
from nagmcmc.opcount import OpCounter
from nagmcmc.sampler import (
    SamplerDraws,
    SamplerParams,
    accept_test,
    default_beta,
    es_check,
    init_estimate,
    log_acceptance,
    nesterov_burst,
    precompute,
    propose,
    random_walk_factor,
    run_chain,
    run_detector,
    sample_batch,
    update_step_size,
)


def instance(rng, c, n=8, snr=25.0, batch=None):
    shape = () if batch is None else (batch,)
    H = np.stack([random_channel(rng, n, n) for _ in range(batch)]) if batch else random_channel(rng, n, n)
    k = rng.integers(0, c.order, shape + (n,))
    s2 = noise_variance_for_snr(snr, n, n)
    y = transmit(H, c.points[k], s2, rng)
    return H, k, y, s2


class TestParams:
    def test_defaults(self):
        p = SamplerParams()
        assert (p.P, p.S, p.Ng, p.rho, p.eta) == (16, 8, 8, 0.9, 1.5)
        assert p.carry_momentum and not p.acceptance_temperature

    def test_beta_rule(self):
        assert default_beta(8) == pytest.approx(1.0)
        assert default_beta(64) == pytest.approx(0.5)
        assert SamplerParams(beta=0.7).beta_for(64) == 0.7

    def test_collects_errors(self):
        with pytest.raises(ValueError, match="P must.*S must"):
            SamplerParams(P=0, S=0)

    def test_bad_init_mode(self):
        with pytest.raises(ValueError):
            SamplerParams(init_mode="zf")


class TestPrecompute:
    def test_identity(self, qam16):
        ctx = precompute(np.eye(4), np.zeros(4), 0.1, qam16)
        np.testing.assert_allclose(ctx.gram, np.eye(4))
        assert ctx.tau == pytest.approx(0.5)
        np.testing.assert_allclose(ctx.Mc, np.eye(4), atol=1e-15)

    def test_unit_rows(self, rng, qam16):
        ctx = precompute(random_channel(rng), np.zeros(8), 0.1, qam16)
        np.testing.assert_allclose(np.linalg.norm(ctx.Mc, axis=1), 1.0, atol=1e-12)
        assert np.allclose(np.triu(ctx.Mc, 1), 0)

    def test_learning_rate_bound(self, rng, qam16):
        for _ in range(20):
            ctx = precompute(random_channel(rng), np.zeros(8), 0.1, qam16)
            assert ctx.tau * lambda_max(ctx.gram) <= 1.0 + 1e-12

    def test_rank_deficient(self, qam4):
        H = np.ones((2, 2), dtype=complex)
        with pytest.raises(NotPositiveDefiniteError):
            precompute(H, np.zeros(2), 0.1, qam4)
        ctx = precompute(H, np.zeros(2), 0.1, qam4, fallback_identity=True)
        np.testing.assert_array_equal(ctx.Mc, np.eye(2))

    def test_counter(self, rng, qam16):
        counter = OpCounter(1)
        precompute(random_channel(rng), np.zeros(8), 0.1, qam16, counter=counter)
        assert counter.phase("preprocessing")[0] == pytest.approx(11 / 3 * 512 + 18 * 64 + 16)

    def test_batched_matches_single(self, rng, qam16):
        H = np.stack([random_channel(rng) for _ in range(3)])
        y = rng.standard_normal((3, 8)) + 0j
        ctx = precompute(H, y, 0.2, qam16)
        one = precompute(H[1], y[1], 0.2, qam16)
        np.testing.assert_allclose(ctx.Mc[1], one.Mc)
        assert ctx.tau[1] == pytest.approx(one.tau)
        assert ctx.sigma2.shape == (3,)


class TestNesterov:
    def test_scalar_recurrence(self, qam4):
        ctx = precompute(np.array([[1.0 + 0j]]), np.array([1.0 + 0j]), 0.1, qam4)
        traj = nesterov_burst(ctx, np.zeros(1), 2, rho=0.9)
        np.testing.assert_allclose(traj[:, 0], [1.0, 1.0])

    def test_scalar_recurrence_with_momentum(self, qam4):
        # y = 2 with tau = 1: z1 = 2, p2 = 2 + 0.9 * 2 = 3.8, z2 = 3.8 + (2 - 3.8) = 2
        ctx = precompute(np.array([[1.0 + 0j]]), np.array([2.0 + 0j]), 0.1, qam4)
        traj, dz = nesterov_burst(ctx, np.zeros(1), 2, return_momentum=True)
        np.testing.assert_allclose(traj[:, 0], [2.0, 2.0])
        assert dz[0] == pytest.approx(0.0)

    def test_fixed_point(self, rng, qam16):
        H = random_channel(rng)
        y = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        ctx = precompute(H, y, 0.1, qam16)
        z0 = zf_filter(H, y)
        traj = nesterov_burst(ctx, z0, 5)
        np.testing.assert_allclose(traj, np.broadcast_to(z0, traj.shape), atol=1e-9)

    def test_descends_from_lattice_points(self, rng, qam16):
        n, better = 500, 0
        for _ in range(n):
            H, _, y, s2 = instance(rng, qam16)
            ctx = precompute(H, y, s2, qam16)
            x0 = qam16.points[rng.integers(0, 16, 8)]
            z = nesterov_burst(ctx, x0, 8)[-1]
            better += np.linalg.norm(y - H @ z) < np.linalg.norm(y - H @ x0)
        assert better / n >= 0.99

    def test_batch_axes(self, rng, qam16):
        H, _, y, s2 = instance(rng, qam16, batch=4)
        ctx = precompute(H, y, s2, qam16)
        x0 = qam16.points[rng.integers(0, 16, (4, 3, 8))]
        traj = nesterov_burst(ctx, x0, 4)
        single = nesterov_burst(precompute(H[2], y[2], s2, qam16), x0[2, 1], 4)
        np.testing.assert_allclose(traj[:, 2, 1], single, atol=1e-12)


class TestStepSize:
    def test_floor(self):
        assert update_step_size(0.0, 8, 0.3162, 1.0) == pytest.approx(0.3162)

    def test_residual_branch(self):
        assert update_step_size(16.0, 8, 0.3162, 1.0) == pytest.approx(4 / np.sqrt(8))


class TestPropose:
    def test_zero_step(self, rng, qam16):
        ctx = precompute(random_channel(rng), np.zeros(8), 0.1, qam16)
        z = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        _, x = propose(ctx, z, 0.0, rng)
        np.testing.assert_allclose(x, qam_quantize(z, qam16))

    def test_replay(self, qam16):
        ctx = precompute(np.eye(4), np.zeros(4), 0.1, qam16)
        a = propose(ctx, np.zeros(4), 0.5, np.random.default_rng(3))[0]
        b = propose(ctx, np.zeros(4), 0.5, np.random.default_rng(3))[0]
        assert np.array_equal(a, b)

    def test_covariance(self, rng, qam16):
        ctx = precompute(random_channel(rng), np.zeros(8), 0.1, qam16)
        z = np.zeros((100_000, 8), dtype=complex)
        zp, _ = propose(ctx, z, 1.0, rng)
        emp = zp.T @ zp.conj() / zp.shape[0]
        target = ctx.Mc @ ctx.Mc.conj().T
        assert np.linalg.norm(emp - target) / np.linalg.norm(target) < 0.05
        np.testing.assert_allclose(np.real(np.diag(emp)), 1.0, rtol=0.05)


class TestAcceptance:
    def test_improvement(self, rng):
        acc, alpha = accept_test(1.0, 2.0, rng)
        assert acc and alpha == 1.0

    def test_e_inverse(self):
        assert accept_test(2.0, 1.0, u=0.0)[1] == pytest.approx(np.exp(-1))

    def test_underflow_safe(self):
        assert log_acceptance(1e6, 0.0) == -745.0
        assert np.exp(log_acceptance(1e6, 0.0)) >= 0.0

    def test_empirical_rate(self, rng):
        acc, _ = accept_test(np.full(100_000, 2.0), np.full(100_000, 1.0), rng)
        assert abs(acc.mean() - np.exp(-1)) <= 0.01


class TestEarlyStop:
    thr = 1.5 * np.sqrt(8 * 0.01)

    def test_single_sampler(self):
        assert es_check(np.zeros((1, 8), int), np.array([(0.5 * self.thr) ** 2]), 8, 0.01)

    def test_majority_below_threshold(self, rng):
        x = rng.integers(0, 16, (16, 8))
        x[:9] = x[0]
        sq = np.full(16, 5.0)
        sq[:9] = (0.9 * self.thr) ** 2
        assert es_check(x, sq, 8, 0.01)

    def test_exact_half_continues(self, rng):
        x = rng.integers(0, 16, (16, 8))
        x[:8] = x[0]
        sq = np.full(16, 5.0)
        sq[:8] = (0.5 * self.thr) ** 2
        assert not es_check(x, sq, 8, 0.01)

    def test_consensus_above_threshold_continues(self):
        x = np.zeros((16, 8), int)
        sq = np.full(16, (2 * self.thr) ** 2)
        assert not es_check(x, sq, 8, 0.01)

    def test_complex_input(self, qam16):
        x = np.broadcast_to(qam16.points[:8], (4, 8))
        assert es_check(x, np.zeros(4), 8, 0.01, constellation=qam16)
        with pytest.raises(ValueError):
            es_check(x, np.zeros(4), 8, 0.01)


class TestInit:
    def test_uniform(self, qam4):
        ctx = precompute(np.eye(2), np.zeros(2), 0.1, qam4)
        x = init_estimate(ctx, "random", np.random.default_rng(0), n_samplers=100_000)
        k = point_indices(x, qam4)
        counts = np.bincount(k[:, 0] * 4 + k[:, 1], minlength=16)
        assert stats.chisquare(counts).pvalue > 1e-3

    def test_mmse_noiseless(self, rng, qam16):
        H, k, _, _ = instance(rng, qam16)
        ctx = precompute(H, H @ qam16.points[k], 1e-9, qam16)
        np.testing.assert_allclose(init_estimate(ctx, "mmse"), qam16.points[k])

    def test_replay(self, qam16):
        ctx = precompute(np.eye(4), np.zeros(4), 0.1, qam16)
        a = init_estimate(ctx, "random", np.random.default_rng(1), n_samplers=3)
        b = init_estimate(ctx, "random", np.random.default_rng(1), n_samplers=3)
        assert np.array_equal(a, b)


class TestChain:
    def test_list_length_plain(self, rng, qam16):
        H, _, y, s2 = instance(rng, qam16, n=4)
        st = run_chain(precompute(H, y, s2, qam16), SamplerParams(S=1, Ng=1), rng)
        assert st.samples.shape == (2, 4)

    def test_list_length_sa(self, rng, qam16):
        H, _, y, s2 = instance(rng, qam16, n=4)
        st = run_chain(precompute(H, y, s2, qam16), SamplerParams(S=8, Ng=8, enable_sa=True), rng)
        assert st.samples.shape == (65, 4)
        assert st.best_sqnorm == st.sample_sqnorms.min()

    def test_replay(self, rng, qam16):
        H, _, y, s2 = instance(rng, qam16, n=4)
        ctx = precompute(H, y, s2, qam16)
        a = run_chain(ctx, SamplerParams(enable_sa=True), np.random.default_rng(11))
        b = run_chain(ctx, SamplerParams(enable_sa=True), np.random.default_rng(11))
        assert a.samples.tobytes() == b.samples.tobytes()

    def test_momentum_reported(self, rng, qam16):
        H, _, y, s2 = instance(rng, qam16, n=4)
        st = run_chain(precompute(H, y, s2, qam16), SamplerParams(S=2), rng)
        assert np.any(st.momentum != 0)


class TestDetector:
    def test_noiseless_stops_at_once(self, rng, qam16):
        H, k, _, _ = instance(rng, qam16)
        y = H @ qam16.points[k]
        ctx = precompute(H, y, 1e-6, qam16)
        res = run_detector(ctx, SamplerParams(init_mode="mmse", enable_es=True), rng)
        np.testing.assert_allclose(res.x_hat, qam16.points[k])
        assert res.iterations == 1

    def test_decision_is_pooled_minimum(self, rng, qam16):
        H, _, y, s2 = instance(rng, qam16, snr=15)
        res = run_detector(precompute(H, y, s2, qam16), SamplerParams(enable_sa=True), rng)
        assert np.sum(np.abs(y - H @ res.x_hat) ** 2) == pytest.approx(res.sample_sqnorms.min())
        assert res.x_hat_sqnorm == res.sample_sqnorms.min()
        assert res.samples.shape == (16 * 65, 8)

    def test_rejects_batch(self, rng, qam16):
        H, _, y, s2 = instance(rng, qam16, batch=2)
        with pytest.raises(ValueError):
            run_detector(precompute(H, y, s2, qam16), SamplerParams(), rng)


class TestBatchEngine:
    @pytest.fixture
    def setup(self, rng, qam16):
        H, k, y, s2 = instance(rng, qam16, batch=300, snr=18)
        return precompute(H, y, s2, qam16), k

    def draws(self, params, seed=5, n=300):
        return SamplerDraws.from_rng(np.random.default_rng(seed), n, params, 8, 16)

    def test_monotone_best(self, setup):
        ctx, _ = setup
        p = SamplerParams(S=10, enable_sa=True)
        out = sample_batch(ctx, p, self.draws(p), trace=True)
        assert np.all(np.diff(out.trace_sqnorm, axis=1) <= 0)

    def test_sa_superset(self, setup):
        ctx, _ = setup
        p0 = SamplerParams(S=8)
        p1 = replace(p0, enable_sa=True)
        d = self.draws(p0)
        a = sample_batch(ctx, p0, d, keep_samples=True)
        b = sample_batch(ctx, p1, d, keep_samples=True)
        assert np.all(b.x_hat_sqnorm <= a.x_hat_sqnorm)
        # the non-SA list is the subsequence at multiples of Ng
        np.testing.assert_array_equal(b.samples_idx[:, :, ::8], a.samples_idx)

    def test_es_matches_trace(self, setup):
        ctx, _ = setup
        p = SamplerParams(S=12, enable_sa=True, enable_es=True)
        d = self.draws(p)
        fast = sample_batch(ctx, p, d)
        traced = sample_batch(ctx, p, d, trace=True)
        np.testing.assert_array_equal(fast.x_hat_idx, traced.x_hat_idx)
        np.testing.assert_array_equal(fast.iterations, traced.iterations)
        np.testing.assert_allclose(fast.counter.counts, traced.counter.counts)
        fired = traced.es_fire > 0
        np.testing.assert_array_equal(traced.x_hat_idx[fired], traced.trace_idx[fired, traced.es_fire[fired]])

    def test_iterations_bounded(self, setup):
        ctx, _ = setup
        p = SamplerParams(S=6, enable_es=True)
        out = sample_batch(ctx, p, self.draws(p))
        assert np.all((out.iterations >= 1) & (out.iterations <= 6))
        p = replace(p, enable_es=False)
        assert np.all(sample_batch(ctx, p, self.draws(p)).iterations == 6)

    def test_draws_prefix(self):
        p8, p12 = SamplerParams(S=8), SamplerParams(S=12)
        a, b = self.draws(p8, n=4), self.draws(p12, n=4)
        np.testing.assert_array_equal(a.init, b.init)
        # walk draws share the per-trial prefix when drawn from per-trial streams
        g = lambda: [np.random.default_rng(i) for i in range(4)]  # noqa: E731
        a = SamplerDraws.from_streams(g(), g(), g(), p8, 8, 16)
        b = SamplerDraws.from_streams(g(), g(), g(), p12, 8, 16)
        np.testing.assert_array_equal(a.w, b.w[:, :8])
        np.testing.assert_array_equal(a.u, b.u[:, :8])

    def test_batch_equals_single(self, setup):
        ctx, _ = setup
        p = SamplerParams(S=6, enable_sa=True, enable_es=True)
        d = self.draws(p)
        full = sample_batch(ctx, p, d)
        for b in (0, 17, 299):
            one = sample_batch(ctx.take([b]), p, SamplerDraws(d.init[[b]], d.w[[b]], d.u[[b]]))
            assert one.x_hat_idx[0].tolist() == full.x_hat_idx[b].tolist()
            assert one.iterations[0] == full.iterations[b]

    def test_counter_matches_closed_form(self, setup):
        ctx, _ = setup
        p = SamplerParams(S=4, Ng=3, P=5, enable_sa=True)
        out = sample_batch(ctx, p, self.draws(p))
        N, M = 8, 16
        per_iter = (p.Ng + 1) * N**2 + ((M + 3) * p.Ng + 1) * N
        np.testing.assert_allclose(out.counter.total(), per_iter * p.P * p.S + (M + 1) * N * p.P)

    def test_momentum_flag_matters(self, setup):
        ctx, _ = setup
        p = SamplerParams(S=6)
        d = self.draws(p)
        a = sample_batch(ctx, p, d, keep_samples=True)
        b = sample_batch(ctx, replace(p, carry_momentum=False), d, keep_samples=True)
        assert not np.array_equal(a.samples_idx, b.samples_idx)


def test_oracle_convergence_2x2(rng):
    c = build_constellation(4)
    n = 10_000
    H, k, y, s2 = instance(rng, c, n=2, snr=10, batch=n)
    p = SamplerParams(P=4, S=16, enable_sa=True)
    out = sample_batch(precompute(H, y, s2, c), p, SamplerDraws.from_rng(rng, n, p, 2, 4))
    ml = point_indices(detect_ml_exhaustive(H, y, c), c)
    assert np.mean(np.all(out.x_hat_idx == ml, axis=1)) >= 0.999


def test_random_walk_factor_lower_unit_rows(rng):
    Mc = random_walk_factor(gram(random_channel(rng)))
    assert np.allclose(np.triu(Mc, 1), 0)
    np.testing.assert_allclose(np.linalg.norm(Mc, axis=1), 1.0)
