"""Tests for stochastic ancestral sampling and probability-flow sampling.

The closed-form single-Gaussian flow endpoint serves as the oracle for
the ODE path; Monte-Carlo statistics of the data law serve as the oracle
for the stochastic sampler.
"""

import numpy as np
import pytest

from cdslab import (
    Component,
    ConfigError,
    GaussianMixture,
    NoiseSchedule,
    OrderError,
    SingularityError,
    Trajectory,
    as_denoiser,
    single_gaussian,
)
from cdslab.samplers import (
    ancestral_batch,
    ancestral_endpoints,
    ancestral_sde_sample,
    euler_ode_step,
    gaussian_ode_oracle,
    ode_batch,
    ode_sample,
)
from cdslab.rng import named_stream

SCHED = NoiseSchedule()


def two_mode_1d(weight0: float = 0.3) -> GaussianMixture:
    return GaussianMixture(
        (
            Component(weight0, np.array([-5.0]), 0.5, label=0),
            Component(1.0 - weight0, np.array([5.0]), 0.5, label=1),
        )
    )


class TestTrajectory:
    def test_times_must_strictly_decrease(self):
        with pytest.raises(ConfigError):
            Trajectory(times=np.array([2.0, 2.0, 1.0]), states=np.zeros((3, 1)))

    def test_lengths_must_match(self):
        with pytest.raises(ConfigError):
            Trajectory(times=np.array([2.0, 1.0]), states=np.zeros((3, 1)))

    def test_states_must_be_finite(self):
        states = np.zeros((2, 1))
        states[1, 0] = np.inf
        with pytest.raises(ConfigError):
            Trajectory(times=np.array([2.0, 1.0]), states=states)

    def test_endpoint_is_last_state(self):
        traj = Trajectory(times=np.array([2.0, 0.0]), states=np.array([[3.0], [1.0]]))
        assert traj.endpoint[0] == 1.0


class TestEulerOdeStep:
    def test_identity_denoiser_keeps_state(self):
        x = np.array([1.7, -0.3])
        out = euler_ode_step(lambda x, t, y=None, cfg_w=None: x, x, 2.0, 1.0, SCHED)
        np.testing.assert_array_equal(out, x)

    def test_point_mass_one_step_to_zero_lands_on_mode(self):
        dn = as_denoiser(single_gaussian([3.0, -1.0], 1e-12), SCHED)
        out = euler_ode_step(dn, np.array([40.0, 12.0]), 2.0, 0.0, SCHED)
        np.testing.assert_allclose(out, [3.0, -1.0], atol=1e-9)

    def test_single_gaussian_closed_form(self):
        # D(2, 1) = 1 for N(0,1) data, so the step is 2 + (0.5-1)/1*(2-1).
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        out = euler_ode_step(dn, np.array([2.0]), 1.0, 0.5, SCHED)
        assert out[0] == pytest.approx(1.5, abs=1e-12)

    def test_zero_start_time_rejected(self):
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        with pytest.raises(SingularityError):
            euler_ode_step(dn, np.array([1.0]), 0.0, 0.0, SCHED)

    def test_times_out_of_order_rejected(self):
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        with pytest.raises(OrderError):
            euler_ode_step(dn, np.array([1.0]), 1.0, 2.0, SCHED)


class TestOdeSample:
    def test_single_step_point_mass_hits_mode(self):
        dn = as_denoiser(single_gaussian([2.0], 1e-12), SCHED)
        traj = ode_sample(dn, np.array([9.0]), 1, SCHED)
        assert traj.endpoint[0] == pytest.approx(2.0, abs=1e-9)

    def test_grid_shape_and_monotonicity(self):
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        traj = ode_sample(dn, np.array([4.0]), 16, SCHED)
        assert traj.times.shape == (17,)
        assert traj.times[0] == SCHED.horizon
        assert traj.times[-1] == 0.0
        assert np.all(np.diff(traj.times) < 0.0)

    def test_endpoint_matches_gaussian_oracle_at_512_steps(self):
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        traj = ode_sample(dn, np.array([4.0]), 512, SCHED)
        exact = 4.0 / np.sqrt(101.0)
        assert traj.endpoint[0] == pytest.approx(exact, abs=1e-2)

    def test_oracle_value_confirmed_by_fine_integration(self):
        # 1e5-step Euler integration converges on the closed form.
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        traj = ode_sample(dn, np.array([4.0]), 100_000, SCHED)
        exact = gaussian_ode_oracle(np.array([4.0]), SCHED.horizon, np.zeros(1), 1.0, SCHED)
        assert traj.endpoint[0] == pytest.approx(exact[0], abs=1e-4)

    def test_deterministic_given_start(self):
        dn = as_denoiser(two_mode_1d(), SCHED)
        a = ode_sample(dn, np.array([1.1]), 64, SCHED)
        b = ode_sample(dn, np.array([1.1]), 64, SCHED)
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.times, b.times)

    def test_guidance_targets_recorded_per_step(self):
        dn = as_denoiser(two_mode_1d(), SCHED)
        traj = ode_sample(dn, np.array([1.1]), 8, SCHED)
        assert traj.guidance_targets is not None
        assert len(traj.guidance_targets) == len(traj.times)


class TestOdeHalvingConvergence:
    def test_halving_steps_shrinks_max_endpoint_error(self):
        # First-order convergence: the asymptotic error ratio under step
        # halving is 2; require at least 1.6 over 20 random starts.
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        rng = named_stream(0, "halving")
        xs = rng.standard_normal(20) * 10.0
        max_err = {}
        for n in (64, 128, 256):
            errs = []
            for x in xs:
                traj = ode_sample(dn, np.array([x]), n, SCHED)
                exact = gaussian_ode_oracle(
                    np.array([x]), SCHED.horizon, np.zeros(1), 1.0, SCHED
                )
                errs.append(abs(traj.endpoint[0] - exact[0]))
            max_err[n] = max(errs)
        assert max_err[128] <= max_err[64] / 1.6
        assert max_err[256] <= max_err[128] / 1.6


class TestAncestralSample:
    def test_point_mass_collapses_every_iterate(self):
        dn = as_denoiser(single_gaussian([2.5], 1e-12), SCHED)
        traj = ancestral_sde_sample(dn, 1, 16, SCHED, named_stream(0, "anc-pm"))
        np.testing.assert_allclose(traj.states, 2.5, atol=1e-8)
        assert traj.endpoint[0] == pytest.approx(2.5, abs=1e-9)

    def test_deterministic_under_seed(self):
        dn = as_denoiser(two_mode_1d(), SCHED)
        a = ancestral_sde_sample(dn, 1, 32, SCHED, named_stream(5, "anc-det"))
        b = ancestral_sde_sample(dn, 1, 32, SCHED, named_stream(5, "anc-det"))
        np.testing.assert_array_equal(a.states, b.states)

    def test_single_gaussian_endpoint_mean(self):
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        ends = ancestral_endpoints(dn, 1, 10_000, 64, SCHED, named_stream(1, "anc-mean"))
        assert ends.mean() == pytest.approx(0.0, abs=0.03)

    def test_single_gaussian_endpoint_std(self):
        # Data law N(0, 1): matching it requires the endpoint std to be 1.
        dn = as_denoiser(single_gaussian([0.0], 1.0), SCHED)
        ends = ancestral_endpoints(dn, 1, 10_000, 64, SCHED, named_stream(2, "anc-std"))
        assert ends.std() == pytest.approx(1.0, abs=0.03)

    def test_two_mode_basin_frequencies(self):
        dn = as_denoiser(two_mode_1d(weight0=0.3), SCHED)
        ends = ancestral_endpoints(dn, 1, 10_000, 64, SCHED, named_stream(3, "anc-freq"))
        frac_left = float(np.mean(ends[:, 0] < 0.0))
        assert frac_left == pytest.approx(0.3, abs=0.03)

    def test_guidance_targets_are_denoised_iterates(self):
        dn = as_denoiser(two_mode_1d(), SCHED)
        traj = ancestral_sde_sample(dn, 1, 16, SCHED, named_stream(7, "anc-tgt"))
        assert traj.guidance_targets is not None
        np.testing.assert_array_equal(traj.guidance_targets, traj.states)


class TestBatchedRuns:
    def test_ode_batch_matches_single_runs(self):
        dn = as_denoiser(two_mode_1d(), SCHED)
        x_T = named_stream(9, "ode-batch").standard_normal((6, 1)) * 10.0
        ends, kept = ode_batch(dn, x_T, 32, SCHED, keep_first=2)
        for i in range(6):
            single = ode_sample(dn, x_T[i], 32, SCHED)
            np.testing.assert_allclose(ends[i], single.endpoint, rtol=1e-12, atol=1e-12)
        assert kept["states"].shape == (33, 2, 1)
        assert kept["times"].shape == (33,)

    def test_ancestral_batch_single_run_matches_loop(self):
        dn = as_denoiser(two_mode_1d(), SCHED)
        single = ancestral_sde_sample(dn, 1, 64, SCHED, named_stream(3, "anc-eq"))
        ends = ancestral_endpoints(dn, 1, 1, 64, SCHED, named_stream(3, "anc-eq"))
        np.testing.assert_array_equal(ends[0], single.endpoint)


class TestSdeOdeMarginalAgreement:
    def test_single_gaussian_endpoint_moments_agree(self):
        # Both samplers target the same data law, so their endpoint means
        # and stds over 1e4 runs must agree within 0.05.
        gmm = single_gaussian([0.0], 1.0)
        dn = as_denoiser(gmm, SCHED)
        sde_ends = ancestral_endpoints(dn, 1, 10_000, 64, SCHED,
                                       named_stream(11, "marginal-sde"))
        rng = named_stream(11, "marginal-ode")
        sig_T = float(SCHED.horizon)
        x0 = rng.standard_normal((10_000, 1))
        x_T = x0 + sig_T * rng.standard_normal((10_000, 1))
        ode_ends = ode_batch(dn, x_T, 64, SCHED)[0]
        assert abs(sde_ends.mean() - ode_ends.mean()) <= 0.05
        assert abs(sde_ends.std() - ode_ends.std()) <= 0.05


class TestGuidanceTargetVariance:
    def test_sde_next_target_varies_while_ode_is_fixed(self):
        # From a fixed mid-trajectory estimate, the stochastic sampler's
        # next denoised iterate varies across noise draws; the ODE's next
        # denoised point is one deterministic value.
        gmm = two_mode_1d()
        dn = as_denoiser(gmm, SCHED)
        est = np.array([1.0])
        t_next = 2.0
        rng = named_stream(13, "target-var")
        draws = []
        for _ in range(200):
            x_next = est + t_next * rng.standard_normal(1)
            draws.append(dn(x_next, t_next)[0])
        sde_std = float(np.std(draws))

        ode_next = []
        for _ in range(5):
            x_next = euler_ode_step(dn, est, 3.0, t_next, SCHED)
            ode_next.append(dn(x_next, t_next)[0])
        ode_std = float(np.std(ode_next))
        assert ode_std == 0.0
        assert sde_std > ode_std


class TestGaussianOdeOracle:
    def test_mean_is_fixed_point(self):
        mu = np.array([1.0, -2.0])
        out = gaussian_ode_oracle(mu, 5.0, mu, 0.7, SCHED)
        np.testing.assert_array_equal(out, mu)

    def test_wide_data_limit_returns_state(self):
        x = np.array([3.0])
        out = gaussian_ode_oracle(x, 1.0, np.zeros(1), 1e9, SCHED)
        assert out[0] == pytest.approx(3.0, rel=1e-12)

    def test_reference_value(self):
        out = gaussian_ode_oracle(np.array([4.0]), 3.0, np.zeros(1), 1.0, SCHED)
        assert out[0] == pytest.approx(4.0 / np.sqrt(10.0), abs=1e-12)

    def test_reference_value_confirmed_by_fine_integration(self):
        # Integrate the flow from t = 3 with 1e5 Euler steps.
        short = NoiseSchedule(horizon=3.0)
        dn = as_denoiser(single_gaussian([0.0], 1.0), short)
        traj = ode_sample(dn, np.array([4.0]), 100_000, short)
        assert traj.endpoint[0] == pytest.approx(4.0 / np.sqrt(10.0), abs=1e-4)
