import numpy as np
import pytest

from covstop.dp_oracle import make_scalar_model, scalar_scenario
from covstop.errors import ContractError
from covstop.gmti import build_flyby_scenario
from covstop.observability import stopping_cost
from covstop.optimizer import (SpsaSchedule, evaluate_cost,
                               periodic_cost_curve, periodic_policy_cost,
                               rademacher, rollout, rollout_objective,
                               spsa_gradient, spsa_minimize, spsa_optimize,
                               stop_at)
from covstop.policy import Action, ParamLayout, PolicyFamily
from covstop.streams import child_seed, stream


def scalar_test_scenario(p0=(9.0, 4.0), tau_max=40, p_d=0.75, p_d_other=0.0):
    model = make_scalar_model(f=1.0, h=1.0, q=1.0, r=25.0, p_d=p_d,
                              p_d_other=p_d_other, c_nu=0.8, beta=(5.0, 1.0))
    return scalar_scenario(model, *p0, tau_max=tau_max)


def always(action):
    return lambda belief, epoch: action


class TestRollout:
    def test_immediate_stop(self):
        scenario = scalar_test_scenario()
        result = rollout(scenario, always(Action.STOP), seed=0)
        assert result.tau == 1
        assert not result.truncated
        assert len(result.belief_trajectory) == 2
        expected = stopping_cost(result.belief_trajectory[1],
                                 scenario.weights)
        assert result.sample_cost == expected

    def test_never_stop_truncates(self):
        scenario = scalar_test_scenario(tau_max=12)
        result = rollout(scenario, always(Action.CONTINUE), seed=0)
        assert result.tau == 12
        assert result.truncated
        final = result.belief_trajectory[-1]
        expected = 11 * scenario.weights.operating_cost \
            + stopping_cost(final, scenario.weights)
        assert result.sample_cost == expected

    def test_trajectory_matches_hand_unrolled_recursion(self):
        # Oracle: scalar arithmetic replay driven by the recorded
        # detection flags.
        scenario = scalar_test_scenario(p0=(9.0, 4.0), tau_max=3)
        result = rollout(scenario, always(Action.CONTINUE), seed=11)
        p_a, p_o = 9.0, 4.0
        pbar_a, pbar_o = 9.0, 4.0
        r_eff = 25.0  # r / (nu * delta) = 25 / (0.5 * 2)
        for k in range(3):
            det_a, det_o = result.detections[k]
            pbar_a, pbar_o = pbar_a + 1.0, pbar_o + 1.0
            p_a = (p_a * r_eff / (p_a + r_eff) if det_a else p_a) + 1.0
            p_o = (p_o * r_eff / (p_o + r_eff) if det_o else p_o) + 1.0
            belief = result.belief_trajectory[k + 1]
            assert belief.posteriors[0][0, 0] == pytest.approx(p_a, rel=1e-12)
            assert belief.posteriors[1][0, 0] == pytest.approx(p_o, rel=1e-12)
            assert belief.priors[0][0, 0] == pytest.approx(pbar_a, rel=1e-12)

    def test_bitwise_reproducible(self):
        scenario = build_flyby_scenario()
        layout = ParamLayout(PolicyFamily.QUADFORM, 4, 4)
        params = layout.build(stream(1, "t").uniform(-1, 1, layout.n_params))
        r1 = rollout(scenario, params, seed=99)
        r2 = rollout(scenario, params, seed=99)
        assert r1.tau == r2.tau
        assert r1.sample_cost == r2.sample_cost
        assert np.array_equal(r1.detections, r2.detections)
        for b1, b2 in zip(r1.belief_trajectory, r2.belief_trajectory):
            for p1, p2 in zip(b1.posteriors, b2.posteriors):
                assert np.array_equal(p1, p2)

    def test_zero_priority_target_gets_no_detections(self):
        scenario = scalar_test_scenario(p_d=0.9, p_d_other=0.9)
        scenario = scenario.with_overrides()
        import dataclasses
        scenario = dataclasses.replace(scenario,
                                       priorities=np.array([1.0, 0.0]))
        result = rollout(scenario, always(Action.CONTINUE), seed=3)
        assert not result.detections[:, 1].any()
        # posterior equals prior for the measurement-free target
        for belief in result.belief_trajectory:
            assert np.array_equal(belief.posteriors[1], belief.priors[1])


class TestEvaluateCost:
    def test_single_rollout_equals_rollout(self):
        scenario = scalar_test_scenario()
        policy = stop_at(4)
        assert evaluate_cost(scenario, policy, 17, 1) == \
            rollout(scenario, policy, 17).sample_cost

    def test_certain_detection_is_seed_invariant(self):
        scenario = scalar_test_scenario(p_d=1.0, p_d_other=1.0)
        policy = stop_at(6)
        costs = {evaluate_cost(scenario, policy, seed, 4)
                 for seed in (1, 2, 3)}
        assert len(costs) == 1

    def test_monte_carlo_self_consistency(self):
        scenario = scalar_test_scenario(tau_max=30)
        layout = ParamLayout(PolicyFamily.EIGEN_SUM, 2, 1)
        params = layout.build(np.array([0.3, 0.0, 0.25, 0.0]))
        small = [rollout(scenario, params, child_seed(5, "mc", b)).sample_cost
                 for b in range(10_000)]
        big = [rollout(scenario, params, child_seed(6, "mc", b)).sample_cost
               for b in range(100_000)]
        se = np.std(big) / np.sqrt(len(small))
        assert abs(np.mean(small) - np.mean(big)) < 3 * se


class TestSpsaGradient:
    def test_constant_objective_zero_gradient(self):
        schedule = SpsaSchedule()
        grad = spsa_gradient(np.zeros(4), 0, schedule,
                             lambda phi, seed: 7.5, seed=1)
        assert np.array_equal(grad, np.zeros(4))

    def test_linear_objective_direction_average(self):
        # For J = c.phi the estimate is (c.d) d; averaging over all
        # Rademacher directions recovers c exactly.
        c = np.array([1.0, -2.0, 0.5, 3.0])
        schedule = SpsaSchedule(omega=0.1)
        total = np.zeros(4)
        count = 0
        for bits in range(16):
            d = np.array([1.0 if bits & (1 << i) else -1.0
                          for i in range(4)])
            grad = spsa_gradient(np.zeros(4), 0, schedule,
                                 lambda phi, seed: float(c @ phi), seed=0,
                                 direction=d)
            np.testing.assert_allclose(grad, (c @ d) * d, rtol=1e-12)
            total += grad
            count += 1
        np.testing.assert_allclose(total / count, c, rtol=1e-12)

    def test_quadratic_at_origin_is_exactly_zero(self):
        schedule = SpsaSchedule()
        for n in range(5):
            grad = spsa_gradient(np.zeros(3), n, schedule,
                                 lambda phi, seed: float(phi @ phi), seed=4)
            np.testing.assert_array_equal(grad, np.zeros(3))

    def test_common_random_numbers_cancel_policy_independent_noise(self):
        # the two perturbed evaluations share their seed, so an
        # objective that ignores phi yields a zero estimate even
        # though it is random across seeds
        def noisy(phi, seed):
            return float(stream(seed, "noise").normal())

        schedule = SpsaSchedule()
        grad = spsa_gradient(np.ones(4), 2, schedule, noisy, seed=9)
        assert np.array_equal(grad, np.zeros(4))

    def test_rademacher_signs(self):
        gen = stream(7, "test.rademacher")
        draws = rademacher(1000, gen)
        assert set(np.unique(draws)) == {-1.0, 1.0}
        assert abs(draws.mean()) < 0.1


class TestSpsaMinimize:
    def test_quadratic_stub_converges(self):
        target = np.array([1.0, -2.0])

        def objective(phi, seed):
            return float(np.sum((phi - target) ** 2))

        schedule = SpsaSchedule(n_iterations=2000, n_restarts=1,
                                omega=0.1, epsilon=0.4, s_offset=10.0)
        result = spsa_minimize(objective, [np.zeros(2)], schedule, seed=5)
        assert np.linalg.norm(result.best_phi - target) < 1e-2

    def test_zero_iterations_returns_best_init(self):
        def objective(phi, seed):
            return float(np.sum(phi ** 2))

        inits = [np.array([3.0, 0.0]), np.array([0.5, 0.5]),
                 np.array([2.0, 2.0])]
        schedule = SpsaSchedule(n_iterations=0, n_restarts=3)
        result = spsa_minimize(objective, inits, schedule, seed=2)
        np.testing.assert_array_equal(result.best_phi, inits[1])
        assert result.best_restart == 1

    def test_nonfinite_cost_aborts_restart_not_search(self):
        def objective(phi, seed):
            if phi[0] > 2.0:
                return float("nan")
            return float(np.sum(phi ** 2))

        schedule = SpsaSchedule(n_iterations=5, n_restarts=2)
        result = spsa_minimize(objective, [np.array([3.0]), np.array([1.0])],
                               schedule, seed=3)
        assert result.best_restart == 1

    def test_empty_inits_rejected(self):
        with pytest.raises(ContractError):
            spsa_minimize(lambda phi, seed: 0.0, [], SpsaSchedule(), 0)

    def test_schedule_validation(self):
        with pytest.raises(ContractError):
            SpsaSchedule(gamma=0.3)
        with pytest.raises(ContractError):
            SpsaSchedule(zeta=0.5)
        with pytest.raises(ContractError):
            SpsaSchedule(omega=0.0)

    def test_trace_records_every_iteration(self):
        def objective(phi, seed):
            return float(np.sum(phi ** 2))

        schedule = SpsaSchedule(n_iterations=10, n_restarts=2)
        result = spsa_minimize(objective, [np.ones(2), 2 * np.ones(2)],
                               schedule, seed=1)
        assert len(result.trace) == 2 * 11
        assert all(np.all(np.isfinite(t.phi)) for t in result.trace)


class TestSpsaOptimizeOnScenario:
    def test_finds_near_oracle_policy(self):
        # coarse end-to-end check; the acceptance suite runs the tight
        # 5 percent comparison
        scenario = scalar_test_scenario(p0=(50.0, 2.0), tau_max=60)
        layout = ParamLayout(PolicyFamily.EIGEN_SUM, 2, 1)
        schedule = SpsaSchedule(n_iterations=120, n_restarts=3,
                                rollouts_per_eval=8, n_screen=15)
        result = spsa_optimize(scenario, layout, None, schedule, seed=8)
        cost = evaluate_cost(scenario, result.best_params, 99, 2000)
        never = evaluate_cost(scenario, always(Action.CONTINUE), 99, 200)
        immediate = evaluate_cost(scenario, always(Action.STOP), 99, 200)
        assert cost < min(never, immediate) - 1.0

    def test_best_params_round_trip(self):
        scenario = scalar_test_scenario()
        layout = ParamLayout(PolicyFamily.EIGEN_SUM, 2, 1)
        schedule = SpsaSchedule(n_iterations=0, n_restarts=2)
        result = spsa_optimize(scenario, layout, None, schedule, seed=4)
        rebuilt = layout.build(result.best_phi)
        np.testing.assert_array_equal(rebuilt.theta,
                                      result.best_params.theta)


class TestPeriodicPolicies:
    def test_k1_charges_no_operating_cost(self):
        scenario = scalar_test_scenario()
        cost = periodic_policy_cost(scenario, 1, 12, 1)
        result = rollout(scenario, stop_at(1), 12)
        assert result.tau == 1
        assert cost == result.sample_cost

    def test_certain_detection_matches_noiseless_recursion(self):
        scenario = scalar_test_scenario(p_d=1.0, p_d_other=1.0)
        k = 5
        cost = periodic_policy_cost(scenario, k, 3, 2)
        p_a, p_o = 9.0, 4.0
        r_eff = 25.0
        for _ in range(k):
            p_a = p_a * r_eff / (p_a + r_eff) + 1.0
            p_o = p_o * r_eff / (p_o + r_eff) + 1.0
        pbar_a, pbar_o = 9.0 + k, 4.0 + k
        expected = (k - 1) * 0.8 + 5.0 * np.log(p_a) - 1.0 * np.log(p_o)
        assert cost == pytest.approx(expected, rel=1e-12)

    def test_curve_matches_per_k_calls_bitwise(self):
        scenario = scalar_test_scenario(tau_max=15)
        curve = periodic_cost_curve(scenario, 21, 5)
        for k in (1, 4, 9, 15):
            assert periodic_policy_cost(scenario, k, 21, 5) == \
                pytest.approx(curve[:, k - 1].mean(), abs=0)

    def test_flyby_sweep_has_interior_minimum(self):
        scenario = build_flyby_scenario()
        curve = periodic_cost_curve(scenario, 13, 60)
        means = curve.mean(axis=0)
        k_best = int(np.argmin(means))
        assert 2 < k_best + 1 < scenario.tau_max - 2
        assert means[k_best] < means[0] - 1.0
        assert means[k_best] < means[-1] - 1.0

    def test_k_stop_bounds(self):
        scenario = scalar_test_scenario(tau_max=10)
        with pytest.raises(ContractError):
            periodic_policy_cost(scenario, 0, 1, 1)
        with pytest.raises(ContractError):
            periodic_policy_cost(scenario, 11, 1, 1)
