import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from wsbc import env
from wsbc.env import Action, MiniIBConfig, Observable
from wsbc.exceptions import NumericError, ValidationError

QUIET = MiniIBConfig().without_noise()


def states_equal(a, b):
    return a.observable == b.observable and a.effort_ema == b.effort_ema and list(a.history) == list(b.history)


class TestReward:
    def test_reward_formula(self):
        assert env.reward_from_costs(fatigue=5.0, consumption=10.0) == -25.0

    def test_step_reward_matches_new_observable(self):
        state = env.env_reset(3, setpoint=50.0, init="random")
        for _ in range(20):
            state, reward = env.env_step(state, Action(0.3, -0.2, 0.1))
            assert reward == -state.observable.c - 3.0 * state.observable.f


class TestReset:
    def test_fixed_point_values_match_hand_formulas(self):
        state = env.env_reset(0, setpoint=50.0, init=(50.0, 50.0, 50.0))
        obs = state.observable
        # effort (50+50)/200 = 0.5, fatigue 5*0.5, consumption 0.5*|50-50| + 0.1*50
        assert obs.v == 50.0 and obs.g == 50.0 and obs.h == 50.0 and obs.p == 50.0
        assert obs.f == 2.5
        assert obs.c == 5.0
        assert state.effort_ema == 0.5
        assert len(state.history) == 6
        assert all(o == obs for o in state.history)

    def test_same_seed_same_state(self):
        a = env.env_reset(7, setpoint=40.0, init="random")
        b = env.env_reset(7, setpoint=40.0, init="random")
        assert states_equal(a, b)

    def test_random_init_in_range_and_reproducible(self):
        seen = set()
        for seed in range(20):
            state = env.env_reset(seed, init="random")
            obs = state.observable
            for s in (obs.v, obs.g, obs.h):
                assert 0.0 <= s <= 100.0
            seen.add((obs.v, obs.g, obs.h))
        assert len(seen) > 1

    def test_setpoint_out_of_range(self):
        with pytest.raises(ValidationError):
            env.env_reset(0, setpoint=101.0)

    def test_bad_init_steering(self):
        with pytest.raises(ValidationError):
            env.env_reset(0, init=(120.0, 50.0, 50.0))


class TestStep:
    def test_steering_clips_at_boundary(self):
        state = env.env_reset(0, init=(95.0, 50.0, 50.0))
        state, _ = env.env_step(state, Action(1.0, 0.0, 0.0))
        assert state.observable.v == 100.0

    def test_action_components_clipped_before_scaling(self):
        state = env.env_reset(0, init=(50.0, 50.0, 50.0))
        state, _ = env.env_step(state, Action(5.0, -5.0, 0.25))
        assert state.observable.v == 60.0  # clip(5) = 1 -> +10
        assert state.observable.g == 40.0
        assert state.observable.h == 52.5

    def test_fixed_point_step_matches_hand_formulas(self):
        # noise off, v=g=p=50, h=0, zero action: effort ema stays at 0.5,
        # fatigue 5*0.5 = 2.5, consumption 0.5*0 + 0.1*50 = 5, reward -12.5
        state = env.env_reset(0, setpoint=50.0, init=(50.0, 50.0, 0.0), config=QUIET)
        for _ in range(8):
            state, reward = env.env_step(state, Action(0.0, 0.0, 0.0))
            assert_allclose(state.observable.f, 2.5, rtol=0, atol=1e-15)
            assert_allclose(state.observable.c, 5.0, rtol=0, atol=1e-15)
            assert_allclose(reward, -12.5, rtol=0, atol=1e-14)

    def test_non_finite_action_raises(self):
        state = env.env_reset(0)
        with pytest.raises(NumericError):
            env.env_step(state, Action(np.nan, 0.0, 0.0))

    def test_steerings_never_leave_range(self):
        state = env.env_reset(5, init="random")
        rng = np.random.default_rng(9)
        for _ in range(300):
            state, _ = env.env_step(state, Action(*rng.uniform(-3, 3, 3)))
            obs = state.observable
            assert 0.0 <= obs.v <= 100.0 and 0.0 <= obs.g <= 100.0 and 0.0 <= obs.h <= 100.0
            assert obs.f >= 0.0 and obs.c >= 0.0

    def test_consumption_reacts_with_five_step_delay(self):
        def run(actions):
            state = env.env_reset(0, init=(50.0, 50.0, 50.0), config=QUIET)
            cs = []
            for a in actions:
                state, _ = env.env_step(state, a)
                cs.append(state.observable.c)
            return cs

        idle = [Action(0.0, 0.0, 0.0)] * 12
        poked = [Action(1.0, 0.0, 0.0)] + [Action(0.0, 0.0, 0.0)] * 11
        base, kicked = run(idle), run(poked)
        # the poke changes v at step 1; consumption first differs at step 1+5
        for t in range(5):
            assert base[t] == kicked[t]
        assert base[5] != kicked[5]


class TestBaselinePolicies:
    def history_of(self, observables):
        return list(observables)

    def test_mediocre_fixed_point(self):
        obs = Observable(25.0, 25.0, 25.0, 50.0, 1.0, 2.0)
        assert_array_equal(env.baseline_policy("mediocre", [obs]), np.zeros(3))

    def test_bad_fixed_point(self):
        obs = Observable(100.0, 100.0, 100.0, 50.0, 1.0, 2.0)
        assert_array_equal(env.baseline_policy("bad", [obs]), np.zeros(3))

    def test_optimized_formula_and_clip(self):
        # lags: v five back = 0, fatigue three back = 0, shift three and four
        # back = 0, setpoint 50; raw (-0.91, -48.57, 100.81)
        def obs(v=0.0, g=0.0, h=0.0, f=0.0):
            return Observable(v, g, h, 50.0, f, 0.0)

        history = [obs(v=0.0), obs(h=0.0), obs(h=0.0, f=0.0), obs(), obs(), obs()]
        raw = env.baseline_policy("optimized", history)
        assert_allclose(raw, [-0.91, -48.57, 100.81], atol=1e-12)
        assert_array_equal(np.clip(raw, -1, 1), [-0.91, -1.0, 1.0])

    def test_optimized_uses_correct_lags(self):
        # distinct lag values: v_{t-5}=1, f_{t-3}=2, h_{t-3}=3, h_{t-4}=4, p=10
        rows = [
            Observable(1.0, 0.0, 9.0, 10.0, 9.0, 0.0),  # t-5
            Observable(9.0, 0.0, 4.0, 10.0, 9.0, 0.0),  # t-4
            Observable(9.0, 0.0, 3.0, 10.0, 2.0, 0.0),  # t-3
            Observable(9.0, 0.0, 9.0, 10.0, 9.0, 0.0),  # t-2
            Observable(9.0, 0.0, 9.0, 10.0, 9.0, 0.0),  # t-1
            Observable(9.0, 0.0, 9.0, 10.0, 9.0, 0.0),  # t
        ]
        raw = env.baseline_policy("optimized", rows)
        assert_allclose(raw[0], -1.0 - 0.91)
        assert_allclose(raw[1], 2.0 * 2.0 - 10.0 + 1.43)
        assert_allclose(raw[2], -3.48 * 3.0 - 4.0 + 2.0 * 10.0 + 0.81)

    def test_optimized_needs_deep_history(self):
        obs = Observable(0.0, 0.0, 0.0, 50.0, 0.0, 0.0)
        with pytest.raises(ValidationError):
            env.baseline_policy("optimized", [obs] * 5)

    def test_unknown_kind(self):
        with pytest.raises(ValidationError):
            env.baseline_policy("great", [Observable(0, 0, 0, 50, 0, 0)])


class TestEpsilonGreedy:
    def test_epsilon_zero_is_identity(self):
        rng = np.random.default_rng(0)
        base = np.array([0.1, -0.2, 0.3])
        for _ in range(100):
            assert_array_equal(env.epsilon_greedy(base, 0.0, rng), base)

    def test_epsilon_one_uniform_mean_near_zero(self):
        rng = np.random.default_rng(1)
        base = np.array([0.9, 0.9, 0.9])
        draws = np.array([env.epsilon_greedy(base, 1.0, rng) for _ in range(100_000)])
        assert not np.any(np.all(draws == base, axis=1))
        assert np.all(np.abs(draws.mean(axis=0)) < 0.02)
        assert np.all(draws >= -1.0) and np.all(draws <= 1.0)

    def test_exploration_frequency_matches_epsilon(self):
        rng = np.random.default_rng(2)
        base = np.array([5.0, 5.0, 5.0])  # never produced by the uniform draw
        n = 100_000
        explored = sum(
            not np.array_equal(env.epsilon_greedy(base, 0.2, rng), base) for _ in range(n)
        )
        assert 0.19 <= explored / n <= 0.21

    def test_epsilon_out_of_range(self):
        with pytest.raises(ValidationError):
            env.epsilon_greedy(np.zeros(3), 1.5, np.random.default_rng(0))


class TestGenerateDataset:
    def test_full_scale_episode_count(self):
        ds = env.generate_dataset("mediocre", 0.0, 100_000, episode_length=1000, seed=0, config=QUIET)
        assert ds.n_episodes == 100
        assert ds.n_transitions == 100_000

    def test_reward_identity_on_generated_data(self):
        ds = env.generate_dataset("bad", 0.3, 300, episode_length=100, seed=4, h_p=5)
        for ep in ds.episodes:
            f, c = ep.states[:, 4], ep.states[:, 5]
            assert np.all(f >= 0) and np.all(c >= 0)

    def test_mediocre_actions_replay_the_policy(self):
        ds = env.generate_dataset("mediocre", 0.0, 200, episode_length=100, seed=5, config=QUIET, h_p=5)
        for ep in ds.episodes:
            expected = np.clip(25.0 - ep.states[:-1, :3], -1.0, 1.0)
            assert_allclose(ep.actions, expected, atol=1e-6)

    def test_deterministic_under_seed(self, tmp_path):
        from wsbc import data

        a = env.generate_dataset("optimized", 0.4, 400, episode_length=100, seed=6, h_p=5)
        b = env.generate_dataset("optimized", 0.4, 400, episode_length=100, seed=6, h_p=5)
        pa, pb = tmp_path / "a.wsbc", tmp_path / "b.wsbc"
        data.save_dataset(a, pa)
        data.save_dataset(b, pb)
        assert pa.read_bytes() == pb.read_bytes()

    def test_remainder_becomes_short_final_episode(self):
        ds = env.generate_dataset("mediocre", 0.0, 250, episode_length=100, seed=0, h_p=5)
        assert [ep.length for ep in ds.episodes] == [100, 100, 50]

    def test_too_short_remainder_rejected(self):
        with pytest.raises(ValidationError):
            env.generate_dataset("mediocre", 0.0, 103, episode_length=100, seed=0, h_p=5)

    def test_parameter_validation(self):
        with pytest.raises(ValidationError):
            env.generate_dataset("mediocre", 1.5, 200, episode_length=100, seed=0)
        with pytest.raises(ValidationError):
            env.generate_dataset("mediocre", 0.0, 50, episode_length=100, seed=0)
        with pytest.raises(ValidationError):
            env.generate_dataset("mediocre", 0.0, 200, episode_length=6, seed=0, h_p=5)

    def test_metadata_records_generation(self):
        ds = env.generate_dataset("bad", 0.8, 200, episode_length=100, seed=9, h_p=5)
        md = ds.metadata
        assert md["kind"] == "bad" and md["epsilon"] == 0.8 and md["seed"] == 9
        assert md["h_p"] == 5 and "env" in md
