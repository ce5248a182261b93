import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from wsbc import behavior, data, env, nn
from wsbc.behavior import BCConfig, bc_action_mse, train_bc
from wsbc.data import Dataset, Trajectory


def tiny_dataset(rows, state_dim=2, action_dim=1, h_p=1):
    """Dataset of one episode built from explicit (state, action) rows."""
    states = np.array([r[0] for r in rows] + [rows[-1][0]], dtype=float)
    actions = np.array([r[1] for r in rows], dtype=float)
    return Dataset([Trajectory(states, actions)], {"h_p": h_p})


class TestTrainBC:
    def test_clones_deterministic_mediocre_policy(self):
        ds = env.generate_dataset("mediocre", 0.0, 4000, episode_length=100, seed=2, h_p=5)
        train, val = data.split(ds, 0.2, seed=0)
        clone = train_bc(
            train, val,
            BCConfig(n_hidden=24, learning_rate=1e-2, max_epochs=1000, patience=200),
            seed=0, h_p=5,
        )
        assert clone.val_mse < 1e-3

    def test_single_repeated_pair_is_memorized(self):
        # one (window, action) pair repeated along an episode: constant
        # states, constant action
        states = np.tile([0.5, -0.25, 0.1], (41, 1))
        actions = np.tile([0.4, -0.3], (40, 1))
        ds = Dataset([Trajectory(states, actions)], {"h_p": 2})
        train = Dataset([Trajectory(states.copy(), actions.copy())], {"h_p": 2})
        clone = train_bc(train, ds, BCConfig(n_hidden=8, learning_rate=1e-2, max_epochs=400, patience=400), seed=1, h_p=2)
        window = data.extract_window(ds, 0, 2, 2)
        predicted = nn.policy_forward(clone.psi, window)
        assert_allclose(predicted, [0.4, -0.3], atol=1e-4)

    def test_same_seed_identical_clone(self):
        ds = env.generate_dataset("mediocre", 0.2, 400, episode_length=50, seed=3, h_p=3)
        train, val = data.split(ds, 0.25, seed=0)
        cfg = BCConfig(n_hidden=6, max_epochs=5, patience=3)
        c1 = train_bc(train, val, cfg, seed=7, h_p=3)
        c2 = train_bc(train, val, cfg, seed=7, h_p=3)
        assert_array_equal(c1.psi.flat, c2.psi.flat)
        assert c1.train_mse == c2.train_mse

    def test_clone_arch_matches_policy_shape(self):
        ds = env.generate_dataset("bad", 0.1, 300, episode_length=50, seed=4, h_p=3)
        train, val = data.split(ds, 0.25, seed=0)
        clone = train_bc(train, val, BCConfig(n_hidden=6, max_epochs=2, patience=2), seed=0, h_p=3)
        assert clone.psi.arch.n_inputs == (3 + 1) * 6
        assert clone.psi.arch.n_actions == 3
        assert clone.psi.flat.shape == (clone.psi.arch.param_count(),)


class TestActionMSE:
    def test_reported_train_mse_matches_standalone_evaluation(self):
        ds = env.generate_dataset("mediocre", 0.3, 400, episode_length=50, seed=5, h_p=3)
        train, val = data.split(ds, 0.25, seed=0)
        clone = train_bc(train, val, BCConfig(n_hidden=6, max_epochs=4, patience=3), seed=0, h_p=3)
        assert bc_action_mse(clone.psi, train, h_p=3) == clone.train_mse

    def test_zero_policy_on_zero_actions_is_zero(self):
        rows = [([1.0, 2.0], [0.0]), ([3.0, 1.0], [0.0]), ([0.5, 0.5], [0.0])]
        ds = tiny_dataset(rows)
        arch = nn.PolicyArch(n_inputs=4, n_hidden=3, n_actions=1)
        psi = nn.PolicyWeights(np.zeros(arch.param_count()), arch)
        assert bc_action_mse(psi, ds, h_p=1) == 0.0

    def test_hand_computed_two_transition_mse(self):
        # two valid windows; a policy with known constant output 0
        rows = [([0.0, 0.0], [0.2]), ([0.0, 0.0], [-0.4]), ([0.0, 0.0], [0.6])]
        ds = tiny_dataset(rows)
        arch = nn.PolicyArch(n_inputs=4, n_hidden=3, n_actions=1)
        psi = nn.PolicyWeights(np.zeros(arch.param_count()), arch)
        # windows end at t=1 and t=2 with targets -0.4 and 0.6 (stored as f32)
        expected = ((0.0 - -0.4) ** 2 + (0.0 - 0.6) ** 2) / 2
        assert_allclose(bc_action_mse(psi, ds, h_p=1), expected, rtol=1e-6)

    def test_permutation_invariance_over_episodes(self):
        rng = np.random.default_rng(8)
        eps = [Trajectory(rng.normal(size=(11, 2)), rng.uniform(-1, 1, (10, 1))) for _ in range(3)]
        arch = nn.PolicyArch(n_inputs=4, n_hidden=3, n_actions=1)
        psi = nn.PolicyWeights(rng.normal(size=arch.param_count()), arch)
        forward = bc_action_mse(psi, Dataset(list(eps), {"h_p": 1}), h_p=1)
        backward = bc_action_mse(psi, Dataset(list(reversed(eps)), {"h_p": 1}), h_p=1)
        assert_allclose(forward, backward, rtol=1e-15)


class TestCloneFiles:
    def test_round_trip(self, tmp_path):
        ds = env.generate_dataset("mediocre", 0.2, 300, episode_length=50, seed=6, h_p=3)
        train, val = data.split(ds, 0.25, seed=0)
        clone = train_bc(train, val, BCConfig(n_hidden=6, max_epochs=2, patience=2), seed=0, h_p=3)
        behavior.save_clone(clone, tmp_path / "psi.wsbw", extra={"dataset_sha256": "abc"})
        back = behavior.load_clone(tmp_path / "psi.wsbw")
        assert back.psi.arch == clone.psi.arch
        assert_array_equal(back.psi.flat, clone.psi.flat.astype(np.float32).astype(float))
        assert back.train_mse == clone.train_mse
