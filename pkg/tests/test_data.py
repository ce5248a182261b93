import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from wsbc import data
from wsbc.data import Dataset, HistoryWindow, Trajectory
from wsbc.exceptions import ValidationError


def toy_dataset(episode_lengths, state_dim=6, action_dim=3, seed=0, h_p=3):
    rng = np.random.default_rng(seed)
    episodes = [
        Trajectory(rng.normal(size=(L + 1, state_dim)), rng.normal(size=(L, action_dim)))
        for L in episode_lengths
    ]
    return Dataset(episodes, {"h_p": h_p})


class TestWindows:
    def test_flattened_policy_input_length(self):
        # 30 past states plus the current one at 6 fields each
        window = HistoryWindow(np.zeros((31, 6)), np.zeros((30, 3)))
        assert window.flat_states().shape == (186,)

    def test_boundary_window_starts_at_zero(self):
        ds = toy_dataset([10])
        w = data.extract_window(ds, 0, t=3, h_p=3)
        assert_array_equal(w.states, ds.episodes[0].states[0:4].astype(float))
        assert_array_equal(w.actions, ds.episodes[0].actions[0:3].astype(float))

    def test_too_early_raises(self):
        ds = toy_dataset([10])
        with pytest.raises(ValidationError):
            data.extract_window(ds, 0, t=2, h_p=3)

    def test_past_last_transition_raises(self):
        ds = toy_dataset([10])
        with pytest.raises(ValidationError):
            data.extract_window(ds, 0, t=10, h_p=3)

    def test_extraction_is_pure(self):
        ds = toy_dataset([12])
        w1 = data.extract_window(ds, 0, 5, 3)
        w2 = data.extract_window(ds, 0, 5, 3)
        assert_array_equal(w1.states, w2.states)
        assert_array_equal(w1.actions, w2.actions)

    def test_window_count_per_episode(self):
        ds = toy_dataset([40, 25], h_p=7)
        grid = data.window_index_grid(ds, 7)
        assert len(grid) == (40 - 7) + (25 - 7)

    def test_window_matrix_flattening_order(self):
        ds = toy_dataset([9], state_dim=2, action_dim=1, h_p=2)
        xs, ys = data.window_matrix(ds, 2)
        ep = ds.episodes[0]
        assert xs.shape == (7, 6)
        # first row covers states 0..2, oldest first
        assert_array_equal(xs[0], ep.states[0:3].astype(float).ravel())
        assert_array_equal(ys[0], ep.actions[2].astype(float))

    @settings(max_examples=30, deadline=None)
    @given(
        lengths=st.lists(st.integers(min_value=5, max_value=20), min_size=1, max_size=4),
        h_p=st.integers(min_value=1, max_value=4),
    )
    def test_windows_never_cross_episode_boundaries(self, lengths, h_p):
        ds = toy_dataset(lengths, state_dim=2, action_dim=1, seed=13, h_p=h_p)
        # tag every state with its episode index in feature 0
        for e, ep in enumerate(ds.episodes):
            ep.states[:, 0] = e
        for e, t in data.window_index_grid(ds, h_p):
            w = data.extract_window(ds, e, t, h_p)
            assert np.all(w.states[:, 0] == e)
            assert w.states.shape == (h_p + 1, 2)


class TestSplit:
    def test_fraction_sizes(self):
        ds = toy_dataset([10] * 100)
        train, val = data.split(ds, 0.1, seed=0)
        assert train.n_episodes == 90
        assert val.n_episodes == 10

    def test_same_seed_same_split(self):
        ds = toy_dataset([10] * 9)
        t1, v1 = data.split(ds, 0.3, seed=5)
        t2, v2 = data.split(ds, 0.3, seed=5)
        for a, b in zip(t1.episodes + v1.episodes, t2.episodes + v2.episodes):
            assert_array_equal(a.states, b.states)

    def test_three_episode_half_split(self):
        ds = toy_dataset([10, 10, 10])
        train, val = data.split(ds, 0.5, seed=1)
        assert sorted([train.n_episodes, val.n_episodes]) == [1, 2]
        again = data.split(ds, 0.5, seed=1)
        assert_array_equal(again[1].episodes[0].states, val.episodes[0].states)

    def test_union_is_whole_dataset(self):
        ds = toy_dataset([5, 6, 7, 8, 9])
        train, val = data.split(ds, 0.4, seed=2)
        assert train.n_transitions + val.n_transitions == ds.n_transitions
        originals = {ep.states.tobytes() for ep in ds.episodes}
        recovered = {ep.states.tobytes() for ep in train.episodes + val.episodes}
        assert originals == recovered

    def test_too_few_episodes(self):
        ds = toy_dataset([10])
        with pytest.raises(ValidationError):
            data.split(ds, 0.5, seed=0)

    def test_bad_fraction(self):
        ds = toy_dataset([10, 10])
        with pytest.raises(ValidationError):
            data.split(ds, 1.0, seed=0)


class TestSerialization:
    def test_round_trip_preserves_f32_bits(self, tmp_path):
        ds = toy_dataset([8, 5], seed=3)
        ds.metadata.update({"kind": "bad", "epsilon": 0.4})
        path = tmp_path / "d.wsbc"
        data.save_dataset(ds, path)
        back = data.load_dataset(path)
        assert back.n_episodes == ds.n_episodes
        for a, b in zip(ds.episodes, back.episodes):
            assert a.states.tobytes() == b.states.tobytes()
            assert a.actions.tobytes() == b.actions.tobytes()
        assert back.metadata["kind"] == "bad"
        assert back.metadata["epsilon"] == 0.4

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "d.wsbc"
        path.write_bytes(b"XXXX" + b"\0" * 40)
        with pytest.raises(ValidationError, match="not a WSBC dataset"):
            data.load_dataset(path)

    def test_truncation_names_episode(self, tmp_path):
        ds = toy_dataset([8, 5], seed=3)
        path = tmp_path / "d.wsbc"
        data.save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-30])
        with pytest.raises(ValidationError, match="episode 1"):
            data.load_dataset(path)

    def test_save_rejects_episodes_too_short_for_windowing(self, tmp_path):
        ds = toy_dataset([4], h_p=3)
        with pytest.raises(ValidationError, match="below the h_p"):
            data.save_dataset(ds, tmp_path / "d.wsbc")

    def test_missing_sidecar_still_loads(self, tmp_path):
        ds = toy_dataset([8], h_p=2)
        path = tmp_path / "d.wsbc"
        data.save_dataset(ds, path)
        (tmp_path / "d.wsbc.json").unlink()
        back = data.load_dataset(path)
        assert back.h_p == 2  # from the binary header

    def test_csv_export(self, tmp_path):
        ds = toy_dataset([4], state_dim=2, action_dim=1)
        path = tmp_path / "d.csv"
        data.export_csv(ds, path)
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 1 + 4
        assert lines[0] == "episode,step,s_0,s_1,a_0,next_s_0,next_s_1"
        first = lines[1].split(",")
        assert first[0] == "0" and first[1] == "0"
        assert float(first[2]) == float(ds.episodes[0].states[0, 0])

    @settings(max_examples=15, deadline=None)
    @given(
        lengths=st.lists(st.integers(min_value=3, max_value=12), min_size=1, max_size=3),
        seed=st.integers(min_value=0, max_value=100),
    )
    def test_round_trip_property(self, tmp_path_factory, lengths, seed):
        ds = toy_dataset(lengths, state_dim=3, action_dim=2, seed=seed, h_p=1)
        path = tmp_path_factory.mktemp("rt") / "d.wsbc"
        data.save_dataset(ds, path)
        back = data.load_dataset(path)
        for a, b in zip(ds.episodes, back.episodes):
            assert a.states.tobytes() == b.states.tobytes()
            assert a.actions.tobytes() == b.actions.tobytes()


class TestContainers:
    def test_trajectory_length_mismatch(self):
        with pytest.raises(ValidationError):
            Trajectory(np.zeros((5, 2)), np.zeros((5, 1)))

    def test_dataset_dimension_mismatch(self):
        eps = [Trajectory(np.zeros((4, 2)), np.zeros((3, 1))), Trajectory(np.zeros((4, 3)), np.zeros((3, 1)))]
        with pytest.raises(ValidationError):
            Dataset(eps)

    def test_segment_grid_counts(self):
        ds = toy_dataset([10, 4])
        grid = data.segment_index_grid(ds, n_states=5)
        # episode with 11 states gives 7 starts, episode with 5 states gives 1
        assert len(grid) == 7 + 1
        states, actions = data.gather_segments(ds, grid[:3], 5)
        assert states.shape == (3, 5, 6)
        assert actions.shape == (3, 4, 3)
