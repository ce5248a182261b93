"""Dataset container, history windows, splitting, and (de)serialization.

The binary dataset format: a 28-byte little-endian header
``{magic "WSBC", version u16, state_dim u16, action_dim u16, h_p u16,
transition_count u64, episode_count u64}``, followed per episode by its
length as u32 and then ``length`` rows of f32 (state, action) pairs plus
one terminal state. A JSON sidecar at ``<path>.json`` carries generation
metadata.
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ValidationError

DATASET_MAGIC = b"WSBC"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sHHHHQQ")


@dataclass
class Trajectory:
    """One episode: L transitions as (L+1, state_dim) states and (L, action_dim) actions."""

    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.float32)
        if self.states.ndim != 2 or self.actions.ndim != 2:
            raise ValidationError("trajectory arrays must be 2-D")
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ValidationError(
                f"trajectory needs one more state than actions: {self.states.shape[0]} vs {self.actions.shape[0]}"
            )

    @property
    def length(self) -> int:
        """Number of transitions."""
        return self.actions.shape[0]


@dataclass
class Dataset:
    """Trajectory-ordered transitions with episode boundaries and metadata."""

    episodes: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.episodes:
            raise ValidationError("dataset needs at least one episode")
        dims = {(ep.states.shape[1], ep.actions.shape[1]) for ep in self.episodes}
        if len(dims) != 1:
            raise ValidationError(f"episodes disagree on dimensions: {sorted(dims)}")

    @property
    def state_dim(self) -> int:
        return self.episodes[0].states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.episodes[0].actions.shape[1]

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def n_transitions(self) -> int:
        return sum(ep.length for ep in self.episodes)

    @property
    def h_p(self) -> int:
        return int(self.metadata.get("h_p", 30))

    def validate(self, h_p: int | None = None) -> None:
        """Check the windowing contract: every episode long enough for
        warm-up plus one transition, all values finite."""
        h_p = self.h_p if h_p is None else h_p
        for e, ep in enumerate(self.episodes):
            if ep.length < h_p + 2:
                raise ValidationError(
                    f"episode {e} has {ep.length} transitions, below the h_p + 2 = {h_p + 2} minimum"
                )
            if not (np.all(np.isfinite(ep.states)) and np.all(np.isfinite(ep.actions))):
                raise ValidationError(f"episode {e} contains non-finite values")


@dataclass
class HistoryWindow:
    """The policy/model input: h_p+1 consecutive states (oldest first) and
    the h_p actions taken between them."""

    states: np.ndarray  # (h_p+1, state_dim)
    actions: np.ndarray  # (h_p, action_dim)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        self.actions = np.asarray(self.actions, dtype=float)
        if self.states.shape[0] != self.actions.shape[0] + 1:
            raise ValidationError("window needs exactly one more state than actions")

    @property
    def h_p(self) -> int:
        return self.actions.shape[0]

    def flat_states(self) -> np.ndarray:
        """States flattened oldest step first, fields in observable order."""
        return self.states.ravel()


def extract_window(dataset: Dataset, episode: int, t: int, h_p: int) -> HistoryWindow:
    """Window ending at state index ``t`` of one episode.

    ``t`` must leave a next transition inside the episode (t <= length - 1)
    and a full history behind it (t >= h_p); there is no padding, so windows
    never span episode boundaries.
    """
    ep = dataset.episodes[episode]
    if t < h_p:
        raise ValidationError(f"window end t={t} has no {h_p}-step history (first valid t is {h_p})")
    if t > ep.length - 1:
        raise ValidationError(f"window end t={t} exceeds the episode's last transition index {ep.length - 1}")
    return HistoryWindow(ep.states[t - h_p : t + 1], ep.actions[t - h_p : t])


def window_index_grid(dataset: Dataset, h_p: int) -> list[tuple[int, int]]:
    """All valid (episode, t) window anchors; one per transition past warm-up."""
    grid = []
    for e, ep in enumerate(dataset.episodes):
        grid.extend((e, t) for t in range(h_p, ep.length))
    return grid


def window_matrix(dataset: Dataset, h_p: int) -> tuple[np.ndarray, np.ndarray]:
    """All valid windows as a dense regression problem.

    Returns flattened window inputs (n, (h_p+1)*state_dim) and the action
    taken at each window end (n, action_dim), both float64.
    """
    xs, ys = [], []
    width = (h_p + 1) * dataset.state_dim
    for ep in dataset.episodes:
        states = np.asarray(ep.states, dtype=float)
        n = ep.length - h_p
        if n <= 0:
            continue
        idx = np.arange(n)[:, None] + np.arange(h_p + 1)[None, :]
        xs.append(states[idx].reshape(n, width))
        ys.append(np.asarray(ep.actions[h_p:], dtype=float))
    if not xs:
        raise ValidationError(f"no episode is long enough for h_p={h_p} windows")
    return np.concatenate(xs), np.concatenate(ys)


def sample_windows(dataset: Dataset, n: int, h_p: int, rng: np.random.Generator) -> list[HistoryWindow]:
    """Draw ``n`` window anchors uniformly (with replacement) over the grid."""
    grid = window_index_grid(dataset, h_p)
    if not grid:
        raise ValidationError(f"no episode is long enough for h_p={h_p} windows")
    picks = rng.integers(0, len(grid), size=n)
    return [extract_window(dataset, *grid[i], h_p) for i in picks]


def segment_index_grid(dataset: Dataset, n_states: int) -> list[tuple[int, int]]:
    """All (episode, start) pairs where ``n_states`` consecutive states fit."""
    grid = []
    for e, ep in enumerate(dataset.episodes):
        grid.extend((e, s) for s in range(ep.length + 1 - n_states + 1))
    return grid


def gather_segments(dataset: Dataset, indices, n_states: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack segments into (batch, n_states, state_dim) / (batch, n_states-1, action_dim)."""
    states = np.empty((len(indices), n_states, dataset.state_dim))
    actions = np.empty((len(indices), n_states - 1, dataset.action_dim))
    for i, (e, s) in enumerate(indices):
        ep = dataset.episodes[e]
        states[i] = ep.states[s : s + n_states]
        actions[i] = ep.actions[s : s + n_states - 1]
    return states, actions


def split(dataset: Dataset, validation_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Episode-granular train/validation split, reproducible under ``seed``.

    The validation side gets floor(fraction * episodes), at least 1; the
    union of both sides is the whole dataset.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ValidationError(f"validation fraction {validation_fraction} outside (0, 1)")
    n = dataset.n_episodes
    if n < 2:
        raise ValidationError("need at least 2 episodes to split")
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, int(validation_fraction * n)), n - 1)
    val_idx = sorted(order[:n_val].tolist())
    train_idx = sorted(order[n_val:].tolist())
    meta = dict(dataset.metadata)
    train = Dataset([dataset.episodes[i] for i in train_idx], {**meta, "split": "train"})
    val = Dataset([dataset.episodes[i] for i in val_idx], {**meta, "split": "val"})
    return train, val


# ---------------------------------------------------------------------------
# Serialization


def save_dataset(dataset: Dataset, path) -> None:
    """Write the binary file and its JSON metadata sidecar."""
    path = Path(path)
    dataset.validate()
    h_p = dataset.h_p
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                DATASET_MAGIC,
                DATASET_VERSION,
                dataset.state_dim,
                dataset.action_dim,
                h_p,
                dataset.n_transitions,
                dataset.n_episodes,
            )
        )
        for ep in dataset.episodes:
            fh.write(struct.pack("<I", ep.length))
            rows = np.concatenate([ep.states[:-1], ep.actions], axis=1).astype("<f4")
            fh.write(rows.tobytes())
            fh.write(ep.states[-1].astype("<f4").tobytes())
    sidecar = path.with_name(path.name + ".json")
    with open(sidecar, "w") as fh:
        json.dump(dataset.metadata, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ValidationError(f"{path}: not a WSBC dataset (file shorter than header)")
    magic, version, state_dim, action_dim, h_p, n_transitions, n_episodes = _HEADER.unpack_from(blob)
    if magic != DATASET_MAGIC:
        raise ValidationError(f"{path}: not a WSBC dataset (magic {magic!r})")
    if version != DATASET_VERSION:
        raise ValidationError(f"{path}: unsupported dataset version {version}")
    offset = _HEADER.size
    row = state_dim + action_dim
    episodes = []
    for k in range(n_episodes):
        if offset + 4 > len(blob):
            raise ValidationError(f"{path}: unexpected end of payload at episode {k}")
        (length,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        n_floats = length * row + state_dim
        end = offset + 4 * n_floats
        if end > len(blob):
            raise ValidationError(f"{path}: unexpected end of payload at episode {k}")
        flat = np.frombuffer(blob, dtype="<f4", count=n_floats, offset=offset)
        offset = end
        rows = flat[: length * row].reshape(length, row)
        states = np.concatenate([rows[:, :state_dim], flat[length * row :][None, :]], axis=0)
        episodes.append(Trajectory(states.copy(), rows[:, state_dim:].copy()))
    if offset != len(blob):
        raise ValidationError(f"{path}: {len(blob) - offset} trailing bytes after the last episode")
    total = sum(ep.length for ep in episodes)
    if total != n_transitions:
        raise ValidationError(f"{path}: header promises {n_transitions} transitions, payload has {total}")

    sidecar = path.with_name(path.name + ".json")
    metadata = {}
    if sidecar.exists():
        with open(sidecar) as fh:
            metadata = json.load(fh)
    metadata.setdefault("h_p", h_p)
    return Dataset(episodes, metadata)


def export_csv(dataset: Dataset, path) -> None:
    """One row per transition: episode, step, state, action, next state."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        s_cols = [f"s_{i}" for i in range(dataset.state_dim)]
        a_cols = [f"a_{i}" for i in range(dataset.action_dim)]
        ns_cols = [f"next_s_{i}" for i in range(dataset.state_dim)]
        writer.writerow(["episode", "step"] + s_cols + a_cols + ns_cols)
        for e, ep in enumerate(dataset.episodes):
            for t in range(ep.length):
                writer.writerow(
                    [e, t]
                    + [repr(float(x)) for x in ep.states[t]]
                    + [repr(float(x)) for x in ep.actions[t]]
                    + [repr(float(x)) for x in ep.states[t + 1]]
                )
