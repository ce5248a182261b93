"""Recurrent transition-model ensemble: overshooting training and rollouts.

A model is a single saturating recurrent cell plus a linear head, operating
on z-scored states and actions. Training minimizes the overshooting loss:
the model warms its hidden state up on h_p dataset steps, then predicts h_f
steps from its own state predictions (actions still from the data).

Rollouts swap the dataset actions for a policy: each ensemble member
carries its own hidden state and predicted trajectory, the policy acts on
each member's own predicted history, and the per-step reward is the
minimum over members (a conservative return estimate). A variant that
propagates the single worst-member prediction is available via ``mode``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .data import Dataset, HistoryWindow, gather_segments, segment_index_grid
from .env import CONSUMPTION_INDEX, FATIGUE_INDEX
from .exceptions import NumericError, ValidationError


@dataclass(frozen=True)
class OvershootConfig:
    """Horizons for training (h_f defaults to 50) and rollouts (use h_f=100)."""

    h_p: int = 30
    h_f: int = 50
    gamma: float = 0.97

    def __post_init__(self):
        if self.h_p < 0 or self.h_f < 1:
            raise ValidationError(f"invalid horizons h_p={self.h_p}, h_f={self.h_f}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValidationError(f"gamma {self.gamma} outside (0, 1]")

    def to_dict(self) -> dict:
        return {"h_p": self.h_p, "h_f": self.h_f, "gamma": self.gamma}


@dataclass
class Normalization:
    """Per-feature z-score constants shared by every ensemble member."""

    state_mean: np.ndarray
    state_scale: np.ndarray
    action_mean: np.ndarray
    action_scale: np.ndarray

    def __post_init__(self):
        for name in ("state_mean", "state_scale", "action_mean", "action_scale"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.state_scale <= 0.0) or np.any(self.action_scale <= 0.0):
            raise ValidationError("normalization scales must be strictly positive")

    @classmethod
    def identity(cls, state_dim: int, action_dim: int) -> "Normalization":
        return cls(np.zeros(state_dim), np.ones(state_dim), np.zeros(action_dim), np.ones(action_dim))

    @classmethod
    def from_dataset(cls, dataset: Dataset) -> "Normalization":
        states = np.concatenate([np.asarray(ep.states, dtype=float) for ep in dataset.episodes])
        actions = np.concatenate([np.asarray(ep.actions, dtype=float) for ep in dataset.episodes])
        s_std = states.std(axis=0)
        a_std = actions.std(axis=0)
        return cls(
            states.mean(axis=0),
            np.where(s_std < 1e-6, 1.0, s_std),
            actions.mean(axis=0),
            np.where(a_std < 1e-6, 1.0, a_std),
        )

    def norm_states(self, s: np.ndarray) -> np.ndarray:
        return (s - self.state_mean) / self.state_scale

    def denorm_states(self, s: np.ndarray) -> np.ndarray:
        return s * self.state_scale + self.state_mean

    def norm_actions(self, a: np.ndarray) -> np.ndarray:
        return (a - self.action_mean) / self.action_scale

    def to_dict(self) -> dict:
        return {
            "state_mean": self.state_mean.tolist(),
            "state_scale": self.state_scale.tolist(),
            "action_mean": self.action_mean.tolist(),
            "action_scale": self.action_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Normalization":
        return cls(d["state_mean"], d["state_scale"], d["action_mean"], d["action_scale"])


@dataclass
class TrainingRecord:
    seed: int
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    train_loss: float


@dataclass
class DynamicsModel:
    """One transition model: recurrent cell, linear state head, normalization."""

    recurrent: nn.RecurrentParams
    head: nn.DenseParams
    normalization: Normalization
    record: TrainingRecord | None = None

    @property
    def state_dim(self) -> int:
        return self.head.n_out

    @property
    def action_dim(self) -> int:
        return self.recurrent.input_size - self.state_dim

    @property
    def hidden_size(self) -> int:
        return self.recurrent.hidden_size

    def flat(self) -> np.ndarray:
        return nn.flatten_rnn(self.recurrent, self.head)

    def validate(self) -> None:
        self.recurrent.validate()
        self.head.validate()
        if self.action_dim < 1:
            raise ValidationError("cell input size must exceed the state dimension")


def model_from_flat(flat: np.ndarray, hidden: int, state_dim: int, action_dim: int,
                    normalization: Normalization, record: TrainingRecord | None = None) -> DynamicsModel:
    rec, head = nn.unflatten_rnn(flat, hidden, state_dim + action_dim, state_dim)
    return DynamicsModel(rec, head, normalization, record)


@dataclass
class Ensemble:
    """K independently trained models sharing dimensions and normalization."""

    members: list
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValidationError("ensemble needs at least one member")
        dims = {(m.state_dim, m.action_dim, m.hidden_size) for m in self.members}
        if len(dims) != 1:
            raise ValidationError(f"ensemble members disagree on dimensions: {sorted(dims)}")

    @property
    def k(self) -> int:
        return len(self.members)

    @property
    def state_dim(self) -> int:
        return self.members[0].state_dim

    @property
    def normalization(self) -> Normalization:
        return self.members[0].normalization


# ---------------------------------------------------------------------------
# Loss / warm-up


def _segment_arrays(segment) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(segment, tuple):
        states, actions = segment
    else:
        states, actions = segment.states, segment.actions
    return np.asarray(states, dtype=float), np.asarray(actions, dtype=float)


def overshoot_loss(model: DynamicsModel, segment, cfg: OvershootConfig) -> float:
    """Overshooting loss of one raw segment, computed in normalized space."""
    states, actions = _segment_arrays(segment)
    return nn.overshoot_loss_raw(
        model.recurrent,
        model.head,
        model.normalization.norm_states(states),
        model.normalization.norm_actions(actions),
        cfg.h_p,
        cfg.h_f,
    )


def model_gradient(model: DynamicsModel, segment, cfg: OvershootConfig) -> tuple[float, np.ndarray]:
    """Overshooting loss and its flat-parameter gradient for one raw
    segment (or batch), normalization applied first."""
    states, actions = _segment_arrays(segment)
    return nn.bptt_gradient(
        model.recurrent,
        model.head,
        model.normalization.norm_states(states),
        model.normalization.norm_actions(actions),
        cfg.h_p,
        cfg.h_f,
    )


def warmup_hidden(model: DynamicsModel, window: HistoryWindow) -> np.ndarray:
    """Hidden state after feeding the window's (state, action) pairs from zero."""
    states = model.normalization.norm_states(window.states)
    actions = model.normalization.norm_actions(window.actions)
    h = np.zeros(model.hidden_size)
    for j in range(window.h_p):
        x = np.concatenate([states[j], actions[j]])
        h = np.tanh(model.recurrent.input_weights @ x + model.recurrent.recurrent_weights @ h + model.recurrent.bias)
    return h


def _warmup_hidden_batch(model: DynamicsModel, win_states: np.ndarray, win_actions: np.ndarray) -> np.ndarray:
    """Warm-up over stacked windows: (S, h_p+1, D)/(S, h_p, A) -> (S, hidden)."""
    s = model.normalization.norm_states(win_states)
    a = model.normalization.norm_actions(win_actions)
    h = np.zeros((win_states.shape[0], model.hidden_size))
    for j in range(win_actions.shape[1]):
        x = np.concatenate([s[:, j], a[:, j]], axis=1)
        h = np.tanh(x @ model.recurrent.input_weights.T + h @ model.recurrent.recurrent_weights.T + model.recurrent.bias)
    return h


def predict_open_loop(model: DynamicsModel, window: HistoryWindow, actions: np.ndarray) -> np.ndarray:
    """Warm up on the window, then predict len(actions) steps from the
    model's own state predictions with the given raw actions. Returns the
    predicted raw states, shape (len(actions), state_dim)."""
    actions = np.asarray(actions, dtype=float)
    h = warmup_hidden(model, window)
    state = np.asarray(window.states[-1], dtype=float)
    out = np.empty((actions.shape[0], model.state_dim))
    for j in range(actions.shape[0]):
        x = np.concatenate(
            [model.normalization.norm_states(state), model.normalization.norm_actions(actions[j])]
        )
        pred, h = nn.recurrent_step(model.recurrent, model.head, x, h)
        state = model.normalization.denorm_states(pred)
        out[j] = state
    return out


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    hidden: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 20
    max_val_segments: int = 512


def _validation_loss(flat, hidden, state_dim, action_dim, states, actions, cfg) -> float:
    rec, head = nn.unflatten_rnn(flat, hidden, state_dim + action_dim, state_dim)
    total, count = 0.0, 0
    for start in range(0, states.shape[0], 256):
        chunk = slice(start, start + 256)
        n = states[chunk].shape[0]
        total += nn.overshoot_loss_raw(rec, head, states[chunk], actions[chunk], cfg.h_p, cfg.h_f) * n
        count += n
    return total / count


def train_model(
    train: Dataset,
    val: Dataset,
    cfg: OvershootConfig,
    train_cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
    normalization: Normalization | None = None,
) -> DynamicsModel:
    """Minibatch-Adam overshooting training with early stopping.

    Stops once the validation loss has not improved for ``patience`` epochs
    and returns the best-on-validation snapshot. Fully deterministic under
    ``seed`` (initialization and batch order).
    """
    norm = normalization or Normalization.from_dataset(train)
    state_dim, action_dim = train.state_dim, train.action_dim
    seg_len = cfg.h_p + cfg.h_f + 1
    grid = segment_index_grid(train, seg_len)
    if not grid:
        raise ValidationError(f"no training episode is long enough for {seg_len}-state segments")
    val_grid = segment_index_grid(val, seg_len)
    if not val_grid:
        raise ValidationError(f"no validation episode is long enough for {seg_len}-state segments")

    rng = np.random.default_rng(seed)
    if len(val_grid) > train_cfg.max_val_segments:
        picks = rng.choice(len(val_grid), size=train_cfg.max_val_segments, replace=False)
        val_grid = [val_grid[i] for i in sorted(picks)]
    val_states, val_actions = gather_segments(val, val_grid, seg_len)
    val_states = norm.norm_states(val_states)
    val_actions = norm.norm_actions(val_actions)

    flat = nn.init_rnn(train_cfg.hidden, state_dim + action_dim, state_dim, rng)
    adam = nn.adam_init(flat.size, learning_rate=train_cfg.learning_rate)

    best = (np.inf, flat.copy(), 0)
    last_train_loss = np.inf
    stall = 0
    for epoch in range(1, train_cfg.max_epochs + 1):
        order = rng.permutation(len(grid))
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, len(order), train_cfg.batch_size):
            batch_idx = [grid[i] for i in order[start : start + train_cfg.batch_size]]
            states, actions = gather_segments(train, batch_idx, seg_len)
            rec, head = nn.unflatten_rnn(flat, train_cfg.hidden, state_dim + action_dim, state_dim)
            loss, grad = nn.bptt_gradient(
                rec, head, norm.norm_states(states), norm.norm_actions(actions), cfg.h_p, cfg.h_f
            )
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}, batch {n_batches}")
            flat, adam = nn.adam_step(flat, grad, adam)
            epoch_loss += loss
            n_batches += 1
        last_train_loss = epoch_loss / n_batches
        val_loss = _validation_loss(flat, train_cfg.hidden, state_dim, action_dim, val_states, val_actions, cfg)
        if not np.isfinite(val_loss):
            raise NumericError(f"validation loss became non-finite at epoch {epoch}")
        if val_loss < best[0]:
            best = (val_loss, flat.copy(), epoch)
            stall = 0
        else:
            stall += 1
            if stall >= train_cfg.patience:
                break

    record = TrainingRecord(seed, epoch, best[2], float(best[0]), float(last_train_loss))
    return model_from_flat(best[1], train_cfg.hidden, state_dim, action_dim, norm, record)


def train_ensemble(
    train: Dataset,
    val: Dataset,
    k: int,
    cfg: OvershootConfig,
    train_cfg: TrainConfig = TrainConfig(),
    base_seed: int = 0,
    workers: int = 1,
) -> Ensemble:
    """Train ``k`` members with seeds base_seed..base_seed+k-1 and shared
    normalization. Results are identical for any worker count."""
    if k < 1:
        raise ValidationError("ensemble size must be at least 1")
    norm = Normalization.from_dataset(train)
    seeds = [base_seed + i for i in range(k)]

    def _one(s: int) -> DynamicsModel:
        return train_model(train, val, cfg, train_cfg, seed=s, normalization=norm)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            members = list(pool.map(_one, seeds))
    else:
        members = [_one(s) for s in seeds]
    return Ensemble(members, seeds)


# ---------------------------------------------------------------------------
# Rollouts


@dataclass
class RolloutTrace:
    """Per-step record of one conservative rollout."""

    member_rewards: np.ndarray  # (h_f, k)
    rewards: np.ndarray  # (h_f,) per-step minimum
    chosen_member: np.ndarray  # (h_f,) argmin index
    states: np.ndarray  # (h_f, k, state_dim) member predictions
    policy_inputs: np.ndarray | None = None  # (h_f, k or 1, window_dim)
    policy_actions: np.ndarray | None = None  # (h_f, k or 1, action_dim)


def _member_mats(ensemble: Ensemble):
    return [
        (m.recurrent.input_weights.T, m.recurrent.recurrent_weights.T, m.recurrent.bias,
         m.head.weights.T, m.head.bias)
        for m in ensemble.members
    ]


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    """Stack equally shaped history windows into (S, h_p+1, D), (S, h_p, A)."""
    states = np.stack([np.asarray(w.states, dtype=float) for w in windows])
    actions = np.stack([np.asarray(w.actions, dtype=float) for w in windows])
    return states, actions


def ensemble_warmup(ensemble: Ensemble, win_states: np.ndarray, win_actions: np.ndarray) -> np.ndarray:
    """Per-member warm-up hidden states for stacked windows: (k, S, hidden)."""
    return np.stack([_warmup_hidden_batch(m, win_states, win_actions) for m in ensemble.members])


def rollout_batch(
    ensemble: Ensemble,
    positions: np.ndarray,
    arch: nn.PolicyArch,
    win_states: np.ndarray,
    win_actions: np.ndarray,
    cfg: OvershootConfig,
    mode: str = "independent",
    warm_hidden: np.ndarray | None = None,
    penalty_anchor: nn.PolicyWeights | None = None,
    record: bool = False,
) -> dict:
    """Conservative rollouts for many policies over many start windows.

    ``positions`` is (n_policies, n_params); returns a dict with per-policy
    per-start discounted returns ``returns`` (n, S), and, when requested,
    mean squared action deviations from ``penalty_anchor`` (``penalties``,
    shape (n,)) or trace arrays (only for a single policy and start).
    """
    if mode not in ("independent", "argmin_propagate"):
        raise ValidationError(f"unknown rollout mode {mode!r}")
    norm = ensemble.normalization
    state_dim = ensemble.state_dim
    if state_dim <= max(FATIGUE_INDEX, CONSUMPTION_INDEX):
        raise ValidationError(f"rollout reward needs fatigue/consumption fields; state dim {state_dim} too small")
    n = positions.shape[0]
    s_count, depth = win_states.shape[0], win_states.shape[1]
    k = ensemble.k
    if arch.n_inputs != depth * state_dim:
        raise ValidationError(
            f"policy expects {arch.n_inputs} inputs but windows provide {depth * state_dim}"
        )
    if warm_hidden is None:
        warm_hidden = ensemble_warmup(ensemble, win_states, win_actions)
    mats = _member_mats(ensemble)

    shared = mode == "argmin_propagate"
    # Policy history stacks: member-specific trajectories unless shared.
    if shared:
        windows = np.broadcast_to(win_states, (n, s_count, depth, state_dim)).copy()
    else:
        windows = np.broadcast_to(win_states[None, :, None], (n, s_count, k, depth, state_dim)).copy()
    hidden = np.broadcast_to(warm_hidden.transpose(1, 0, 2), (n, s_count, k, warm_hidden.shape[2])).copy()

    returns = np.zeros((n, s_count))
    penalty_sum = np.zeros(n)
    penalty_count = 0
    trace = None
    if record:
        if n != 1 or s_count != 1:
            raise ValidationError("trace recording is only supported for one policy and one start window")
        trace = {
            "member_rewards": np.empty((cfg.h_f, k)),
            "chosen": np.empty(cfg.h_f, dtype=int),
            "states": np.empty((cfg.h_f, k, state_dim)),
            "inputs": np.empty((cfg.h_f, 1 if shared else k, depth * state_dim)),
            "actions": np.empty((cfg.h_f, 1 if shared else k, arch.n_actions)),
        }

    discount = 1.0
    for step in range(cfg.h_f):
        flat_wins = windows.reshape(n, -1, depth * state_dim)
        acts = nn.policy_forward_many(positions, flat_wins, arch)
        if penalty_anchor is not None:
            ref = nn.policy_forward_batch(penalty_anchor, flat_wins.reshape(-1, depth * state_dim))
            diff = acts - ref.reshape(acts.shape)
            penalty_sum += np.einsum("nba->n", diff**2)
            penalty_count += acts.shape[1] * acts.shape[2]
        if shared:
            acts_m = acts.reshape(n, s_count, arch.n_actions)
            cur = windows[:, :, -1, :]
            x_shared = np.concatenate([norm.norm_states(cur), norm.norm_actions(acts_m)], axis=2)
        else:
            acts_m = acts.reshape(n, s_count, k, arch.n_actions)

        rewards = np.empty((n, s_count, k))
        preds = np.empty((n, s_count, k, state_dim))
        for j, (w_in_t, w_rec_t, b, w_head_t, b_head) in enumerate(mats):
            if shared:
                x = x_shared
            else:
                cur = windows[:, :, j, -1, :]
                x = np.concatenate([norm.norm_states(cur), norm.norm_actions(acts_m[:, :, j])], axis=2)
            h = np.tanh(x @ w_in_t + hidden[:, :, j] @ w_rec_t + b)
            pred = norm.denorm_states(h @ w_head_t + b_head)
            if not np.all(np.isfinite(pred)):
                raise NumericError(f"member {j} produced a non-finite prediction at rollout step {step}")
            hidden[:, :, j] = h
            preds[:, :, j] = pred
            rewards[:, :, j] = -pred[..., CONSUMPTION_INDEX] - 3.0 * pred[..., FATIGUE_INDEX]
            if not shared:
                windows[:, :, j, :-1] = windows[:, :, j, 1:]
                windows[:, :, j, -1] = pred

        step_reward = rewards.min(axis=2)
        if shared:
            kstar = rewards.argmin(axis=2)
            chosen = np.take_along_axis(preds, kstar[..., None, None], axis=2)[:, :, 0, :]
            windows[:, :, :-1] = windows[:, :, 1:]
            windows[:, :, -1] = chosen
        returns += discount * step_reward
        discount *= cfg.gamma

        if trace is not None:
            trace["member_rewards"][step] = rewards[0, 0]
            trace["chosen"][step] = int(rewards[0, 0].argmin())
            trace["states"][step] = preds[0, 0]
            trace["inputs"][step] = flat_wins[0]
            trace["actions"][step] = acts[0]

    out = {"returns": returns}
    if penalty_anchor is not None:
        out["penalties"] = penalty_sum / max(penalty_count, 1)
    if trace is not None:
        out["trace"] = RolloutTrace(
            member_rewards=trace["member_rewards"],
            rewards=trace["member_rewards"].min(axis=1),
            chosen_member=trace["chosen"],
            states=trace["states"],
            policy_inputs=trace["inputs"],
            policy_actions=trace["actions"],
        )
    return out


def rollout_conservative(
    ensemble: Ensemble,
    theta: nn.PolicyWeights,
    start: HistoryWindow,
    cfg: OvershootConfig,
    mode: str = "independent",
) -> tuple[float, RolloutTrace]:
    """Discounted conservative return of one policy from one start window.

    Discounting starts at exponent 0 on the first predicted step; the
    per-step reward is the minimum over members of -c - 3f read from each
    member's predicted state.
    """
    win_states, win_actions = stack_windows([start])
    out = rollout_batch(
        ensemble, theta.flat[None], theta.arch, win_states, win_actions, cfg, mode=mode, record=True
    )
    return float(out["returns"][0, 0]), out["trace"]


def rollout_single(model: DynamicsModel, theta: nn.PolicyWeights, start: HistoryWindow,
                   cfg: OvershootConfig) -> float:
    """Plain single-model rollout return, written as a direct step loop.

    Structurally independent of the ensemble engine (no minimum, no trace,
    no member bookkeeping) so the two paths can check each other bit for
    bit; operands keep the engine's array shapes so both routes hit the
    same float kernels.
    """
    norm = model.normalization
    state_dim = model.state_dim
    if state_dim <= max(FATIGUE_INDEX, CONSUMPTION_INDEX):
        raise ValidationError(f"rollout reward needs fatigue/consumption fields; state dim {state_dim} too small")
    w_in_t = model.recurrent.input_weights.T
    w_rec_t = model.recurrent.recurrent_weights.T
    w_head_t = model.head.weights.T

    win_states = np.asarray(start.states, dtype=float)
    win_actions = np.asarray(start.actions, dtype=float)
    hidden = _warmup_hidden_batch(model, win_states[None], win_actions[None])[None]

    window = win_states[None, None, :, :].copy()
    depth = win_states.shape[0]
    total, discount = 0.0, 1.0
    for step in range(cfg.h_f):
        action = nn.policy_forward_many(theta.flat[None], window.reshape(1, 1, depth * state_dim), theta.arch)
        x = np.concatenate([norm.norm_states(window[:, :, -1, :]), norm.norm_actions(action)], axis=2)
        hidden = np.tanh(x @ w_in_t + hidden @ w_rec_t + model.recurrent.bias)
        pred = norm.denorm_states(hidden @ w_head_t + model.head.bias)
        if not np.all(np.isfinite(pred)):
            raise NumericError(f"non-finite prediction at rollout step {step}")
        total += discount * (-pred[0, 0, CONSUMPTION_INDEX] - 3.0 * pred[0, 0, FATIGUE_INDEX])
        discount *= cfg.gamma
        window[:, :, :-1] = window[:, :, 1:]
        window[:, :, -1] = pred
    return float(total)


# ---------------------------------------------------------------------------
# Model / ensemble files


def save_model(model: DynamicsModel, path) -> None:
    path = Path(path)
    nn.save_weights(path, model.flat())
    meta = {
        "hidden": model.hidden_size,
        "state_dim": model.state_dim,
        "action_dim": model.action_dim,
        "normalization": model.normalization.to_dict(),
    }
    if model.record is not None:
        meta["training"] = {
            "seed": model.record.seed,
            "epochs_run": model.record.epochs_run,
            "best_epoch": model.record.best_epoch,
            "best_val_loss": model.record.best_val_loss,
            "train_loss": model.record.train_loss,
        }
    with open(path.with_name(path.name + ".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> DynamicsModel:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        raise ValidationError(f"{path}: missing model sidecar {sidecar.name}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    flat = nn.load_weights(path)
    record = None
    if "training" in meta:
        t = meta["training"]
        record = TrainingRecord(t["seed"], t["epochs_run"], t["best_epoch"], t["best_val_loss"], t["train_loss"])
    return model_from_flat(
        flat,
        int(meta["hidden"]),
        int(meta["state_dim"]),
        int(meta["action_dim"]),
        Normalization.from_dict(meta["normalization"]),
        record,
    )


def save_ensemble(ensemble: Ensemble, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, member in enumerate(ensemble.members):
        name = f"member_{i:02d}.wsbw"
        save_model(member, directory / name)
        names.append(name)
    manifest = {
        "k": ensemble.k,
        "members": names,
        "seeds": list(ensemble.seeds),
        "state_dim": ensemble.state_dim,
        "action_dim": ensemble.members[0].action_dim,
        "hidden": ensemble.members[0].hidden_size,
    }
    with open(directory / "ensemble.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ensemble(directory) -> Ensemble:
    directory = Path(directory)
    manifest_path = directory / "ensemble.json"
    if not manifest_path.exists():
        raise ValidationError(f"{directory}: not an ensemble directory (no ensemble.json)")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    members = [load_model(directory / name) for name in manifest["members"]]
    return Ensemble(members, list(manifest.get("seeds", [])))
