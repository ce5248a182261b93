"""MiniIB: a small surrogate plant with the industrial-benchmark interface.

Observable state per step: three steerings (velocity v, gain g, shift h) in
[0, 100], a fixed setpoint p, and two cost signals, fatigue f and
consumption c. Actions are per-step steering deltas in [-1, 1]^3, applied
at 10x scale and clipped. Reward is -c - 3f.

Hidden dynamics: an exponential moving average of effort (v+g)/200 drives
fatigue with noise that grows with the shift h; consumption reacts to the
steerings five steps late, trading the |v - p| tracking error off against
fatigue. Both cost signals are floored at zero.

Also provides the three scripted data-collection policies (bad, mediocre,
optimized), epsilon-greedy exploration, and seeded dataset generation.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import NumericError, ValidationError

STATE_FIELDS = ("v", "g", "h", "p", "f", "c")
STATE_DIM = 6
ACTION_DIM = 3
FATIGUE_INDEX = 4
CONSUMPTION_INDEX = 5
BASELINE_KINDS = ("bad", "mediocre", "optimized")


def reward_from_costs(fatigue: float, consumption: float) -> float:
    """Plant reward: -consumption - 3 * fatigue."""
    return -consumption - 3.0 * fatigue


@dataclass(frozen=True)
class Observable:
    """One step's visible state, field order (v, g, h, p, f, c)."""

    v: float
    g: float
    h: float
    p: float
    f: float
    c: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.g, self.h, self.p, self.f, self.c], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Observable":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (STATE_DIM,):
            raise ValidationError(f"observable array must have {STATE_DIM} entries, got {arr.shape}")
        return cls(*(float(x) for x in arr))


@dataclass(frozen=True)
class Action:
    """Steering deltas; each component is clipped to [-1, 1] before stepping."""

    dv: float
    dg: float
    dh: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dv, self.dg, self.dh], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "Action":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (ACTION_DIM,):
            raise ValidationError(f"action array must have {ACTION_DIM} entries, got {arr.shape}")
        return cls(*(float(x) for x in arr))


@dataclass(frozen=True)
class MiniIBConfig:
    """Plant constants. ``fatigue_noise_*`` and ``consumption_noise`` are
    normal standard deviations; set them to zero for a deterministic plant."""

    steering_scale: float = 10.0
    effort_decay: float = 0.9
    fatigue_gain: float = 5.0
    fatigue_noise_base: float = 0.1
    fatigue_noise_shift: float = 0.2
    consumption_v_coef: float = 0.5
    consumption_g_coef: float = 0.1
    consumption_noise: float = 0.5
    delay: int = 5

    def without_noise(self) -> "MiniIBConfig":
        return replace(self, fatigue_noise_base=0.0, fatigue_noise_shift=0.0, consumption_noise=0.0)

    def to_dict(self) -> dict:
        return {
            "steering_scale": self.steering_scale,
            "effort_decay": self.effort_decay,
            "fatigue_gain": self.fatigue_gain,
            "fatigue_noise_base": self.fatigue_noise_base,
            "fatigue_noise_shift": self.fatigue_noise_shift,
            "consumption_v_coef": self.consumption_v_coef,
            "consumption_g_coef": self.consumption_g_coef,
            "consumption_noise": self.consumption_noise,
            "delay": self.delay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MiniIBConfig":
        return cls(**{k: (int(v) if k == "delay" else float(v)) for k, v in d.items()})


@dataclass
class EnvState:
    """Full simulator state. The history buffer keeps the current observable
    plus ``delay`` predecessors so delayed consumption can look back."""

    observable: Observable
    effort_ema: float
    history: deque  # of Observable, newest last
    rng: np.random.Generator
    config: MiniIBConfig

    def history_arrays(self) -> np.ndarray:
        return np.stack([o.as_array() for o in self.history])


def _effort(v: float, g: float) -> float:
    return (v + g) / 200.0


def env_reset(
    seed: int,
    setpoint: float = 50.0,
    init="fixed",
    config: MiniIBConfig = MiniIBConfig(),
) -> EnvState:
    """Fresh simulator state.

    ``init`` is an :class:`Observable`, a (v, g, h) triple, ``"fixed"``
    (all steerings at 50), or ``"random"`` (steerings uniform in [0, 100]
    from the seeded stream). Initial fatigue and consumption are the
    noise-free formula values, with the history buffer filled with copies
    of the initial observable.
    """
    if not 0.0 <= setpoint <= 100.0:
        raise ValidationError(f"setpoint {setpoint} outside [0, 100]")
    rng = np.random.default_rng(seed)
    if isinstance(init, str):
        if init == "fixed":
            v0, g0, h0 = 50.0, 50.0, 50.0
        elif init == "random":
            v0, g0, h0 = rng.uniform(0.0, 100.0, 3)
        else:
            raise ValidationError(f"unknown init mode {init!r}")
    elif isinstance(init, Observable):
        v0, g0, h0 = init.v, init.g, init.h
    else:
        v0, g0, h0 = (float(x) for x in init)
    for name, s in (("v", v0), ("g", g0), ("h", h0)):
        if not 0.0 <= s <= 100.0:
            raise ValidationError(f"initial steering {name}={s} outside [0, 100]")
    effort_ema = _effort(v0, g0)
    f0 = config.fatigue_gain * effort_ema
    c0 = config.consumption_v_coef * abs(v0 - setpoint) + config.consumption_g_coef * g0
    obs = Observable(float(v0), float(g0), float(h0), float(setpoint), float(f0), float(c0))
    history = deque([obs] * (config.delay + 1), maxlen=config.delay + 1)
    return EnvState(obs, effort_ema, history, rng, config)


def env_step(state: EnvState, action: Action) -> tuple[EnvState, float]:
    """Advance the plant one step; returns the new state and its reward.

    The returned state carries the advanced random stream; the passed state
    should be treated as consumed. Per step the stream yields one fatigue
    draw and one consumption draw, in that order.
    """
    cfg = state.config
    a = action.as_array() if isinstance(action, Action) else np.asarray(action, dtype=float)
    if a.shape != (ACTION_DIM,) or not np.all(np.isfinite(a)):
        raise NumericError(f"action must be {ACTION_DIM} finite components, got {a!r}")
    a = np.clip(a, -1.0, 1.0)
    prev = state.observable
    v = float(np.clip(prev.v + cfg.steering_scale * a[0], 0.0, 100.0))
    g = float(np.clip(prev.g + cfg.steering_scale * a[1], 0.0, 100.0))
    h = float(np.clip(prev.h + cfg.steering_scale * a[2], 0.0, 100.0))

    effort_ema = cfg.effort_decay * state.effort_ema + (1.0 - cfg.effort_decay) * _effort(v, g)
    fatigue_std = cfg.fatigue_noise_base + cfg.fatigue_noise_shift * h / 100.0
    xi = state.rng.normal(0.0, 1.0)
    f = max(0.0, cfg.fatigue_gain * effort_ema * (1.0 + fatigue_std * xi))

    # history[0] is the observable delay steps back from the previous one,
    # so history[1] supplies the (delay)-lagged steerings for the new step.
    lagged = state.history[1] if len(state.history) > 1 else state.history[0]
    eta = state.rng.normal(0.0, 1.0)
    c = max(
        0.0,
        cfg.consumption_v_coef * abs(lagged.v - prev.p)
        + cfg.consumption_g_coef * lagged.g
        + cfg.consumption_noise * eta,
    )

    obs = Observable(v, g, h, prev.p, f, c)
    history = deque(state.history, maxlen=state.history.maxlen)
    history.append(obs)
    new_state = EnvState(obs, effort_ema, history, state.rng, cfg)
    return new_state, reward_from_costs(f, c)


def baseline_policy(kind: str, history) -> np.ndarray:
    """Raw (pre-clip) action of one scripted data-collection policy.

    ``history`` is a sequence of recent Observables, newest last. The bad
    and mediocre policies steer toward fixed points at 100 and 25; the
    optimized policy mixes lagged observables and the setpoint.
    """
    obs = list(history)
    if not obs:
        raise ValidationError("baseline_policy needs at least the current observable")
    cur = obs[-1]
    if kind == "bad":
        return np.array([100.0 - cur.v, 100.0 - cur.g, 100.0 - cur.h])
    if kind == "mediocre":
        return np.array([25.0 - cur.v, 25.0 - cur.g, 25.0 - cur.h])
    if kind == "optimized":
        if len(obs) < 6:
            raise ValidationError(f"optimized policy needs 6 history steps (lags 3, 4, 5), got {len(obs)}")
        lag3, lag4, lag5 = obs[-4], obs[-5], obs[-6]
        return np.array(
            [
                -lag5.v - 0.91,
                2.0 * lag3.f - cur.p + 1.43,
                -3.48 * lag3.h - lag4.h + 2.0 * cur.p + 0.81,
            ]
        )
    raise ValidationError(f"unknown baseline policy {kind!r}; choose from {BASELINE_KINDS}")


def epsilon_greedy(base_action: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """With probability epsilon replace the whole action by a uniform draw
    from [-1, 1]^3. Consumes one uniform for the coin, plus three when
    exploring."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon {epsilon} outside [0, 1]")
    base_action = np.asarray(base_action, dtype=float)
    explore = rng.random() < epsilon
    if explore:
        return rng.uniform(-1.0, 1.0, ACTION_DIM)
    return base_action


def generate_dataset(
    kind: str,
    epsilon: float,
    n_transitions: int,
    episode_length: int = 1000,
    seed: int = 0,
    setpoint: float = 50.0,
    init="random",
    h_p: int = 30,
    config: MiniIBConfig = MiniIBConfig(),
):
    """Roll the chosen baseline policy (with epsilon-greedy exploration) to
    collect a trajectory-ordered dataset of exactly ``n_transitions``.

    Episodes have ``episode_length`` transitions; a final shorter episode
    absorbs any remainder and must still be long enough for windowing.
    Per-episode seeds derive from ``seed`` so the dataset is reproducible.
    """
    from .data import Dataset, Trajectory  # local import to avoid a cycle

    if kind not in BASELINE_KINDS:
        raise ValidationError(f"unknown policy kind {kind!r}; choose from {BASELINE_KINDS}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValidationError(f"epsilon {epsilon} outside [0, 1]")
    if episode_length < h_p + 2:
        raise ValidationError(f"episode_length {episode_length} shorter than h_p + 2 = {h_p + 2}")
    if n_transitions < episode_length:
        raise ValidationError(f"n_transitions {n_transitions} smaller than episode_length {episode_length}")
    remainder = n_transitions % episode_length
    if remainder and remainder < h_p + 2:
        raise ValidationError(
            f"final episode would have {remainder} transitions, below the h_p + 2 = {h_p + 2} minimum"
        )

    lengths = [episode_length] * (n_transitions // episode_length)
    if remainder:
        lengths.append(remainder)
    seeds = np.random.SeedSequence(seed).generate_state(len(lengths), dtype=np.uint64)

    episodes = []
    for ep_seed, length in zip(seeds, lengths):
        state = env_reset(int(ep_seed), setpoint=setpoint, init=init, config=config)
        states = np.empty((length + 1, STATE_DIM), dtype=np.float32)
        actions = np.empty((length, ACTION_DIM), dtype=np.float32)
        states[0] = state.observable.as_array()
        for t in range(length):
            raw = baseline_policy(kind, state.history)
            act = np.clip(raw, -1.0, 1.0)
            act = epsilon_greedy(act, epsilon, state.rng)
            state, _ = env_step(state, Action.from_array(act))
            actions[t] = act
            states[t + 1] = state.observable.as_array()
        episodes.append(Trajectory(states, actions))

    metadata = {
        "kind": kind,
        "epsilon": epsilon,
        "n_transitions": n_transitions,
        "episode_length": episode_length,
        "seed": seed,
        "setpoint": setpoint,
        "init": init if isinstance(init, str) else list(np.asarray(init, dtype=float)),
        "h_p": h_p,
        "env": config.to_dict(),
    }
    return Dataset(episodes, metadata)
