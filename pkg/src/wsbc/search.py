"""Policy search: ring-topology particle swarm over flat weight vectors.

The search maximizes the conservative model-rollout return. In the default
("pure") mode every particle is clipped, coordinate by coordinate, into a
box of radius d around the behavior clone's weights, which enforces the
behavior constraint exactly. The "penalized" mode has no box at all: the
swarm starts from standard random policy initializations and a calibrated
multiple of the mean squared action deviation from the clone is subtracted
from the fitness instead.

Randomness is derived from (seed, stream, index) tuples so results do not
depend on evaluation order or worker count: stream 0 seeds the initial
swarm, stream 1 the start-window sample, and stream 2/i the i-th update.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import Dataset, sample_windows
from .dynamics import Ensemble, OvershootConfig, ensemble_warmup, rollout_batch, stack_windows
from .exceptions import ConstraintViolation, ValidationError

_STREAM_INIT = 0
_STREAM_WINDOWS = 1
_STREAM_ITER = 2


def _derived_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, *key)))


@dataclass(frozen=True)
class SwarmConfig:
    n_particles: int = 200
    neighborhood_size: int = 30
    inertia: float = 0.729
    cognitive: float = 1.494
    social: float = 1.494
    iterations: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValidationError("need at least one particle")
        if not 1 <= self.neighborhood_size <= self.n_particles:
            raise ValidationError(
                f"neighborhood size {self.neighborhood_size} outside [1, {self.n_particles}]"
            )
        for name in ("inertia", "cognitive", "social"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite")


@dataclass(frozen=True)
class ConstraintBox:
    """Axis-aligned box: every admitted vector theta satisfies
    max_i |theta_i - anchor_i| <= radius."""

    anchor: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=float))
        if not self.radius > 0.0:
            raise ValidationError(f"box radius must be positive, got {self.radius}")

    @classmethod
    def unbounded(cls, anchor: np.ndarray) -> "ConstraintBox":
        return cls(anchor, np.inf)

    def contains(self, positions: np.ndarray) -> bool:
        positions = np.asarray(positions, dtype=float)
        if not np.isfinite(self.radius):
            return True
        return bool(np.all(np.abs(positions - self.anchor) <= self.radius))


def clip_to_box(theta: np.ndarray, box: ConstraintBox) -> np.ndarray:
    """Clamp each coordinate to [anchor - radius, anchor + radius].

    Exactly idempotent, and the result satisfies |result - anchor| <= radius
    under float arithmetic: coordinates already inside pass through
    bit-identically, and clipped ones are nudged inward by ulps when the
    rounding of anchor +- radius lands just outside.
    """
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != box.anchor.shape[0]:
        raise ValidationError(f"vector length {theta.shape[-1]} does not match anchor {box.anchor.shape[0]}")
    if not np.isfinite(box.radius):
        return theta.copy()
    dev = theta - box.anchor
    clipped = np.clip(dev, -box.radius, box.radius)
    pos = np.where(dev == clipped, theta, box.anchor + clipped)
    bad = np.abs(pos - box.anchor) > box.radius
    while np.any(bad):
        pos = np.where(bad, np.nextafter(pos, box.anchor), pos)
        bad = np.abs(pos - box.anchor) > box.radius
    return pos


def quantize_into_box(theta: np.ndarray, box: ConstraintBox) -> np.ndarray:
    """Round a vector to the float32 grid without leaving the box.

    Weight files store float32; plain rounding can push a coordinate that
    sits exactly on the box face a fraction of an ulp outside. Offending
    coordinates step toward the anchor on the float32 grid until the stored
    values satisfy the constraint again.
    """
    flat32 = np.asarray(theta, dtype=np.float32)
    if not np.isfinite(box.radius):
        return flat32.astype(float)
    anchor32 = box.anchor.astype(np.float32)
    bad = np.abs(flat32.astype(float) - box.anchor) > box.radius
    while np.any(bad):
        flat32 = np.where(bad, np.nextafter(flat32, anchor32), flat32)
        bad = np.abs(flat32.astype(float) - box.anchor) > box.radius
    return flat32.astype(float)


def ring_neighbors(index: int, n_particles: int, neighborhood_size: int) -> np.ndarray:
    """Indices of the circular window centered on ``index``, self included.

    The window spans index - floor((size-1)/2) .. index + floor(size/2), so
    even sizes carry one extra neighbor above. With size == n_particles every
    particle neighbors all others.
    """
    if not 1 <= neighborhood_size <= n_particles:
        raise ValidationError(
            f"neighborhood size {neighborhood_size} outside [1, {n_particles}]"
        )
    below = (neighborhood_size - 1) // 2
    above = neighborhood_size // 2
    return (np.arange(index - below, index + above + 1)) % n_particles


_NEIGHBOR_CACHE: dict = {}


def _neighbor_matrix(cfg: SwarmConfig) -> np.ndarray:
    key = (cfg.n_particles, cfg.neighborhood_size)
    if key not in _NEIGHBOR_CACHE:
        _NEIGHBOR_CACHE[key] = np.stack(
            [ring_neighbors(i, cfg.n_particles, cfg.neighborhood_size) for i in range(cfg.n_particles)]
        )
    return _NEIGHBOR_CACHE[key]


@dataclass
class SwarmState:
    """Struct-of-arrays swarm: row n is particle n."""

    positions: np.ndarray  # (n, p)
    velocities: np.ndarray  # (n, p)
    best_positions: np.ndarray  # (n, p)
    best_fitness: np.ndarray  # (n,)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]


def init_swarm(
    anchor: np.ndarray,
    radius: float,
    cfg: SwarmConfig,
    rng: np.random.Generator,
    include_anchor: bool = True,
) -> SwarmState:
    """Positions uniform in the box around ``anchor``; particle 0 sits
    exactly at the anchor so the unchanged clone is always a candidate.
    Velocities start uniform in [-radius/2, radius/2] per coordinate."""
    if not (np.isfinite(radius) and radius > 0.0):
        raise ValidationError(f"initialization radius must be positive and finite, got {radius}")
    anchor = np.asarray(anchor, dtype=float)
    n, p = cfg.n_particles, anchor.shape[0]
    positions = clip_to_box(anchor + rng.uniform(-radius, radius, (n, p)), ConstraintBox(anchor, radius))
    if include_anchor:
        positions[0] = anchor
    velocities = rng.uniform(-radius / 2.0, radius / 2.0, (n, p))
    return SwarmState(
        positions=positions,
        velocities=velocities,
        best_positions=positions.copy(),
        best_fitness=np.full(n, -np.inf),
    )


def init_swarm_random(arch: nn.PolicyArch, cfg: SwarmConfig, rng: np.random.Generator) -> SwarmState:
    """Swarm of independently initialized policies (no anchor).

    Used by the penalized search mode, which has no weight-space reference
    point: each particle is a fresh standard policy initialization, with
    velocities on the same scale as the init bounds."""
    positions = np.stack([nn.init_policy(arch, rng) for _ in range(cfg.n_particles)])
    scale = np.sqrt(6.0 / (arch.n_inputs + arch.n_hidden))
    velocities = rng.uniform(-scale / 2.0, scale / 2.0, positions.shape)
    return SwarmState(
        positions=positions,
        velocities=velocities,
        best_positions=positions.copy(),
        best_fitness=np.full(cfg.n_particles, -np.inf),
    )


def pso_step(
    swarm: SwarmState,
    fitnesses: np.ndarray,
    box: ConstraintBox,
    cfg: SwarmConfig,
    rng,
) -> SwarmState:
    """One swarm update (maximization).

    Personal and ring-neighborhood bests absorb the supplied fitnesses of
    the current positions; velocities then combine inertia with cognitive
    and social pulls under fresh per-coordinate uniforms, positions move by
    the new velocity, and any coordinate that gets clipped back into the
    box has its velocity zeroed.
    """
    fitnesses = np.asarray(fitnesses, dtype=float)
    if fitnesses.shape != (swarm.n_particles,):
        raise ValidationError(f"fitness list shape {fitnesses.shape} does not match swarm size {swarm.n_particles}")
    improved = fitnesses > swarm.best_fitness
    best_positions = np.where(improved[:, None], swarm.positions, swarm.best_positions)
    best_fitness = np.where(improved, fitnesses, swarm.best_fitness)

    nb = _neighbor_matrix(cfg)
    nb_best = nb[np.arange(swarm.n_particles), best_fitness[nb].argmax(axis=1)]
    nb_positions = best_positions[nb_best]

    r1, r2 = rng.random((2, *swarm.positions.shape))
    velocities = (
        cfg.inertia * swarm.velocities
        + cfg.cognitive * r1 * (best_positions - swarm.positions)
        + cfg.social * r2 * (nb_positions - swarm.positions)
    )
    moved = swarm.positions + velocities
    positions = clip_to_box(moved, box)
    velocities = np.where(positions != moved, 0.0, velocities)
    return SwarmState(positions, velocities, best_positions, best_fitness)


@dataclass
class OptimizeResult:
    best_position: np.ndarray
    best_fitness: float
    history: list  # best fitness after each iteration
    iterations: int


def optimize(
    fitness_fn,
    swarm: SwarmState,
    box: ConstraintBox,
    cfg: SwarmConfig,
    callback=None,
) -> OptimizeResult:
    """Run the swarm for ``cfg.iterations`` updates.

    ``fitness_fn`` maps a (n, p) position block to (n,) fitnesses. After
    every update the box constraint is re-checked exactly and a violation
    raises. ``callback(iteration, swarm, best_fitness)`` runs per iteration.
    """
    if not box.contains(swarm.positions):
        raise ConstraintViolation("initial swarm has particles outside the box")
    fitnesses = np.asarray(fitness_fn(swarm.positions), dtype=float)
    best = int(fitnesses.argmax())
    gb_position = swarm.positions[best].copy()
    gb_fitness = float(fitnesses[best])
    history = []
    for i in range(cfg.iterations):
        swarm = pso_step(swarm, fitnesses, box, cfg, _derived_rng(cfg.seed, _STREAM_ITER, i))
        if not box.contains(swarm.positions):
            raise ConstraintViolation(f"particle left the box after iteration {i}")
        fitnesses = np.asarray(fitness_fn(swarm.positions), dtype=float)
        best = int(fitnesses.argmax())
        if fitnesses[best] > gb_fitness:
            gb_fitness = float(fitnesses[best])
            gb_position = swarm.positions[best].copy()
        history.append(gb_fitness)
        if callback is not None:
            callback(i, swarm, gb_fitness)
    return OptimizeResult(gb_position, gb_fitness, history, cfg.iterations)


# ---------------------------------------------------------------------------
# Fitness


@dataclass
class FitnessSpec:
    """Everything needed to score a policy: the ensemble, a fixed list of
    start windows (shared by all particles and iterations), the rollout
    horizon, and the scoring mode."""

    ensemble: Ensemble
    windows: list
    cfg: OvershootConfig
    arch: nn.PolicyArch
    mode: str = "pure"
    alpha: float = 0.0
    behavior: nn.PolicyWeights | None = None
    rollout_mode: str = "independent"
    _win_states: np.ndarray = field(init=False, repr=False)
    _win_actions: np.ndarray = field(init=False, repr=False)
    _warm_hidden: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not self.windows:
            raise ValidationError("fitness spec needs at least one start window")
        if self.mode not in ("pure", "penalized"):
            raise ValidationError(f"unknown fitness mode {self.mode!r}")
        if self.mode == "penalized" and self.behavior is None:
            raise ValidationError("penalized fitness needs the behavior clone as reference")
        self._win_states, self._win_actions = stack_windows(self.windows)
        self._warm_hidden = ensemble_warmup(self.ensemble, self._win_states, self._win_actions)


def fitness_components(positions: np.ndarray, spec: FitnessSpec) -> dict:
    """Mean conservative return, action penalty, and combined fitness for a
    block of positions. The penalty averages squared deviation from the
    behavior clone over every state visited in the rollouts."""
    if spec.behavior is None:
        raise ValidationError("fitness components need the behavior clone as penalty reference")
    out = rollout_batch(
        spec.ensemble,
        np.asarray(positions, dtype=float),
        spec.arch,
        spec._win_states,
        spec._win_actions,
        spec.cfg,
        mode=spec.rollout_mode,
        warm_hidden=spec._warm_hidden,
        penalty_anchor=spec.behavior,
    )
    mean_return = out["returns"].mean(axis=1)
    penalty = out["penalties"]
    return {
        "return": mean_return,
        "penalty": penalty,
        "fitness": mean_return - spec.alpha * penalty,
    }


def evaluate_fitness_batch(positions: np.ndarray, spec: FitnessSpec) -> np.ndarray:
    """Fitness of each position: mean conservative return over the start
    windows, minus alpha times the action penalty in penalized mode."""
    positions = np.asarray(positions, dtype=float)
    if spec.mode == "penalized":
        comp = fitness_components(positions, spec)
        return comp["fitness"]
    out = rollout_batch(
        spec.ensemble,
        positions,
        spec.arch,
        spec._win_states,
        spec._win_actions,
        spec.cfg,
        mode=spec.rollout_mode,
        warm_hidden=spec._warm_hidden,
    )
    return out["returns"].mean(axis=1)


def evaluate_fitness(theta, spec: FitnessSpec) -> float:
    """Fitness of a single policy (flat vector or PolicyWeights)."""
    flat = theta.flat if isinstance(theta, nn.PolicyWeights) else np.asarray(theta, dtype=float)
    return float(evaluate_fitness_batch(flat[None], spec)[0])


def calibrate_alpha(initial_positions: np.ndarray, spec: FitnessSpec) -> float:
    """Penalty weight making the initial population's mean scaled penalty
    equal to half its mean absolute return; zero when the population never
    deviates from the clone."""
    comp = fitness_components(np.asarray(initial_positions, dtype=float), spec)
    mean_penalty = float(comp["penalty"].mean())
    if mean_penalty == 0.0:
        return 0.0
    return 0.5 * float(np.abs(comp["return"]).mean()) / mean_penalty


# ---------------------------------------------------------------------------
# Full search


@dataclass
class SearchResult:
    theta_star: nn.PolicyWeights
    best_fitness: float
    history: list
    mode: str
    alpha: float
    d: float
    start_windows: list


def wsbc_search(
    ensemble: Ensemble,
    psi: nn.PolicyWeights,
    dataset: Dataset,
    d: float,
    swarm_cfg: SwarmConfig,
    rollout_cfg: OvershootConfig,
    mode: str = "pure",
    n_start_windows: int = 20,
    rollout_mode: str = "independent",
    callback=None,
) -> SearchResult:
    """Swarm search for the best policy around the behavior clone.

    Draws the start-window set once (seeded) and runs the configured number
    of updates. In pure mode the swarm initializes inside the radius-d box
    around the clone and clipping enforces the box after every update. In
    penalized mode there is no box and ``d`` is unused: the swarm starts
    from standard random policy initializations and the fitness subtracts
    the calibrated action penalty instead. Deterministic under
    ``swarm_cfg.seed``.
    """
    if not (d > 0.0 and np.isfinite(d)):
        raise ValidationError(f"constraint radius d must be positive and finite, got {d}")
    if mode not in ("pure", "penalized"):
        raise ValidationError(f"unknown search mode {mode!r}")
    state_dim = dataset.state_dim
    if psi.arch.n_inputs % state_dim != 0:
        raise ValidationError(
            f"clone input size {psi.arch.n_inputs} is not a multiple of the state dimension {state_dim}"
        )
    window_h_p = psi.arch.n_inputs // state_dim - 1
    windows = sample_windows(
        dataset, n_start_windows, window_h_p, _derived_rng(swarm_cfg.seed, _STREAM_WINDOWS)
    )

    spec = FitnessSpec(
        ensemble=ensemble,
        windows=windows,
        cfg=rollout_cfg,
        arch=psi.arch,
        mode="pure",
        behavior=psi,
        rollout_mode=rollout_mode,
    )
    alpha = 0.0
    if mode == "penalized":
        swarm = init_swarm_random(psi.arch, swarm_cfg, _derived_rng(swarm_cfg.seed, _STREAM_INIT))
        alpha = calibrate_alpha(swarm.positions, spec)
        spec = FitnessSpec(
            ensemble=ensemble,
            windows=windows,
            cfg=rollout_cfg,
            arch=psi.arch,
            mode="penalized",
            alpha=alpha,
            behavior=psi,
            rollout_mode=rollout_mode,
        )
        box = ConstraintBox.unbounded(psi.flat)
    else:
        swarm = init_swarm(psi.flat, d, swarm_cfg, _derived_rng(swarm_cfg.seed, _STREAM_INIT))
        box = ConstraintBox(psi.flat, d)

    result = optimize(lambda pos: evaluate_fitness_batch(pos, spec), swarm, box, swarm_cfg, callback)
    theta_star = nn.PolicyWeights(result.best_position, psi.arch)
    return SearchResult(theta_star, result.best_fitness, result.history, mode, alpha, d, windows)
