"""Minimal neural-network kernel.

Provides exactly the pieces the rest of the package needs: forward passes
for the two fixed architectures (a single-cell recurrent dynamics network
with a linear head, and a one-hidden-layer policy network), hand-written
backpropagation through time for the overshooting loss, backprop for the
policy regression loss, an Adam optimizer, and the flat-vector weight file
format. There is no general autodiff; each gradient is derived for its one
loss.

Canonical parameter order for the recurrent network (used by flattening
and the weight file format): input weights row-major, recurrent weights
row-major, recurrent bias, head weights row-major, head bias. For the
policy network: hidden weights row-major, hidden bias, output weights
row-major, output bias.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import NumericError, ValidationError

WEIGHT_MAGIC = b"WSBW"
WEIGHT_VERSION = 1
_WEIGHT_HEADER = struct.Struct("<4sIQ")  # magic, version, parameter count


def _require_finite(name: str, array: np.ndarray) -> None:
    if not np.all(np.isfinite(array)):
        raise NumericError(f"{name} contains non-finite values")


# ---------------------------------------------------------------------------
# Parameter containers


@dataclass
class DenseParams:
    """Weights of one fully connected layer: y = weights @ x + bias."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def validate(self) -> None:
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise ValidationError("dense layer arrays have wrong rank")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise ValidationError(
                f"dense layer shape mismatch: weights {self.weights.shape}, bias {self.bias.shape}"
            )
        _require_finite("dense weights", self.weights)
        _require_finite("dense bias", self.bias)

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]


@dataclass
class RecurrentParams:
    """Weights of a single saturating recurrent cell.

    New hidden state: tanh(input_weights @ x + recurrent_weights @ h + bias).
    """

    input_weights: np.ndarray  # (hidden, input)
    recurrent_weights: np.ndarray  # (hidden, hidden)
    bias: np.ndarray  # (hidden,)

    def validate(self) -> None:
        h = self.bias.shape[0]
        if self.input_weights.shape[0] != h:
            raise ValidationError("recurrent cell: input_weights rows != hidden size")
        if self.recurrent_weights.shape != (h, h):
            raise ValidationError("recurrent cell: recurrent_weights must be square (hidden x hidden)")
        _require_finite("recurrent input weights", self.input_weights)
        _require_finite("recurrent weights", self.recurrent_weights)
        _require_finite("recurrent bias", self.bias)

    @property
    def hidden_size(self) -> int:
        return self.bias.shape[0]

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]


def rnn_param_count(hidden: int, n_inputs: int, n_outputs: int) -> int:
    return hidden * n_inputs + hidden * hidden + hidden + n_outputs * hidden + n_outputs


def flatten_rnn(recurrent: RecurrentParams, head: DenseParams) -> np.ndarray:
    """Flatten recurrent-cell plus head parameters in canonical order."""
    return np.concatenate(
        [
            recurrent.input_weights.ravel(),
            recurrent.recurrent_weights.ravel(),
            recurrent.bias,
            head.weights.ravel(),
            head.bias,
        ]
    )


def unflatten_rnn(
    flat: np.ndarray, hidden: int, n_inputs: int, n_outputs: int
) -> tuple[RecurrentParams, DenseParams]:
    """Inverse of :func:`flatten_rnn`. Returned arrays are views into ``flat``."""
    expected = rnn_param_count(hidden, n_inputs, n_outputs)
    flat = np.asarray(flat)
    if flat.shape != (expected,):
        raise ValidationError(f"expected {expected} parameters, got shape {flat.shape}")
    o = 0
    w_in = flat[o : o + hidden * n_inputs].reshape(hidden, n_inputs)
    o += hidden * n_inputs
    w_rec = flat[o : o + hidden * hidden].reshape(hidden, hidden)
    o += hidden * hidden
    b = flat[o : o + hidden]
    o += hidden
    w_head = flat[o : o + n_outputs * hidden].reshape(n_outputs, hidden)
    o += n_outputs * hidden
    b_head = flat[o : o + n_outputs]
    return RecurrentParams(w_in, w_rec, b), DenseParams(w_head, b_head)


def init_rnn(hidden: int, n_inputs: int, n_outputs: int, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform initial flat parameter vector for the recurrent network."""
    flat = np.zeros(rnn_param_count(hidden, n_inputs, n_outputs))
    rec, head = unflatten_rnn(flat, hidden, n_inputs, n_outputs)
    s_in = np.sqrt(6.0 / (hidden + n_inputs))
    s_rec = np.sqrt(6.0 / (2 * hidden))
    s_head = np.sqrt(6.0 / (hidden + n_outputs))
    rec.input_weights[:] = rng.uniform(-s_in, s_in, rec.input_weights.shape)
    rec.recurrent_weights[:] = rng.uniform(-s_rec, s_rec, rec.recurrent_weights.shape)
    head.weights[:] = rng.uniform(-s_head, s_head, head.weights.shape)
    return flat


# ---------------------------------------------------------------------------
# Recurrent forward / overshooting loss / BPTT


def recurrent_step(
    recurrent: RecurrentParams,
    head: DenseParams,
    inputs: np.ndarray,
    hidden: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """One step of the recurrent cell plus linear head.

    Returns ``(prediction, new_hidden)`` where
    ``new_hidden = tanh(W_in @ inputs + W_rec @ hidden + b)`` and
    ``prediction = head.weights @ new_hidden + head.bias``.
    """
    inputs = np.asarray(inputs, dtype=float)
    hidden = np.asarray(hidden, dtype=float)
    if inputs.shape != (recurrent.input_size,):
        raise ValidationError(
            f"input length {inputs.shape} does not match cell input size {recurrent.input_size}"
        )
    if hidden.shape != (recurrent.hidden_size,):
        raise ValidationError(
            f"hidden length {hidden.shape} does not match cell hidden size {recurrent.hidden_size}"
        )
    _require_finite("recurrent_step inputs", inputs)
    _require_finite("recurrent_step hidden", hidden)
    new_hidden = np.tanh(recurrent.input_weights @ inputs + recurrent.recurrent_weights @ hidden + recurrent.bias)
    prediction = head.weights @ new_hidden + head.bias
    return prediction, new_hidden


def _as_batched_segment(states: np.ndarray, actions: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    states = np.asarray(states, dtype=float)
    actions = np.asarray(actions, dtype=float)
    single = states.ndim == 2
    if single:
        states = states[None]
        actions = actions[None]
    if states.ndim != 3 or actions.ndim != 3:
        raise ValidationError("segment arrays must be (steps+1, state_dim) and (steps, action_dim)")
    if actions.shape[1] != states.shape[1] - 1:
        raise ValidationError(
            f"segment needs one action per transition: {states.shape[1]} states vs {actions.shape[1]} actions"
        )
    return states, actions, single


def _check_segment_length(states: np.ndarray, h_p: int, h_f: int) -> None:
    needed = h_p + h_f + 1
    if states.shape[1] < needed:
        raise ValidationError(
            f"segment too short: {states.shape[1]} states, need at least {needed} (h_p={h_p}, h_f={h_f})"
        )


def _unroll(recurrent, head, states, actions, h_p, h_f):
    """Forward pass of the overshooting recurrence.

    During warm-up (step < h_p) the cell consumes dataset states; from step
    h_p on it consumes its own previous prediction. Actions always come from
    the segment. Returns per-step inputs, hidden states, and predictions.
    """
    batch = states.shape[0]
    total = h_p + h_f
    hidden_size = recurrent.hidden_size
    xs = np.empty((total, batch, recurrent.input_size))
    hs = np.empty((total, batch, hidden_size))
    preds = np.empty((total, batch, head.n_out))
    h = np.zeros((batch, hidden_size))
    for t in range(total):
        fed_state = states[:, t] if t <= h_p else preds[t - 1]
        x = np.concatenate([fed_state, actions[:, t]], axis=1)
        h = np.tanh(x @ recurrent.input_weights.T + h @ recurrent.recurrent_weights.T + recurrent.bias)
        p = h @ head.weights.T + head.bias
        xs[t], hs[t], preds[t] = x, h, p
    return xs, hs, preds


def unroll_overshoot(
    recurrent: RecurrentParams,
    head: DenseParams,
    states: np.ndarray,
    actions: np.ndarray,
    h_p: int,
    h_f: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inspectable forward pass: per-step cell inputs, hidden states, and
    predictions, each shaped (h_p + h_f, batch, ...). The input rows show
    which state the cell consumed at every step (dataset during warm-up,
    its own previous prediction afterwards)."""
    states, actions, _ = _as_batched_segment(states, actions)
    _check_segment_length(states, h_p, h_f)
    return _unroll(recurrent, head, states, actions, h_p, h_f)


def overshoot_loss_raw(
    recurrent: RecurrentParams,
    head: DenseParams,
    states: np.ndarray,
    actions: np.ndarray,
    h_p: int,
    h_f: int,
) -> float:
    """Overshooting loss on an already-normalized segment (or batch of them).

    Mean squared error over the h_f overshoot steps, all state features, and
    the batch. ``states`` is ``(steps+1, dim)`` or ``(batch, steps+1, dim)``
    with aligned ``actions``; only the leading ``h_p + h_f + 1`` states are
    consumed.
    """
    states, actions, _ = _as_batched_segment(states, actions)
    _check_segment_length(states, h_p, h_f)
    _, _, preds = _unroll(recurrent, head, states, actions, h_p, h_f)
    targets = np.swapaxes(states[:, h_p + 1 : h_p + h_f + 1], 0, 1)
    return float(np.mean((preds[h_p:] - targets) ** 2))


def bptt_gradient(
    recurrent: RecurrentParams,
    head: DenseParams,
    states: np.ndarray,
    actions: np.ndarray,
    h_p: int,
    h_f: int,
) -> tuple[float, np.ndarray]:
    """Loss and gradient of the overshooting loss via backprop through time.

    Gradient is flattened in canonical order (see module docstring). The
    backward pass carries two chains: through the hidden state, and through
    the predicted states that are fed back as inputs during overshooting.
    """
    if h_p < 0 or h_f < 1:
        raise ValidationError("h_p must be >= 0 and h_f >= 1")
    states, actions, _ = _as_batched_segment(states, actions)
    _check_segment_length(states, h_p, h_f)
    batch = states.shape[0]
    state_dim = head.n_out
    total = h_p + h_f
    xs, hs, preds = _unroll(recurrent, head, states, actions, h_p, h_f)
    targets = np.swapaxes(states[:, 1 : total + 1], 0, 1)

    w = 1.0 / (batch * h_f * state_dim)
    loss = float(np.sum((preds[h_p:] - targets[h_p:]) ** 2) * w)

    d_w_in = np.zeros_like(recurrent.input_weights)
    d_w_rec = np.zeros_like(recurrent.recurrent_weights)
    d_b = np.zeros_like(recurrent.bias)
    d_w_head = np.zeros_like(head.weights)
    d_b_head = np.zeros_like(head.bias)

    grad_h = np.zeros((batch, recurrent.hidden_size))
    grad_fed = np.zeros((batch, state_dim))  # dL/d(fed-back prediction)
    for t in range(total - 1, -1, -1):
        dp = np.zeros((batch, state_dim))
        if t >= h_p:
            dp += 2.0 * w * (preds[t] - targets[t])
            dp += grad_fed  # prediction t was the input state of step t+1
        d_w_head += dp.T @ hs[t]
        d_b_head += dp.sum(axis=0)
        dh = dp @ head.weights + grad_h
        da = dh * (1.0 - hs[t] ** 2)
        h_prev = hs[t - 1] if t > 0 else np.zeros_like(grad_h)
        d_w_in += da.T @ xs[t]
        d_w_rec += da.T @ h_prev
        d_b += da.sum(axis=0)
        grad_h = da @ recurrent.recurrent_weights
        grad_fed = (da @ recurrent.input_weights)[:, :state_dim]

    grad = flatten_rnn(RecurrentParams(d_w_in, d_w_rec, d_b), DenseParams(d_w_head, d_b_head))
    return loss, grad


# ---------------------------------------------------------------------------
# Policy network


@dataclass(frozen=True)
class PolicyArch:
    """Shape of the policy network: one rectifier hidden layer, squashed output.

    Inputs are multiplied by ``input_scale`` before the first layer so the
    0..100 observable range enters at unit scale; the constant is part of the
    architecture, not a trained weight.
    """

    n_inputs: int
    n_hidden: int = 20
    n_actions: int = 3
    input_scale: float = 0.01

    def param_count(self) -> int:
        return self.n_hidden * self.n_inputs + self.n_hidden + self.n_actions * self.n_hidden + self.n_actions

    def to_dict(self) -> dict:
        return {
            "n_inputs": self.n_inputs,
            "n_hidden": self.n_hidden,
            "n_actions": self.n_actions,
            "input_scale": self.input_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyArch":
        return cls(
            n_inputs=int(d["n_inputs"]),
            n_hidden=int(d["n_hidden"]),
            n_actions=int(d["n_actions"]),
            input_scale=float(d["input_scale"]),
        )


@dataclass
class PolicyWeights:
    """Flat parameter vector of a policy network plus its architecture."""

    flat: np.ndarray
    arch: PolicyArch

    def __post_init__(self):
        self.flat = np.asarray(self.flat, dtype=float)
        if self.flat.shape != (self.arch.param_count(),):
            raise ValidationError(
                f"policy weight vector has {self.flat.shape} entries, architecture needs {self.arch.param_count()}"
            )

    def copy(self) -> "PolicyWeights":
        return PolicyWeights(self.flat.copy(), self.arch)


def unflatten_policy(flat: np.ndarray, arch: PolicyArch) -> tuple[DenseParams, DenseParams]:
    """Split a flat policy vector into (hidden layer, output layer) views."""
    flat = np.asarray(flat)
    if flat.shape != (arch.param_count(),):
        raise ValidationError(f"expected {arch.param_count()} policy parameters, got shape {flat.shape}")
    o = 0
    w1 = flat[o : o + arch.n_hidden * arch.n_inputs].reshape(arch.n_hidden, arch.n_inputs)
    o += arch.n_hidden * arch.n_inputs
    b1 = flat[o : o + arch.n_hidden]
    o += arch.n_hidden
    w2 = flat[o : o + arch.n_actions * arch.n_hidden].reshape(arch.n_actions, arch.n_hidden)
    o += arch.n_actions * arch.n_hidden
    b2 = flat[o : o + arch.n_actions]
    return DenseParams(w1, b1), DenseParams(w2, b2)


def init_policy(arch: PolicyArch, rng: np.random.Generator) -> np.ndarray:
    """Glorot-uniform initial flat policy vector (biases zero)."""
    flat = np.zeros(arch.param_count())
    hidden, out = unflatten_policy(flat, arch)
    s1 = np.sqrt(6.0 / (arch.n_inputs + arch.n_hidden))
    s2 = np.sqrt(6.0 / (arch.n_hidden + arch.n_actions))
    hidden.weights[:] = rng.uniform(-s1, s1, hidden.weights.shape)
    out.weights[:] = rng.uniform(-s2, s2, out.weights.shape)
    return flat


def _window_to_vector(window, n_inputs: int) -> np.ndarray:
    vec = window.flat_states() if hasattr(window, "flat_states") else np.asarray(window, dtype=float)
    vec = np.asarray(vec, dtype=float).ravel()
    if vec.shape != (n_inputs,):
        raise ValidationError(f"policy input has length {vec.shape[0]}, architecture needs {n_inputs}")
    return vec


def policy_forward(theta: PolicyWeights, window) -> np.ndarray:
    """Deterministic action for one history window, each component in [-1, 1].

    ``window`` is a flat input vector or any object with ``flat_states()``.
    """
    x = _window_to_vector(window, theta.arch.n_inputs)
    return policy_forward_batch(theta, x[None])[0]


def policy_forward_batch(theta: PolicyWeights, inputs: np.ndarray) -> np.ndarray:
    """Actions for a batch of flat policy inputs, shape (batch, n_inputs)."""
    arch = theta.arch
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != arch.n_inputs:
        raise ValidationError(f"policy input batch must be (n, {arch.n_inputs}), got {inputs.shape}")
    hidden, out = unflatten_policy(theta.flat, arch)
    z1 = (inputs * arch.input_scale) @ hidden.weights.T + hidden.bias
    h = np.maximum(z1, 0.0)
    return np.tanh(h @ out.weights.T + out.bias)


def policy_forward_many(positions: np.ndarray, inputs: np.ndarray, arch: PolicyArch) -> np.ndarray:
    """Actions for many policies at once.

    ``positions`` is (n_policies, n_params); ``inputs`` is
    (n_policies, batch, n_inputs) with each policy applied to its own batch.
    Returns (n_policies, batch, n_actions).
    """
    n = positions.shape[0]
    o = 0
    w1 = positions[:, o : o + arch.n_hidden * arch.n_inputs].reshape(n, arch.n_hidden, arch.n_inputs)
    o += arch.n_hidden * arch.n_inputs
    b1 = positions[:, o : o + arch.n_hidden]
    o += arch.n_hidden
    w2 = positions[:, o : o + arch.n_actions * arch.n_hidden].reshape(n, arch.n_actions, arch.n_hidden)
    o += arch.n_actions * arch.n_hidden
    b2 = positions[:, o : o + arch.n_actions]
    z1 = np.einsum("nhi,nbi->nbh", w1, inputs * arch.input_scale) + b1[:, None, :]
    h = np.maximum(z1, 0.0)
    return np.tanh(np.einsum("nah,nbh->nba", w2, h) + b2[:, None, :])


def policy_mse_and_grad(
    theta_flat: np.ndarray, arch: PolicyArch, inputs: np.ndarray, targets: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean squared action error and its gradient for the policy network.

    The mean runs over both rows and action components. Used by behavior
    cloning; this is the only policy-side gradient in the package.
    """
    hidden, out = unflatten_policy(theta_flat, arch)
    x = np.asarray(inputs, dtype=float) * arch.input_scale
    z1 = x @ hidden.weights.T + hidden.bias
    hact = np.maximum(z1, 0.0)
    z2 = hact @ out.weights.T + out.bias
    a = np.tanh(z2)
    err = a - targets
    mse = float(np.mean(err**2))
    dz2 = 2.0 * err * (1.0 - a**2) / err.size
    d_w2 = dz2.T @ hact
    d_b2 = dz2.sum(axis=0)
    dh = dz2 @ out.weights
    dz1 = dh * (z1 > 0.0)
    d_w1 = dz1.T @ x
    d_b1 = dz1.sum(axis=0)
    grad = np.concatenate([d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])
    return mse, grad


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """State of one Adam optimizer instance over a flat parameter vector."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_init(n_params: int, learning_rate: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        first_moment=np.zeros(n_params),
        second_moment=np.zeros(n_params),
        step_count=0,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_step(params: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update. Returns new arrays; inputs untouched."""
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape or params.shape != state.first_moment.shape:
        raise ValidationError(
            f"adam shapes disagree: params {params.shape}, grad {grad.shape}, state {state.first_moment.shape}"
        )
    finite = np.isfinite(grad)
    if not finite.all():
        bad = int(np.argmin(finite))
        raise NumericError(f"non-finite gradient at coordinate {bad}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad**2
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.learning_rate, state.beta1, state.beta2, state.epsilon)
    return new_params, new_state


# ---------------------------------------------------------------------------
# Weight files: 16-byte header (magic, version, count), then f32 little-endian
# in canonical order.


def save_weights(path, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=float).ravel()
    _require_finite("weights", flat)
    with open(path, "wb") as fh:
        fh.write(_WEIGHT_HEADER.pack(WEIGHT_MAGIC, WEIGHT_VERSION, flat.size))
        fh.write(flat.astype("<f4").tobytes())


def load_weights(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(_WEIGHT_HEADER.size)
        if len(header) < _WEIGHT_HEADER.size:
            raise ValidationError(f"{path}: truncated weight file header")
        magic, version, count = _WEIGHT_HEADER.unpack(header)
        if magic != WEIGHT_MAGIC:
            raise ValidationError(f"{path}: not a weight file (bad magic {magic!r})")
        if version != WEIGHT_VERSION:
            raise ValidationError(f"{path}: unsupported weight file version {version}")
        payload = fh.read()
    expected = count * 4
    if len(payload) != expected:
        raise ValidationError(f"{path}: weight payload has {len(payload)} bytes, header promises {expected}")
    return np.frombuffer(payload, dtype="<f4").astype(float)


def save_policy(path, theta: PolicyWeights, extra: dict | None = None) -> None:
    """Weight file plus a JSON sidecar carrying the architecture."""
    path = Path(path)
    save_weights(path, theta.flat)
    meta = {"arch": theta.arch.to_dict()}
    if extra:
        meta.update(extra)
    with open(path.with_name(path.name + ".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_policy(path) -> PolicyWeights:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        raise ValidationError(f"{path}: missing policy sidecar {sidecar.name}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    return PolicyWeights(load_weights(path), PolicyArch.from_dict(meta["arch"]))
