"""Behavior cloning: regress the dataset's actions from history windows.

The clone uses the exact policy architecture, so its flat weight vector can
anchor the per-coordinate weight box used during policy search.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .data import Dataset, window_matrix
from .exceptions import NumericError, ValidationError


@dataclass(frozen=True)
class BCConfig:
    n_hidden: int = 20
    batch_size: int = 256
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 20


@dataclass
class BehaviorClone:
    """Cloned policy plus its final regression errors."""

    psi: nn.PolicyWeights
    train_mse: float
    val_mse: float


def bc_action_mse(psi: nn.PolicyWeights, dataset: Dataset, h_p: int | None = None) -> float:
    """Mean squared action error of a policy over every valid window,
    averaged across windows and action components."""
    h_p = dataset.h_p if h_p is None else h_p
    inputs, targets = window_matrix(dataset, h_p)
    preds = nn.policy_forward_batch(psi, inputs)
    return float(np.mean((preds - targets) ** 2))


def train_bc(
    train: Dataset,
    val: Dataset,
    cfg: BCConfig = BCConfig(),
    seed: int = 0,
    h_p: int | None = None,
) -> BehaviorClone:
    """Fit the clone by minibatch Adam on the window-to-action regression.

    Early-stops on the validation MSE and returns the best-on-validation
    snapshot; deterministic under ``seed``. The reported train MSE is a
    full-batch evaluation of the returned weights.
    """
    h_p = train.h_p if h_p is None else h_p
    x_train, y_train = window_matrix(train, h_p)
    x_val, y_val = window_matrix(val, h_p)
    arch = nn.PolicyArch(n_inputs=x_train.shape[1], n_hidden=cfg.n_hidden, n_actions=y_train.shape[1])

    rng = np.random.default_rng(seed)
    flat = nn.init_policy(arch, rng)
    adam = nn.adam_init(flat.size, learning_rate=cfg.learning_rate)

    def full_mse(params: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
        theta = nn.PolicyWeights(params, arch)
        return float(np.mean((nn.policy_forward_batch(theta, x) - y) ** 2))

    best = (np.inf, flat.copy())
    stall = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(x_train.shape[0])
        for start in range(0, order.size, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            loss, grad = nn.policy_mse_and_grad(flat, arch, x_train[rows], y_train[rows])
            if not np.isfinite(loss):
                raise NumericError(f"behavior cloning diverged at epoch {epoch}")
            flat, adam = nn.adam_step(flat, grad, adam)
        val_mse = full_mse(flat, x_val, y_val)
        if not np.isfinite(val_mse):
            raise NumericError(f"behavior cloning validation MSE became non-finite at epoch {epoch}")
        if val_mse < best[0]:
            best = (val_mse, flat.copy())
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break

    psi = nn.PolicyWeights(best[1], arch)
    return BehaviorClone(psi, full_mse(best[1], x_train, y_train), float(best[0]))


def save_clone(clone: BehaviorClone, path, extra: dict | None = None) -> None:
    path = Path(path)
    nn.save_weights(path, clone.psi.flat)
    meta = {
        "arch": clone.psi.arch.to_dict(),
        "train_mse": clone.train_mse,
        "val_mse": clone.val_mse,
    }
    if extra:
        meta.update(extra)
    with open(path.with_name(path.name + ".json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_clone(path) -> BehaviorClone:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    if not sidecar.exists():
        raise ValidationError(f"{path}: missing policy sidecar {sidecar.name}")
    with open(sidecar) as fh:
        meta = json.load(fh)
    arch = nn.PolicyArch.from_dict(meta["arch"])
    psi = nn.PolicyWeights(nn.load_weights(path), arch)
    return BehaviorClone(psi, float(meta["train_mse"]), float(meta["val_mse"]))
