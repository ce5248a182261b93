"""Command-line pipeline with reproducible, file-backed runs.

Every command writes its artifacts plus a ``manifest.json`` recording the
exact configuration and the SHA-256 of each input artifact, so a run
directory is self-describing and downstream commands can refuse stale
inputs. All randomness flows from the command's ``--seed``. Exit codes:
0 success, 1 usage, 2 validation, 3 numeric failure. ``WSBC_WORKERS`` is
the only environment variable read (ensemble-member training threads).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import behavior, data, dynamics, env, evaluation, nn, search
from .exceptions import ConstraintViolation, NumericError, ValidationError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


class _UsageExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"usage error: {message}", file=sys.stderr)
        raise _UsageExit()


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def artifact_sha256(path) -> str:
    """Hash of a file, or of a directory's sorted (name, bytes) contents."""
    path = Path(path)
    if path.is_dir():
        digest = hashlib.sha256()
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            digest.update(str(sub.relative_to(path)).encode())
            digest.update(sub.read_bytes())
        return digest.hexdigest()
    return file_sha256(path)


def _input_record(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"input artifact {path} does not exist")
    return {"path": str(path), "sha256": artifact_sha256(path)}


def _check_input(record: dict, label: str) -> None:
    path = Path(record["path"])
    if not path.exists():
        raise ValidationError(f"{label} artifact {path} is missing")
    actual = artifact_sha256(path)
    if actual != record["sha256"]:
        raise ValidationError(
            f"{label} artifact {path} does not match the manifest "
            f"(expected sha256 {record['sha256']}, found {actual})"
        )


def _write_manifest(directory: Path, command: str, config: dict, inputs: dict, outputs: dict) -> None:
    manifest = {"command": command, "config": config, "inputs": inputs, "outputs": outputs}
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise ValidationError(f"{directory}: no manifest.json (not a run directory)")
    with open(path) as fh:
        return json.load(fh)


def _merge_config(parser_defaults: dict, args: argparse.Namespace) -> dict:
    """Built-in defaults, overridden by --config JSON, overridden by flags."""
    merged = dict(parser_defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        with open(config_path) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(parser_defaults)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        merged.update(loaded)
    for key in parser_defaults:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _workers() -> int:
    raw = os.environ.get("WSBC_WORKERS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"WSBC_WORKERS must be an integer, got {raw!r}")


def _parse_floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of numbers, got {text!r}")


def _parse_ints(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise ValidationError(f"expected a comma-separated list of integers, got {text!r}")


# ---------------------------------------------------------------------------
# Commands


_GENERATE_DEFAULTS = {
    "policy": "mediocre",
    "epsilon": 0.0,
    "n": 100000,
    "episode_length": 1000,
    "seed": 0,
    "setpoint": 50.0,
    "init": "random",
    "h_p": 30,
    "noise": True,
}


def cmd_generate(args) -> int:
    cfg = _merge_config(_GENERATE_DEFAULTS, args)
    out = Path(args.out)
    env_cfg = env.MiniIBConfig() if cfg["noise"] else env.MiniIBConfig().without_noise()
    dataset = env.generate_dataset(
        kind=cfg["policy"],
        epsilon=cfg["epsilon"],
        n_transitions=cfg["n"],
        episode_length=cfg["episode_length"],
        seed=cfg["seed"],
        setpoint=cfg["setpoint"],
        init=cfg["init"],
        h_p=cfg["h_p"],
        config=env_cfg,
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    data.save_dataset(dataset, out)
    print(f"wrote {dataset.n_transitions} transitions in {dataset.n_episodes} episodes to {out}")
    print(f"sha256 {file_sha256(out)}")
    return EXIT_OK


_TRAIN_MODELS_DEFAULTS = {
    "k": 4,
    "seed": 0,
    "hidden": 30,
    "h_p": 30,
    "h_f": 50,
    "batch_size": 64,
    "learning_rate": 1e-3,
    "max_epochs": 200,
    "patience": 20,
    "val_fraction": 0.1,
}


def cmd_train_models(args) -> int:
    cfg = _merge_config(_TRAIN_MODELS_DEFAULTS, args)
    out = Path(args.out)
    dataset_record = _input_record(args.dataset)
    dataset = data.load_dataset(args.dataset)
    train, val = data.split(dataset, cfg["val_fraction"], seed=cfg["seed"])
    overshoot = dynamics.OvershootConfig(h_p=cfg["h_p"], h_f=cfg["h_f"])
    train_cfg = dynamics.TrainConfig(
        hidden=cfg["hidden"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
    )
    ensemble = dynamics.train_ensemble(
        train, val, cfg["k"], overshoot, train_cfg, base_seed=cfg["seed"], workers=_workers()
    )
    out.mkdir(parents=True, exist_ok=True)
    dynamics.save_ensemble(ensemble, out)
    _write_manifest(
        out,
        "train-models",
        cfg,
        {"dataset": dataset_record},
        {"ensemble": {"path": str(out), "members": ensemble.k}},
    )
    for member in ensemble.members:
        rec = member.record
        print(f"member seed {rec.seed}: best val loss {rec.best_val_loss:.6f} (epoch {rec.best_epoch})")
    return EXIT_OK


_TRAIN_BC_DEFAULTS = {
    "seed": 0,
    "hidden": 20,
    "h_p": 30,
    "batch_size": 256,
    "learning_rate": 1e-3,
    "max_epochs": 200,
    "patience": 20,
    "val_fraction": 0.1,
}


def cmd_train_bc(args) -> int:
    cfg = _merge_config(_TRAIN_BC_DEFAULTS, args)
    out = Path(args.out)
    dataset_record = _input_record(args.dataset)
    dataset = data.load_dataset(args.dataset)
    train, val = data.split(dataset, cfg["val_fraction"], seed=cfg["seed"])
    bc_cfg = behavior.BCConfig(
        n_hidden=cfg["hidden"],
        batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"],
        max_epochs=cfg["max_epochs"],
        patience=cfg["patience"],
    )
    clone = behavior.train_bc(train, val, bc_cfg, seed=cfg["seed"], h_p=cfg["h_p"])
    out.mkdir(parents=True, exist_ok=True)
    behavior.save_clone(clone, out / "psi.wsbw", extra={"dataset_sha256": dataset_record["sha256"]})
    _write_manifest(
        out,
        "train-bc",
        cfg,
        {"dataset": dataset_record},
        {"psi": {"path": str(out / "psi.wsbw")}},
    )
    print(f"behavior clone: train MSE {clone.train_mse:.6f}, val MSE {clone.val_mse:.6f}")
    return EXIT_OK


_SEARCH_DEFAULTS = {
    "d": 0.1,
    "mode": "pure",
    "seed": 0,
    "particles": 200,
    "neighborhood": 30,
    "iterations": 300,
    "inertia": 0.729,
    "cognitive": 1.494,
    "social": 1.494,
    "starts": 20,
    "h_f": 100,
    "gamma": 0.97,
    "rollout_mode": "independent",
}


def cmd_search(args) -> int:
    cfg = _merge_config(_SEARCH_DEFAULTS, args)
    out = Path(args.out)
    inputs = {
        "dataset": _input_record(args.dataset),
        "ensemble": _input_record(args.ensemble),
        "psi": _input_record(args.bc),
    }
    dataset = data.load_dataset(args.dataset)
    ensemble = dynamics.load_ensemble(args.ensemble)
    psi_path = Path(args.bc)
    if psi_path.is_dir():
        psi_path = psi_path / "psi.wsbw"
        inputs["psi"] = _input_record(psi_path)
    clone = behavior.load_clone(psi_path)
    swarm_cfg = search.SwarmConfig(
        n_particles=cfg["particles"],
        neighborhood_size=cfg["neighborhood"],
        inertia=cfg["inertia"],
        cognitive=cfg["cognitive"],
        social=cfg["social"],
        iterations=cfg["iterations"],
        seed=cfg["seed"],
    )
    rollout_cfg = dynamics.OvershootConfig(h_p=dataset.h_p, h_f=cfg["h_f"], gamma=cfg["gamma"])
    result = search.wsbc_search(
        ensemble,
        clone.psi,
        dataset,
        cfg["d"],
        swarm_cfg,
        rollout_cfg,
        mode=cfg["mode"],
        n_start_windows=cfg["starts"],
        rollout_mode=cfg["rollout_mode"],
    )
    out.mkdir(parents=True, exist_ok=True)
    weights_path = out / "best_weights.wsbw"
    stored = result.theta_star
    if cfg["mode"] == "pure":
        box = search.ConstraintBox(clone.psi.flat, cfg["d"])
        stored = nn.PolicyWeights(search.quantize_into_box(stored.flat, box), stored.arch)
    nn.save_policy(
        weights_path,
        stored,
        extra={"mode": result.mode, "alpha": result.alpha, "d": result.d,
               "best_fitness": result.best_fitness},
    )
    with open(out / "fitness_history.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "best_fitness"])
        for i, f in enumerate(result.history):
            writer.writerow([i, repr(float(f))])
    with open(out / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        out,
        "search",
        cfg,
        inputs,
        {"best_weights": {"path": str(weights_path), "sha256": file_sha256(weights_path)}},
    )
    print(f"best fitness {result.best_fitness:.4f} (mode {result.mode}, alpha {result.alpha:.4g})")
    if args.verify:
        reloaded = nn.load_policy(weights_path)
        gap = float(np.max(np.abs(reloaded.flat - clone.psi.flat)))
        if cfg["mode"] == "pure" and gap > cfg["d"]:
            print(f"verify: FAIL max|theta - psi| = {gap} exceeds d = {cfg['d']}", file=sys.stderr)
            return EXIT_NUMERIC
        print(f"verify: ok, max|theta - psi| = {gap:.6g} (d = {cfg['d']})")
    return EXIT_OK


_EVALUATE_DEFAULTS = {
    "episodes": 100,
    "horizon": 100,
    "seed": 0,
    "setpoint": 50.0,
    "init": "fixed",
    "noise": True,
}


def cmd_evaluate(args) -> int:
    cfg = _merge_config(_EVALUATE_DEFAULTS, args)
    out = Path(args.out)
    search_dir = Path(args.search_dir)
    manifest = _load_manifest(search_dir)
    for label in ("dataset", "ensemble", "psi"):
        _check_input(manifest["inputs"][label], label)
    weights_record = manifest["outputs"]["best_weights"]
    weights_path = Path(weights_record["path"])
    if not weights_path.exists():
        weights_path = search_dir / "best_weights.wsbw"
    actual = file_sha256(weights_path)
    if actual != weights_record["sha256"]:
        raise ValidationError(
            f"policy weights {weights_path} do not match the search manifest "
            f"(expected sha256 {weights_record['sha256']}, found {actual})"
        )
    theta = nn.load_policy(weights_path)
    env_cfg = env.MiniIBConfig() if cfg["noise"] else env.MiniIBConfig().without_noise()
    report = evaluation.evaluate_policy(
        theta,
        episodes=cfg["episodes"],
        horizon=cfg["horizon"],
        seed=cfg["seed"],
        config=env_cfg,
        setpoint=cfg["setpoint"],
        init=cfg["init"],
    )
    out.mkdir(parents=True, exist_ok=True)
    evaluation.save_report(report, out / "report.json", out / "report.csv")
    _write_manifest(
        out,
        "evaluate",
        cfg,
        {"search": {"path": str(search_dir), "best_weights_sha256": weights_record["sha256"]}},
        {"report": {"path": str(out / "report.json")}},
    )
    print(
        f"mean return {report.mean:.3f} +- {report.standard_error:.3f} (SE), "
        f"tenth percentile {report.tenth_percentile:.3f} over {report.episodes} episodes"
    )
    return EXIT_OK


_SWEEP_DEFAULTS = {
    "mode": "pure",
    "particles": 200,
    "neighborhood": 30,
    "iterations": 300,
    "starts": 20,
    "h_f": 100,
    "gamma": 0.97,
    "episodes": 100,
    "horizon": 100,
    "noise": True,
    "setpoint": 50.0,
    "init": "fixed",
}


def cmd_sweep(args) -> int:
    cfg = _merge_config(_SWEEP_DEFAULTS, args)
    out = Path(args.out)
    d_values = _parse_floats(args.d)
    seeds = _parse_ints(args.seeds)
    inputs = {
        "dataset": _input_record(args.dataset),
        "ensemble": _input_record(args.ensemble),
        "psi": _input_record(args.bc),
    }
    dataset = data.load_dataset(args.dataset)
    ensemble = dynamics.load_ensemble(args.ensemble)
    psi_path = Path(args.bc)
    if psi_path.is_dir():
        psi_path = psi_path / "psi.wsbw"
    clone = behavior.load_clone(psi_path)
    swarm_cfg = search.SwarmConfig(
        n_particles=cfg["particles"],
        neighborhood_size=cfg["neighborhood"],
        iterations=cfg["iterations"],
        seed=seeds[0],
    )
    rollout_cfg = dynamics.OvershootConfig(h_p=dataset.h_p, h_f=cfg["h_f"], gamma=cfg["gamma"])
    env_cfg = env.MiniIBConfig() if cfg["noise"] else env.MiniIBConfig().without_noise()
    sweep = evaluation.sweep_d(
        dataset,
        ensemble,
        clone.psi,
        d_values,
        seeds,
        swarm_cfg,
        rollout_cfg,
        mode=cfg["mode"],
        n_start_windows=cfg["starts"],
        episodes=cfg["episodes"],
        horizon=cfg["horizon"],
        env_config=env_cfg,
        setpoint=cfg["setpoint"],
        init=cfg["init"],
    )
    out.mkdir(parents=True, exist_ok=True)
    evaluation.write_sweep_outputs(sweep, out)
    _write_manifest(out, "sweep", {**cfg, "d": d_values, "seeds": seeds}, inputs,
                    {"sweep_csv": {"path": str(out / "sweep.csv")}})
    for d in d_values:
        print(f"d={d}: tenth percentile {sweep.tenth_percentile_by_d[d]:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> _Parser:
    parser = _Parser(prog="wsbc", description="Offline RL with weight-space behavior constraining")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="roll a baseline policy to collect a dataset")
    p.add_argument("--policy", choices=env.BASELINE_KINDS)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--episode-length", dest="episode_length", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--setpoint", type=float)
    p.add_argument("--init", choices=["random", "fixed"])
    p.add_argument("--h-p", dest="h_p", type=int)
    p.add_argument("--no-noise", dest="noise", action="store_false", default=None)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train-models", help="train the dynamics-model ensemble")
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--h-p", dest="h_p", type=int)
    p.add_argument("--h-f", dest="h_f", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_models)

    p = sub.add_parser("train-bc", help="train the behavior clone")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--h-p", dest="h_p", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", dest="val_fraction", type=float)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_bc)

    p = sub.add_parser("search", help="swarm-search policy weights around the clone")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--bc", required=True)
    p.add_argument("--d", type=float)
    p.add_argument("--mode", choices=["pure", "penalized"])
    p.add_argument("--seed", type=int)
    p.add_argument("--particles", type=int)
    p.add_argument("--neighborhood", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--inertia", type=float)
    p.add_argument("--cognitive", type=float)
    p.add_argument("--social", type=float)
    p.add_argument("--starts", type=int)
    p.add_argument("--h-f", dest="h_f", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--rollout-mode", dest="rollout_mode", choices=["independent", "argmin_propagate"])
    p.add_argument("--verify", action="store_true")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="evaluate searched weights on the true plant")
    p.add_argument("--search-dir", dest="search_dir", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--setpoint", type=float)
    p.add_argument("--init", choices=["random", "fixed"])
    p.add_argument("--no-noise", dest="noise", action="store_false", default=None)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="search + evaluate over a grid of d values and seeds")
    p.add_argument("--dataset", required=True)
    p.add_argument("--ensemble", required=True)
    p.add_argument("--bc", required=True)
    p.add_argument("--d", required=True, help="comma-separated d values")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--mode", choices=["pure", "penalized"])
    p.add_argument("--particles", type=int)
    p.add_argument("--neighborhood", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--starts", type=int)
    p.add_argument("--h-f", dest="h_f", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--episodes", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--setpoint", type=float)
    p.add_argument("--init", choices=["random", "fixed"])
    p.add_argument("--no-noise", dest="noise", action="store_false", default=None)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageExit:
        return EXIT_USAGE
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericError, ConstraintViolation) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
