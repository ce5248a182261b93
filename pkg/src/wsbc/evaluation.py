"""Ground-truth policy evaluation and reporting statistics.

Covers seeded evaluation episodes on the plant, the percentile and
standard-error conventions used in reports, average-rank aggregation over
a score table (a fixture with published benchmark scores is bundled for
that), the d-sensitivity sweep, and plain-text plot-script emission.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import nn
from .data import Dataset
from .dynamics import Ensemble, OvershootConfig
from .env import STATE_DIM, Action, MiniIBConfig, env_reset, env_step
from .exceptions import ValidationError
from .search import SearchResult, SwarmConfig, wsbc_search


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile: on the sorted list, position
    (n-1) * p/100 interpolates between the two closest ranks."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValidationError("percentile of an empty list")
    if not 0.0 <= p <= 100.0:
        raise ValidationError(f"percentile {p} outside [0, 100]")
    xs = np.sort(values)
    pos = (xs.size - 1) * p / 100.0
    lo = int(np.floor(pos))
    hi = int(np.ceil(pos))
    return float(xs[lo] + (pos - lo) * (xs[hi] - xs[lo]))


def standard_error(values) -> float:
    """Sample standard deviation (n-1 divisor) over sqrt(n); 0 for n <= 1."""
    values = np.asarray(values, dtype=float)
    if values.size <= 1:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(values.size))


@dataclass
class EvalReport:
    """Per-episode returns of one policy plus summary statistics."""

    returns: np.ndarray
    mean: float
    tenth_percentile: float
    standard_error: float
    episodes: int
    horizon: int
    seed: int

    @classmethod
    def from_returns(cls, returns, horizon: int, seed: int) -> "EvalReport":
        returns = np.asarray(returns, dtype=float)
        return cls(
            returns=returns,
            mean=float(returns.mean()),
            tenth_percentile=percentile(returns, 10.0),
            standard_error=standard_error(returns),
            episodes=int(returns.size),
            horizon=horizon,
            seed=seed,
        )

    def to_dict(self) -> dict:
        return {
            "returns": self.returns.tolist(),
            "mean": self.mean,
            "tenth_percentile": self.tenth_percentile,
            "standard_error": self.standard_error,
            "episodes": self.episodes,
            "horizon": self.horizon,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            returns=np.asarray(d["returns"], dtype=float),
            mean=float(d["mean"]),
            tenth_percentile=float(d["tenth_percentile"]),
            standard_error=float(d["standard_error"]),
            episodes=int(d["episodes"]),
            horizon=int(d["horizon"]),
            seed=int(d["seed"]),
        )


def evaluate_policy(
    theta: nn.PolicyWeights,
    episodes: int,
    horizon: int,
    seed: int,
    config: MiniIBConfig = MiniIBConfig(),
    setpoint: float = 50.0,
    init="fixed",
) -> EvalReport:
    """Undiscounted return of a policy over seeded plant episodes.

    Episode i runs under the seed pair (seed, i), so two policies evaluated
    with the same seed face identical noise streams. The policy's history
    stack starts as copies of the initial observable.
    """
    if episodes < 1:
        raise ValidationError("need at least one evaluation episode")
    if theta.arch.n_inputs % STATE_DIM != 0:
        raise ValidationError(
            f"policy input size {theta.arch.n_inputs} is not a multiple of the state dimension {STATE_DIM}"
        )
    depth = theta.arch.n_inputs // STATE_DIM
    returns = np.empty(episodes)
    for ep in range(episodes):
        ep_seed = np.random.SeedSequence(entropy=(seed, ep)).generate_state(1, dtype=np.uint64)[0]
        state = env_reset(int(ep_seed), setpoint=setpoint, init=init, config=config)
        stack = np.tile(state.observable.as_array(), (depth, 1))
        total = 0.0
        for _ in range(horizon):
            action = nn.policy_forward(theta, stack.ravel())
            state, reward = env_step(state, Action.from_array(action))
            total += reward
            stack[:-1] = stack[1:]
            stack[-1] = state.observable.as_array()
        returns[ep] = total
    return EvalReport.from_returns(returns, horizon, seed)


def save_report(report: EvalReport, json_path, csv_path=None) -> None:
    with open(json_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["episode", "return"])
            for i, r in enumerate(report.returns):
                writer.writerow([i, repr(float(r))])


# ---------------------------------------------------------------------------
# Score tables and rank aggregation


@dataclass
class ScoreTable:
    """Algorithms-by-datasets score matrix (higher is better); NaN marks a
    missing cell. ``provenance`` labels where each row's numbers came from."""

    algorithms: list
    datasets: list
    scores: np.ndarray
    standard_errors: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.shape != (len(self.algorithms), len(self.datasets)):
            raise ValidationError(
                f"score matrix shape {self.scores.shape} does not match "
                f"{len(self.algorithms)} algorithms x {len(self.datasets)} datasets"
            )

    def score(self, algorithm: str, dataset: str) -> float:
        return float(self.scores[self.algorithms.index(algorithm), self.datasets.index(dataset)])


def _descending_ranks(scores: np.ndarray) -> np.ndarray:
    """Rank 1 for the highest score; ties share the average of their ranks."""
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(scores.size)
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def column_ranks(table: ScoreTable, dataset: str) -> dict:
    """Ranks of the algorithms with a score in one dataset column."""
    col = table.scores[:, table.datasets.index(dataset)]
    present = ~np.isnan(col)
    ranks = _descending_ranks(col[present])
    return {alg: float(r) for alg, r in zip(np.asarray(table.algorithms)[present], ranks)}


def average_rank(table: ScoreTable) -> dict:
    """Mean per-dataset rank of each algorithm (rank 1 best, ties averaged).

    Missing cells are skipped column-wise; a column with fewer than two
    scores is excluded entirely with a warning.
    """
    if len(table.algorithms) < 2:
        raise ValidationError("rank aggregation needs at least two algorithms")
    sums = {alg: 0.0 for alg in table.algorithms}
    counts = {alg: 0 for alg in table.algorithms}
    for dataset in table.datasets:
        col = table.scores[:, table.datasets.index(dataset)]
        if np.count_nonzero(~np.isnan(col)) < 2:
            warnings.warn(f"dataset column {dataset!r} has fewer than 2 scores; excluded from ranking")
            continue
        for alg, r in column_ranks(table, dataset).items():
            sums[alg] += r
            counts[alg] += 1
    return {alg: sums[alg] / counts[alg] for alg in table.algorithms if counts[alg] > 0}


def load_benchmark_table() -> ScoreTable:
    """The bundled published benchmark scores (tenth-percentile returns)."""
    with resources.files("wsbc.fixtures").joinpath("benchmark_scores.json").open() as fh:
        raw = json.load(fh)
    scores = np.array(
        [[np.nan if cell is None else float(cell) for cell in row] for row in raw["scores"]]
    )
    errors = np.array(
        [[np.nan if cell is None else float(cell) for cell in row] for row in raw["standard_errors"]]
    )
    return ScoreTable(
        algorithms=list(raw["algorithms"]),
        datasets=list(raw["datasets"]),
        scores=scores,
        standard_errors=errors,
        provenance={alg: "reported" for alg in raw["algorithms"]},
    )


# ---------------------------------------------------------------------------
# d-sensitivity sweep


@dataclass
class SweepResult:
    """Every (d, seed) search-and-evaluate cell plus the per-d summary."""

    d_values: list
    seeds: list
    reports: dict  # (d, seed) -> EvalReport
    searches: dict  # (d, seed) -> SearchResult
    tenth_percentile_by_d: dict  # d -> tenth percentile of per-seed mean returns

    def score_table(self, dataset_label: str = "dataset") -> ScoreTable:
        scores = np.array([[self.tenth_percentile_by_d[d]] for d in self.d_values])
        return ScoreTable(
            algorithms=[f"wsbc[d={d}]" for d in self.d_values],
            datasets=[dataset_label],
            scores=scores,
            provenance={f"wsbc[d={d}]": "measured" for d in self.d_values},
        )


def sweep_d(
    dataset: Dataset,
    ensemble: Ensemble,
    psi: nn.PolicyWeights,
    d_values,
    seeds,
    swarm_cfg: SwarmConfig,
    rollout_cfg: OvershootConfig,
    mode: str = "pure",
    n_start_windows: int = 20,
    episodes: int = 100,
    horizon: int = 100,
    env_config: MiniIBConfig = MiniIBConfig(),
    setpoint: float = 50.0,
    init="fixed",
) -> SweepResult:
    """Search then evaluate for every (d, seed) pair.

    Each seed reuses the same evaluation noise across d values, so per-seed
    comparisons between d values are paired. The per-d summary is the tenth
    percentile over seeds of the per-seed mean evaluation return.
    """
    d_values = list(d_values)
    seeds = list(seeds)
    if not d_values or not seeds:
        raise ValidationError("sweep needs at least one d value and one seed")
    reports, searches = {}, {}
    for d in d_values:
        for seed in seeds:
            result = wsbc_search(
                ensemble,
                psi,
                dataset,
                d,
                replace(swarm_cfg, seed=seed),
                rollout_cfg,
                mode=mode,
                n_start_windows=n_start_windows,
            )
            report = evaluate_policy(
                result.theta_star, episodes, horizon, seed=seed,
                config=env_config, setpoint=setpoint, init=init,
            )
            searches[(d, seed)] = result
            reports[(d, seed)] = report
    tenth = {
        d: percentile([reports[(d, s)].mean for s in seeds], 10.0)
        for d in d_values
    }
    return SweepResult(d_values, seeds, reports, searches, tenth)


# ---------------------------------------------------------------------------
# Plot-script emission (plain text, read the CSVs written next to them)


RETURN_PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Plot tenth-percentile return against the constraint radius d.\"\"\"
import csv
import matplotlib.pyplot as plt

ds, tenth = [], []
with open({csv_name!r}) as fh:
    for row in csv.DictReader(fh):
        ds.append(float(row["d"]))
        tenth.append(float(row["tenth_percentile"]))
plt.semilogx(ds, tenth, marker="o")
plt.xlabel("constraint radius d")
plt.ylabel("tenth-percentile return")
plt.grid(True, alpha=0.3)
plt.tight_layout()
plt.savefig("return_vs_d.png", dpi=150)
"""

RANK_PLOT_SCRIPT = """\
#!/usr/bin/env python3
\"\"\"Plot the average rank of each d variant across seeds (rank 1 best).\"\"\"
import csv
import matplotlib.pyplot as plt

ds, rank = [], []
with open({csv_name!r}) as fh:
    for row in csv.DictReader(fh):
        ds.append(float(row["d"]))
        rank.append(float(row["average_rank"]))
plt.semilogx(ds, rank, marker="o")
plt.gca().invert_yaxis()
plt.xlabel("constraint radius d")
plt.ylabel("average rank across seeds")
plt.grid(True, alpha=0.3)
plt.tight_layout()
plt.savefig("rank_vs_d.png", dpi=150)
"""


def rank_d_variants(sweep: SweepResult) -> dict:
    """Average rank of each d value when the per-seed mean returns are
    ranked within every seed (rank 1 best). A desk-scale analog of rank
    aggregation across datasets."""
    table = ScoreTable(
        algorithms=[f"d={d}" for d in sweep.d_values],
        datasets=[f"seed={s}" for s in sweep.seeds],
        scores=np.array(
            [[sweep.reports[(d, s)].mean for s in sweep.seeds] for d in sweep.d_values]
        ),
    )
    ranks = average_rank(table)
    return {d: ranks[f"d={d}"] for d in sweep.d_values}


def write_sweep_outputs(sweep: SweepResult, directory) -> None:
    """sweep.csv, rank.csv, per-cell reports, and the two plot scripts."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "tenth_percentile"] + [f"mean_seed_{s}" for s in sweep.seeds])
        for d in sweep.d_values:
            writer.writerow(
                [d, repr(sweep.tenth_percentile_by_d[d])]
                + [repr(sweep.reports[(d, s)].mean) for s in sweep.seeds]
            )
    ranks = rank_d_variants(sweep)
    with open(directory / "rank.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "average_rank"])
        for d in sweep.d_values:
            writer.writerow([d, repr(ranks[d])])
    (directory / "plot_return_vs_d.py").write_text(RETURN_PLOT_SCRIPT.format(csv_name="sweep.csv"))
    (directory / "plot_rank_vs_d.py").write_text(RANK_PLOT_SCRIPT.format(csv_name="rank.csv"))
    for (d, seed), report in sweep.reports.items():
        save_report(report, directory / f"report_d{d}_seed{seed}.json")
