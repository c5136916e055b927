"""Multi-seed training sweeps, aggregation and ablations.

An experiment is a TOML document::

    environment = "well_behaved"        # canonical name or GridSpec file
    algorithms = ["pg_mse", "pg_moe", "pg_regmoe"]
    num_runs = 16
    master_seed = 0
    output_dir = "out/well_behaved"

    [train]
    learning_rate = 0.9
    iterations = 334
    batch_size = 6
    beta = 0.8                          # used by pg_regmoe only

Every (algorithm, run) pair gets its own seed derived from the master seed,
so results do not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import tomli_w

from .entropy import mean_observation_function_entropy
from .gridworld import GridSpec, build_model, canonical_spec, CANONICAL, load_spec
from .policy import (
    IterationRecord,
    TrainConfig,
    TrainResult,
    save_policy,
    train,
    write_curve_csv,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALGORITHMS = {"pg_mse": "mse", "pg_moe": "moe", "pg_regmoe": "regmoe"}
METRICS = ("state_entropy", "observation_entropy")
Z95 = 1.96
DEFAULT_BETA = 0.8
SWEEP_PARAMETERS = ("alpha", "beta", "sigma2")

_TRAIN_KEYS = ("learning_rate", "iterations", "batch_size", "beta", "eval_every", "score_normalization")


@dataclass(frozen=True)
class ExperimentConfig:
    environment: str
    algorithms: tuple[str, ...] = ("pg_mse", "pg_moe", "pg_regmoe")
    num_runs: int = 16
    master_seed: int = 0
    output_dir: str = "out"
    train: Mapping = field(default_factory=dict)
    # share run seeds across algorithms (same seed for run i of every algorithm)
    paired_seeds: bool = False
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "train", dict(self.train))
        if not self.algorithms:
            raise ValueError("algorithms must be nonempty")
        unknown = [a for a in self.algorithms if a not in ALGORITHMS]
        if unknown:
            raise ValueError(f"unknown algorithms {unknown}; choose from {sorted(ALGORITHMS)}")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ValueError("algorithms listed twice")
        if self.num_runs < 1:
            raise ValueError("num_runs must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        extra = set(self.train) - set(_TRAIN_KEYS)
        if extra:
            raise ValueError(f"unknown train keys {sorted(extra)}")
        for alg in self.algorithms:
            self.train_config(alg, 0)  # surfaces invalid values early

    def train_config(self, algorithm: str, seed: int) -> TrainConfig:
        objective = ALGORITHMS[algorithm]
        kw = {k: v for k, v in self.train.items() if k != "beta"}
        beta = None
        if objective == "regmoe":
            beta = float(self.train.get("beta", DEFAULT_BETA))
        return TrainConfig(objective=objective, beta=beta, seed=seed, **kw)

    def with_train(self, **changes) -> "ExperimentConfig":
        return replace(self, train={**self.train, **changes})


def config_from_dict(d: Mapping) -> ExperimentConfig:
    known = {"environment", "algorithms", "num_runs", "master_seed", "output_dir", "train", "paired_seeds", "jobs"}
    extra = set(d) - known
    if extra:
        raise ValueError(f"unknown config keys {sorted(extra)}")
    if "environment" not in d:
        raise ValueError("config needs an environment")
    return ExperimentConfig(**d)


def config_to_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["algorithms"] = list(config.algorithms)
    d["train"] = {k: v for k, v in config.train.items() if v is not None}
    return d


def load_config(path) -> ExperimentConfig:
    """Read a TOML config; a relative GridSpec path resolves against the config's folder."""
    path = Path(path)
    with open(path, "rb") as fh:
        d = tomllib.load(fh)
    env = d.get("environment")
    if isinstance(env, str) and env not in CANONICAL and not Path(env).is_absolute():
        d["environment"] = str(path.parent / env)
    return config_from_dict(d)


def packaged_config(name: str) -> ExperimentConfig:
    """Shipped experiment configs, e.g. ``compare_well_behaved``."""
    ref = resources.files("moexplore.data").joinpath("experiments", f"{name}.toml")
    if not ref.is_file():
        raise FileNotFoundError(f"no packaged experiment named {name!r}; have {packaged_config_names()}")
    with ref.open("rb") as fh:
        return config_from_dict(tomllib.load(fh))


def packaged_config_names() -> list[str]:
    folder = resources.files("moexplore.data").joinpath("experiments")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".toml"))


def resolve_config(ref) -> ExperimentConfig:
    if Path(ref).is_file():
        return load_config(ref)
    return packaged_config(str(ref))


def environment_spec(config: ExperimentConfig) -> GridSpec:
    if config.environment in CANONICAL:
        return canonical_spec(config.environment)
    return load_spec(config.environment)


def run_seed(master_seed: int, algorithm: str, run_index: int, paired: bool = False) -> int:
    """63-bit seed from SHA-256 of the (master seed, algorithm, run index) triple."""
    tag = "*" if paired else algorithm
    digest = hashlib.sha256(f"{master_seed}/{tag}/{run_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


# -- aggregation ---------------------------------------------------------------

@dataclass
class AggregateCurve:
    algorithm: str
    iterations: np.ndarray
    mean: dict[str, np.ndarray]
    half_width: dict[str, np.ndarray]
    num_runs: int

    def ci(self, metric: str) -> tuple[np.ndarray, np.ndarray]:
        return self.mean[metric] - self.half_width[metric], self.mean[metric] + self.half_width[metric]

    def final(self, metric: str = "state_entropy") -> tuple[float, float]:
        return float(self.mean[metric][-1]), float(self.half_width[metric][-1])


def mean_and_half_width(values) -> tuple[np.ndarray, np.ndarray]:
    """Column means and normal-approximation 95% half-widths of a (runs x points) array."""
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    n = v.shape[0]
    mean = v.mean(axis=0)
    if n == 1:
        return mean, np.zeros_like(mean)
    return mean, Z95 * v.std(axis=0, ddof=1) / math.sqrt(n)


def aggregate(algorithm: str, runs: Sequence[Sequence[IterationRecord]]) -> AggregateCurve:
    if not runs:
        raise ValueError(f"no successful runs to aggregate for {algorithm}")
    iterations = np.array([r.iteration for r in runs[0]])
    for rec in runs[1:]:
        if not np.array_equal(iterations, [r.iteration for r in rec]):
            raise ValueError("runs recorded different iterations")
    mean, half = {}, {}
    for metric in METRICS:
        mean[metric], half[metric] = mean_and_half_width([[getattr(r, metric) for r in rec] for rec in runs])
    return AggregateCurve(algorithm, iterations, mean, half, len(runs))


# -- running -------------------------------------------------------------------

@dataclass
class RunOutcome:
    algorithm: str
    run_index: int
    seed: int
    result: TrainResult | None = None
    error: str | None = None


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    curves: dict[str, AggregateCurve]
    runs: list[RunOutcome]
    output_dir: Path | None = None

    @property
    def failures(self) -> list[RunOutcome]:
        return [r for r in self.runs if r.error is not None]

    def final_state_entropies(self, algorithm: str) -> np.ndarray:
        return np.array([r.result.final.state_entropy for r in self.runs
                         if r.algorithm == algorithm and r.result is not None])


def _execute(job) -> RunOutcome:
    model, algorithm, index, seed, cfg = job
    try:
        return RunOutcome(algorithm, index, seed, result=train(model, cfg))
    except Exception as exc:  # noqa: BLE001 - a failed run is recorded, never fatal
        return RunOutcome(algorithm, index, seed, error=f"{type(exc).__name__}: {exc}")


def run_experiment(config: ExperimentConfig, spec: GridSpec | None = None, write: bool = True,
                   output_dir=None) -> ExperimentResult:
    """Train every (algorithm, run) pair, aggregate, and optionally write results.

    Output layout under ``output_dir``: ``runs/<alg>_run<i>.csv`` learning
    curves, ``policies/<alg>_run<i>.policy`` final policies, ``curves.csv``
    and one SVG chart per metric, ``summary.csv`` and ``manifest.toml``
    (effective config, run seeds, failures).
    """
    spec = spec or environment_spec(config)
    model = build_model(spec)
    jobs = []
    for alg in config.algorithms:
        for i in range(config.num_runs):
            seed = run_seed(config.master_seed, alg, i, config.paired_seeds)
            jobs.append((model, alg, i, seed, config.train_config(alg, seed)))
    if config.jobs > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            outcomes = list(pool.map(_execute, jobs))
    else:
        outcomes = [_execute(j) for j in jobs]

    curves = {}
    for alg in config.algorithms:
        ok = [o.result.records for o in outcomes if o.algorithm == alg and o.result is not None]
        if ok:
            curves[alg] = aggregate(alg, ok)
    result = ExperimentResult(config, curves, outcomes)
    if write:
        result.output_dir = Path(output_dir or config.output_dir)
        write_experiment(result, spec)
    return result


def write_experiment(result: ExperimentResult, spec: GridSpec) -> None:
    from .plotting import emit_plot_data

    out = result.output_dir
    (out / "runs").mkdir(parents=True, exist_ok=True)
    (out / "policies").mkdir(exist_ok=True)
    for o in result.runs:
        stem = f"{o.algorithm}_run{o.run_index:03d}"
        if o.result is not None:
            write_curve_csv(out / "runs" / f"{stem}.csv", o.result.records, o.seed)
            save_policy(o.result.policy, out / "policies" / f"{stem}.policy")
    if result.curves:
        emit_plot_data(result.curves, out, title=spec.name)
    write_summary(result, out / "summary.csv")
    manifest = {
        "config": config_to_dict(result.config),
        "environment": {"name": spec.name, "version": spec.version,
                        "mean_observation_entropy": mean_observation_function_entropy(build_model(spec).observation)},
        "runs": [{"algorithm": o.algorithm, "run": o.run_index, "seed": o.seed,
                  "status": "ok" if o.error is None else "failed"} for o in result.runs],
        "failures": [{"algorithm": o.algorithm, "run": o.run_index, "seed": o.seed, "error": o.error}
                     for o in result.failures],
    }
    (out / "manifest.toml").write_text(tomli_w.dumps(manifest), encoding="utf-8")


SUMMARY_FIELDS = ("algorithm", "runs", "failed", "final_state_entropy", "state_half_width",
                  "final_observation_entropy", "observation_half_width")


def summary_rows(result: ExperimentResult) -> list[list]:
    rows = []
    for alg in result.config.algorithms:
        failed = sum(1 for o in result.failures if o.algorithm == alg)
        c = result.curves.get(alg)
        if c is None:
            rows.append([alg, 0, failed, "", "", "", ""])
            continue
        hs, ws = c.final("state_entropy")
        hx, wx = c.final("observation_entropy")
        rows.append([alg, c.num_runs, failed, repr(hs), repr(ws), repr(hx), repr(wx)])
    return rows


def write_summary(result: ExperimentResult, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        w.writerows(summary_rows(result))


# -- ablations -----------------------------------------------------------------

@dataclass
class SweepResult:
    parameter: str
    values: list[float]
    results: list[ExperimentResult]

    def table(self) -> list[dict]:
        rows = []
        for value, res in zip(self.values, self.results):
            for alg, c in res.curves.items():
                hs, ws = c.final("state_entropy")
                rows.append({"parameter": self.parameter, "value": value, "algorithm": alg,
                             "final_state_entropy": hs, "half_width": ws})
        return rows


def ablation_sweep(config: ExperimentConfig, parameter: str, values: Sequence[float],
                   write: bool = True, output_dir=None) -> SweepResult:
    """One experiment per value of ``alpha`` (learning rate), ``beta`` or ``sigma2``."""
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"parameter must be one of {SWEEP_PARAMETERS}")
    if parameter == "beta" and "pg_regmoe" not in config.algorithms:
        raise ValueError("a beta sweep needs pg_regmoe among the algorithms")
    base_spec = environment_spec(config)
    if parameter == "sigma2" and not any(o.kind == "gaussian_manhattan" for o in base_spec.observation.values()):
        raise ValueError("environment has no Gaussian observation region to vary")
    root = Path(output_dir or config.output_dir)
    results = []
    for v in values:
        spec, cfg = base_spec, config
        if parameter == "alpha":
            cfg = config.with_train(learning_rate=float(v))
        elif parameter == "beta":
            cfg = config.with_train(beta=float(v))
        else:
            spec = base_spec.with_sigma2(float(v))
        results.append(run_experiment(cfg, spec, write=write, output_dir=root / f"{parameter}={v!r}"))
    sweep = SweepResult(parameter, [float(v) for v in values], results)
    if write:
        write_sweep_table(sweep, root / f"sweep_{parameter}.csv")
    return sweep


def write_sweep_table(sweep: SweepResult, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "value", "algorithm", "final_state_entropy", "half_width"])
        for r in sweep.table():
            w.writerow([r["parameter"], repr(r["value"]), r["algorithm"],
                        repr(r["final_state_entropy"]), repr(r["half_width"])])
