"""Softmax tabular policies and REINFORCE training for entropy objectives.

Three objectives share one loop:

``mse``
    state-conditioned policy, return = entropy of the latent state sequence
    (the fully observable baseline).
``moe``
    observation-conditioned policy, return = entropy of the observation
    sequence.
``regmoe``
    as ``moe`` minus ``beta`` times the average, over the episode's empirical
    observation distribution, of the entropy of each observation's
    normalised column of ``O``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import entropy
from .bounds import normalized_columns
from .pomdp import (
    Conditioning,
    PomdpModel,
    Sampler,
    Trajectory,
    TrajectoryBatch,
    enumerate_arrays,
    policy_transition,
    validate_model,
)

OBJECTIVES = ("mse", "moe", "regmoe")
# "horizon" divides the trajectory score by T (per-step average log-likelihood);
# "sum" is the raw estimator.
SCORE_NORMALIZATIONS = ("horizon", "sum")


def softmax_rows(theta: np.ndarray) -> np.ndarray:
    z = np.exp(theta - theta.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class SoftmaxPolicy:
    theta: np.ndarray
    conditioning: Conditioning = "observation"

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float, copy=True)
        if theta.ndim != 2:
            raise ValueError("theta must be a (symbols x actions) matrix")
        if not np.isfinite(theta).all():
            raise ValueError("theta has non-finite entries")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def uniform(cls, num_symbols: int, num_actions: int,
                conditioning: Conditioning = "observation") -> "SoftmaxPolicy":
        return cls(np.zeros((num_symbols, num_actions)), conditioning)

    @property
    def num_symbols(self) -> int:
        return self.theta.shape[0]

    @property
    def num_actions(self) -> int:
        return self.theta.shape[1]

    def probabilities(self) -> np.ndarray:
        return softmax_rows(self.theta)


def action_distribution(policy: SoftmaxPolicy, symbol: int) -> np.ndarray:
    if not 0 <= symbol < policy.num_symbols:
        raise IndexError(f"symbol {symbol} outside 0..{policy.num_symbols - 1}")
    return softmax_rows(policy.theta[symbol])


def batch_scores(table: np.ndarray, symbols: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Per-episode softmax scores, shape (episodes, symbols, actions).

    Entry (i, x, a) is ``sum_t 1{x_t = x} (1{a_t = a} - pi(a|x))``.
    """
    K, A = table.shape
    n, _ = symbols.shape
    offset = np.arange(n)[:, None]
    taken = np.bincount((offset * K * A + symbols * A + actions).ravel(), minlength=n * K * A)
    visits = np.bincount((offset * K + symbols).ravel(), minlength=n * K)
    return taken.reshape(n, K, A) - visits.reshape(n, K, 1) * table[None]


def policy_score(policy: SoftmaxPolicy, trajectory: Trajectory,
                 conditioning: Conditioning | None = None) -> np.ndarray:
    """Gradient of ``sum_t log pi(a_t | symbol_t)`` with respect to theta."""
    conditioning = conditioning or policy.conditioning
    symbols = trajectory.symbols(conditioning)
    if symbols.size and (symbols.max() >= policy.num_symbols or symbols.min() < 0):
        raise IndexError("trajectory symbols fall outside the policy's support")
    return batch_scores(policy.probabilities(), symbols[None], trajectory.actions[None])[0]


def moe_return(trajectory: Trajectory, num_observations: int | None = None) -> float:
    x = trajectory.observations
    return entropy.trajectory_entropy(x, num_observations or int(x.max()) + 1)


def regularizer_weights(observation) -> np.ndarray:
    """Normalised-column entropy per observation; NaN where the column is all zero."""
    O = np.asarray(observation, dtype=float)
    mass = O.sum(axis=0)
    weights = np.full(O.shape[1], np.nan)
    live = mass > 0
    weights[live] = entropy.row_entropies(normalized_columns(O[:, live]).T)
    return weights


class ZeroColumnVisited(ValueError):
    pass


def regmoe_returns(observations: np.ndarray, weights: np.ndarray, beta: float) -> np.ndarray:
    X = weights.shape[0]
    p_hat = entropy.batch_empirical(observations, X)
    visited = p_hat > 0
    if np.isnan(weights[visited.any(axis=0)]).any():
        raise ZeroColumnVisited("a visited observation has an all-zero column in O")
    return entropy.row_entropies(p_hat) - beta * (p_hat @ np.nan_to_num(weights))


def regmoe_return(trajectory: Trajectory, observation, beta: float) -> float:
    if not 0 <= beta <= 1:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return float(regmoe_returns(trajectory.observations[None], regularizer_weights(observation), beta)[0])


def reinforce_gradient(batch: Sequence[Trajectory] | TrajectoryBatch, returns, policy: SoftmaxPolicy) -> np.ndarray:
    """``(1/N) sum_i score_i * return_i``."""
    batch = TrajectoryBatch.from_trajectories(batch)
    returns = np.asarray(returns, dtype=float)
    if returns.shape != (len(batch),):
        raise ValueError(f"{len(returns)} returns for {len(batch)} trajectories")
    scores = batch_scores(policy.probabilities(), batch.symbols(policy.conditioning), batch.actions)
    return np.tensordot(returns, scores, axes=1) / len(batch)


class NonFiniteGradientError(FloatingPointError):
    pass


def gradient_step(policy: SoftmaxPolicy, gradient, alpha: float) -> SoftmaxPolicy:
    gradient = np.asarray(gradient, dtype=float)
    if gradient.shape != policy.theta.shape:
        raise ValueError(f"gradient shape {gradient.shape} != theta shape {policy.theta.shape}")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not np.isfinite(gradient).all():
        raise NonFiniteGradientError("gradient has non-finite entries")
    return SoftmaxPolicy(policy.theta + alpha * gradient, policy.conditioning)


def conditioning_for(objective: str) -> Conditioning:
    return "latent_state" if objective == "mse" else "observation"


def batch_returns(batch: TrajectoryBatch, model: PomdpModel, objective: str, beta: float | None = None,
                  weights: np.ndarray | None = None) -> np.ndarray:
    if objective == "mse":
        return entropy.batch_trajectory_entropy(batch.states, model.num_states)
    if objective == "moe":
        return entropy.batch_trajectory_entropy(batch.observations, model.num_observations)
    if objective == "regmoe":
        if weights is None:
            weights = regularizer_weights(model.observation)
        return regmoe_returns(batch.observations, weights, beta)
    raise ValueError(f"unknown objective {objective!r}")


# -- exact oracles on enumerable instances ----------------------------------

def exact_objective(model: PomdpModel, policy: SoftmaxPolicy, objective: str = "moe",
                    beta: float | None = None) -> float:
    """Expected trajectory return, summed over the full trajectory space."""
    e = enumerate_arrays(model, policy)
    return float(e.probabilities @ batch_returns(e.batch, model, objective, beta))


def exact_gradient(model: PomdpModel, policy: SoftmaxPolicy, objective: str = "moe",
                   beta: float | None = None) -> np.ndarray:
    """``sum_traj q(traj) * score(traj) * return(traj)`` by enumeration."""
    e = enumerate_arrays(model, policy)
    ret = batch_returns(e.batch, model, objective, beta)
    scores = batch_scores(policy.probabilities(), e.batch.symbols(policy.conditioning), e.actions)
    return np.tensordot(e.probabilities * ret, scores, axes=1)


# -- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    objective: str
    learning_rate: float = 0.9
    iterations: int = 334
    batch_size: int = 6
    beta: float | None = None
    seed: int = 0
    eval_every: int = 1
    score_normalization: str = "horizon"

    def __post_init__(self):
        if self.score_normalization not in SCORE_NORMALIZATIONS:
            raise ValueError(f"score_normalization must be one of {SCORE_NORMALIZATIONS}")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.iterations < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("iterations, batch_size and eval_every must be positive")
        if (self.beta is not None) != (self.objective == "regmoe"):
            raise ValueError("beta is required for regmoe and only for regmoe")
        if self.beta is not None and not 0 <= self.beta <= 1:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    objective_value: float
    state_entropy: float
    observation_entropy: float
    gradient_norm: float


@dataclass
class TrainResult:
    records: list[IterationRecord]
    policy: SoftmaxPolicy
    config: TrainConfig
    extra: dict = field(default_factory=dict)

    @property
    def final(self) -> IterationRecord:
        return self.records[-1]


class TrainingDiverged(RuntimeError):
    pass


def exact_entropies(model: PomdpModel, table: np.ndarray, conditioning: Conditioning) -> tuple[float, float]:
    kernel = policy_transition(model, table, conditioning)
    p = np.array(model.initial)
    acc = np.zeros_like(p)
    for _ in range(model.horizon):
        acc += p
        p = p @ kernel
    p_s = acc / model.horizon
    return float(entropy.row_entropies(p_s)), float(entropy.row_entropies(p_s @ model.observation))


def train(model: PomdpModel, config: TrainConfig) -> TrainResult:
    """Plain REINFORCE from a uniform policy.

    Iteration k samples N episodes with the current policy, records metrics
    (every ``eval_every`` iterations), then takes an ascent step.  A last
    batch is drawn at k = K for the final record but no step follows it.
    With ``score_normalization="horizon"`` the step direction is the
    REINFORCE estimate divided by the horizon.
    """
    problems = validate_model(model)
    if problems:
        raise ValueError("invalid model: " + "; ".join(map(str, problems[:5])))
    conditioning = conditioning_for(config.objective)
    policy = SoftmaxPolicy.uniform(model.support_size(conditioning), model.num_actions, conditioning)
    rng = np.random.default_rng(config.seed)
    sampler = Sampler(model)
    weights = regularizer_weights(model.observation) if config.objective == "regmoe" else None
    records = []
    K = config.iterations
    for k in range(K + 1):
        table = policy.probabilities()
        batch = sampler.sample(table, conditioning, rng, config.batch_size)
        returns = batch_returns(batch, model, config.objective, config.beta, weights)
        scores = batch_scores(table, batch.symbols(conditioning), batch.actions)
        grad = np.tensordot(returns, scores, axes=1) / config.batch_size
        if config.score_normalization == "horizon":
            grad = grad / model.horizon
        if k % config.eval_every == 0 or k == K:
            h_s, h_x = exact_entropies(model, table, conditioning)
            records.append(IterationRecord(k, float(returns.mean()), h_s, h_x, float(np.linalg.norm(grad))))
        if k < K:
            try:
                policy = gradient_step(policy, grad, config.learning_rate)
            except (NonFiniteGradientError, ValueError) as exc:
                raise TrainingDiverged(f"iteration {k}: {exc}") from exc
    return TrainResult(records, policy, config)


CURVE_FIELDS = ("iteration", "objective_value", "state_entropy", "observation_entropy", "gradient_norm", "seed")


def write_curve_csv(path, records: Sequence[IterationRecord], seed: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for r in records:
            w.writerow([r.iteration, repr(r.objective_value), repr(r.state_entropy),
                        repr(r.observation_entropy), repr(r.gradient_norm), seed])


def read_curve_csv(path) -> tuple[list[IterationRecord], int]:
    records, seed = [], None
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            seed = int(row["seed"])
            records.append(IterationRecord(int(row["iteration"]), float(row["objective_value"]),
                                           float(row["state_entropy"]), float(row["observation_entropy"]),
                                           float(row["gradient_norm"])))
    return records, seed


# -- policy files -------------------------------------------------------------

def policy_to_text(policy: SoftmaxPolicy) -> str:
    lines = ["# moexplore softmax policy v1",
             f"conditioning {policy.conditioning}",
             f"symbols {policy.num_symbols}",
             f"actions {policy.num_actions}",
             "theta"]
    lines += [" ".join(repr(float(v)) for v in row) for row in policy.theta]
    return "\n".join(lines) + "\n"


def policy_from_text(text: str) -> SoftmaxPolicy:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    header = {}
    i = 0
    while lines[i] != "theta":
        key, _, value = lines[i].partition(" ")
        header[key] = value
        i += 1
    n = int(header["symbols"])
    if len(lines) - i - 1 != n:
        raise ValueError(f"theta block has {len(lines) - i - 1} rows, header says {n}")
    theta = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:]])
    if theta.shape != (n, int(header["actions"])):
        raise ValueError(f"theta block has shape {theta.shape}")
    return SoftmaxPolicy(theta, header.get("conditioning", "observation"))


def save_policy(policy: SoftmaxPolicy, path) -> None:
    Path(path).write_text(policy_to_text(policy), encoding="utf-8")


def load_policy(path) -> SoftmaxPolicy:
    return policy_from_text(Path(path).read_text(encoding="utf-8"))
