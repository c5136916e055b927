"""Finite-horizon tabular POMDPs without rewards.

A model holds the transition tensor ``P[s, a, s']``, the row-stochastic
observation matrix ``O[s, x]``, the initial distribution ``mu`` and the
horizon ``T``.  Policies are tables of action probabilities with one row per
conditioning symbol: observations for the usual agent, latent states for the
fully observable baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal, Sequence

import numpy as np

Conditioning = Literal["observation", "latent_state"]
CONDITIONINGS = ("observation", "latent_state")

STOCHASTIC_TOL = 1e-12
POLICY_TOL = 1e-9
DEFAULT_ENUMERATION_CAP = 10**7


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class PomdpModel:
    transition: np.ndarray
    observation: np.ndarray
    initial: np.ndarray
    horizon: int
    state_labels: tuple[str, ...] | None = None
    observation_labels: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "observation", _frozen(self.observation))
        object.__setattr__(self, "initial", _frozen(self.initial))
        object.__setattr__(self, "horizon", int(self.horizon))
        for name in ("state_labels", "observation_labels"):
            labels = getattr(self, name)
            if labels is not None:
                object.__setattr__(self, name, tuple(str(v) for v in labels))
        if self.transition.ndim != 3 or self.observation.ndim != 2 or self.initial.ndim != 1:
            raise ValueError("transition must be 3-d, observation 2-d and initial 1-d")
        S = self.initial.shape[0]
        if self.transition.shape[0] != S or self.transition.shape[2] != S:
            raise ValueError(f"transition shape {self.transition.shape} does not match {S} states")
        if self.observation.shape[0] != S:
            raise ValueError(f"observation shape {self.observation.shape} does not match {S} states")

    @property
    def num_states(self) -> int:
        return self.initial.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def num_observations(self) -> int:
        return self.observation.shape[1]

    def support_size(self, conditioning: Conditioning) -> int:
        _check_conditioning(conditioning)
        return self.num_observations if conditioning == "observation" else self.num_states

    def with_observation(self, observation, observation_labels=None) -> "PomdpModel":
        return PomdpModel(self.transition, observation, self.initial, self.horizon,
                          self.state_labels, observation_labels)

    def with_horizon(self, horizon: int) -> "PomdpModel":
        return PomdpModel(self.transition, self.observation, self.initial, horizon,
                          self.state_labels, self.observation_labels)


@dataclass(frozen=True)
class Violation:
    location: str
    residual: float

    def __str__(self):
        return f"{self.location}: residual {self.residual:.3g}"


def validate_model(model: PomdpModel, tol: float = STOCHASTIC_TOL) -> list[Violation]:
    """Return every broken stochasticity invariant; an empty list means ok."""
    out = []

    def check_entries(name, arr):
        bad = np.argwhere((arr < 0) | (arr > 1) | ~np.isfinite(arr))
        for idx in bad:
            v = arr[tuple(idx)]
            out.append(Violation(f"{name}{list(idx)} entry {v!r} outside [0, 1]",
                                 float(max(-v, v - 1)) if np.isfinite(v) else float("inf")))

    check_entries("transition", model.transition)
    check_entries("observation", model.observation)
    check_entries("initial", model.initial)
    sums = model.transition.sum(axis=2)
    for s, a in np.argwhere(np.abs(sums - 1) > tol):
        out.append(Violation(f"transition slice (state {s}, action {a})", float(abs(sums[s, a] - 1))))
    rows = model.observation.sum(axis=1)
    for s in np.flatnonzero(np.abs(rows - 1) > tol):
        out.append(Violation(f"observation row {s}", float(abs(rows[s] - 1))))
    if abs(model.initial.sum() - 1) > tol:
        out.append(Violation("initial distribution", float(abs(model.initial.sum() - 1))))
    if model.horizon < 1:
        out.append(Violation(f"horizon {model.horizon} < 1", float(1 - model.horizon)))
    return out


def _check_conditioning(conditioning):
    if conditioning not in CONDITIONINGS:
        raise ValueError(f"conditioning must be one of {CONDITIONINGS}, got {conditioning!r}")


def resolve_conditioning(policy, conditioning: Conditioning | None) -> Conditioning:
    if conditioning is None:
        conditioning = getattr(policy, "conditioning", "observation")
    _check_conditioning(conditioning)
    return conditioning


def policy_table(policy, model: PomdpModel, conditioning: Conditioning) -> np.ndarray:
    """Coerce ``policy`` to a (symbols x actions) probability table and check it.

    ``policy`` is either an array-like table or any object exposing
    ``probabilities()`` (see :class:`moexplore.policy.SoftmaxPolicy`).
    """
    table = policy.probabilities() if hasattr(policy, "probabilities") else policy
    table = np.asarray(table, dtype=float)
    shape = (model.support_size(conditioning), model.num_actions)
    if table.shape != shape:
        raise ValueError(f"policy table has shape {table.shape}, expected {shape} for {conditioning}")
    residual = np.abs(table.sum(axis=1) - 1)
    if residual.max() > POLICY_TOL or (table < 0).any():
        raise ValueError(f"policy rows do not normalize (max residual {residual.max():.3g})")
    return table


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        for name in ("states", "observations", "actions"):
            object.__setattr__(self, name, _frozen(getattr(self, name), dtype=np.int64))
        if not (len(self.states) == len(self.observations) == len(self.actions)):
            raise ValueError("trajectory vectors must have identical length")

    def __len__(self):
        return len(self.states)

    def symbols(self, conditioning: Conditioning) -> np.ndarray:
        return self.observations if conditioning == "observation" else self.states


@dataclass(frozen=True)
class TrajectoryBatch:
    """Rectangular (episodes x horizon) index arrays."""

    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray

    def __len__(self):
        return self.states.shape[0]

    def __getitem__(self, i) -> Trajectory:
        return Trajectory(self.states[i], self.observations[i], self.actions[i])

    def __iter__(self) -> Iterator[Trajectory]:
        return (self[i] for i in range(len(self)))

    def symbols(self, conditioning: Conditioning) -> np.ndarray:
        return self.observations if conditioning == "observation" else self.states

    @classmethod
    def from_trajectories(cls, trajectories: Sequence[Trajectory]) -> "TrajectoryBatch":
        if isinstance(trajectories, TrajectoryBatch):
            return trajectories
        if not trajectories:
            raise ValueError("empty trajectory batch")
        return cls(np.stack([t.states for t in trajectories]),
                   np.stack([t.observations for t in trajectories]),
                   np.stack([t.actions for t in trajectories]))


def cumulative(p: np.ndarray) -> np.ndarray:
    """Row-wise CDF normalised so the last entry is exactly 1."""
    c = np.cumsum(p, axis=-1)
    return c / c[..., -1:]


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # first index whose cdf exceeds u
    return (cdf_rows <= u[:, None]).sum(axis=1)


@dataclass(frozen=True)
class Sampler:
    """Precomputed inverse-CDF tables for fast batched episode sampling.

    Each step consumes three uniforms per episode (state, observation,
    action) in that order regardless of conditioning, so two policies that
    induce the same action distributions draw the same trajectories.
    """

    model: PomdpModel
    cdf_initial: np.ndarray = field(init=False, repr=False)
    cdf_transition: np.ndarray = field(init=False, repr=False)
    cdf_observation: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "cdf_initial", cumulative(self.model.initial))
        object.__setattr__(self, "cdf_transition", cumulative(self.model.transition))
        object.__setattr__(self, "cdf_observation", cumulative(self.model.observation))

    def sample(self, table: np.ndarray, conditioning: Conditioning, rng: np.random.Generator,
               n: int) -> TrajectoryBatch:
        T = self.model.horizon
        cdf_policy = cumulative(table)
        states = np.empty((n, T), dtype=np.int64)
        obs = np.empty((n, T), dtype=np.int64)
        actions = np.empty((n, T), dtype=np.int64)
        u = rng.random((T, 3, n))
        s = _draw(np.broadcast_to(self.cdf_initial, (n, self.model.num_states)), u[0, 0])
        for t in range(T):
            if t > 0:
                s = _draw(self.cdf_transition[s, a], u[t, 0])
            x = _draw(self.cdf_observation[s], u[t, 1])
            a = _draw(cdf_policy[x if conditioning == "observation" else s], u[t, 2])
            states[:, t], obs[:, t], actions[:, t] = s, x, a
        return TrajectoryBatch(states, obs, actions)


def sample_batch(model: PomdpModel, policy, conditioning: Conditioning | None, rng: np.random.Generator,
                 n: int) -> TrajectoryBatch:
    conditioning = resolve_conditioning(policy, conditioning)
    table = policy_table(policy, model, conditioning)
    return Sampler(model).sample(table, conditioning, rng, n)


def sample_trajectory(model: PomdpModel, policy, conditioning: Conditioning | None,
                      rng: np.random.Generator) -> Trajectory:
    """Sample one episode: s1 ~ mu, x_t ~ O(.|s_t), a_t ~ pi(.|symbol), s_t+1 ~ P(.|s_t, a_t)."""
    return sample_batch(model, policy, conditioning, rng, 1)[0]


def policy_transition(model: PomdpModel, table: np.ndarray, conditioning: Conditioning) -> np.ndarray:
    """State-to-state kernel induced by a policy table."""
    state_action = model.observation @ table if conditioning == "observation" else table
    return np.einsum("sa,sat->st", state_action, model.transition)


def state_marginals(model: PomdpModel, policy, conditioning: Conditioning | None = None) -> np.ndarray:
    """(T x S) array of Pr(s_t = s) by forward marginalisation."""
    conditioning = resolve_conditioning(policy, conditioning)
    table = policy_table(policy, model, conditioning)
    kernel = policy_transition(model, table, conditioning)
    out = np.empty((model.horizon, model.num_states))
    p = np.array(model.initial)
    for t in range(model.horizon):
        out[t] = p
        p = p @ kernel
    return out


def exact_state_occupancy(model: PomdpModel, policy, conditioning: Conditioning | None = None) -> np.ndarray:
    return state_marginals(model, policy, conditioning).mean(axis=0)


def exact_observation_occupancy(model: PomdpModel, policy,
                                conditioning: Conditioning | None = None) -> np.ndarray:
    return exact_state_occupancy(model, policy, conditioning) @ model.observation


class EnumerationCapExceeded(ValueError):
    def __init__(self, count, cap):
        super().__init__(f"trajectory space has {count} entries, above the cap of {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class TrajectoryEnumeration:
    """All positive-probability (s, x, a) paths as stacked index arrays."""

    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    probabilities: np.ndarray

    @property
    def batch(self) -> TrajectoryBatch:
        return TrajectoryBatch(self.states, self.observations, self.actions)

    def state_occupancy(self, num_states: int) -> np.ndarray:
        T = self.states.shape[1]
        counts = np.zeros(num_states)
        for t in range(T):
            np.add.at(counts, self.states[:, t], self.probabilities)
        return counts / T


def enumerate_arrays(model: PomdpModel, policy, conditioning: Conditioning | None = None,
                     cap: int = DEFAULT_ENUMERATION_CAP) -> TrajectoryEnumeration:
    conditioning = resolve_conditioning(policy, conditioning)
    table = policy_table(policy, model, conditioning)
    S, X, A, T = model.num_states, model.num_observations, model.num_actions, model.horizon
    count = (S * X * A) ** T
    if count > cap:
        raise EnumerationCapExceeded(count, cap)
    O, P = model.observation, model.transition
    s = np.flatnonzero(model.initial > 0)
    prob = model.initial[s]
    hist_s = s[:, None]
    hist_x = np.empty((len(s), 0), dtype=np.int64)
    hist_a = np.empty((len(s), 0), dtype=np.int64)
    for t in range(T):
        if t > 0:
            cur_s, cur_a = hist_s[:, -1], hist_a[:, -1]
            rows, nxt = np.nonzero(P[cur_s, cur_a] > 0)
            prob = prob[rows] * P[cur_s[rows], cur_a[rows], nxt]
            hist_s = np.column_stack([hist_s[rows], nxt])
            hist_x, hist_a = hist_x[rows], hist_a[rows]
        cur_s = hist_s[:, -1]
        rows, x = np.nonzero(O[cur_s] > 0)
        prob = prob[rows] * O[cur_s[rows], x]
        hist_s, hist_a = hist_s[rows], hist_a[rows]
        hist_x = np.column_stack([hist_x[rows], x])
        sym = x if conditioning == "observation" else hist_s[:, -1]
        rows, a = np.nonzero(table[sym] > 0)
        prob = prob[rows] * table[sym[rows], a]
        hist_s, hist_x = hist_s[rows], hist_x[rows]
        hist_a = np.column_stack([hist_a[rows], a])
    return TrajectoryEnumeration(hist_s, hist_x, hist_a, prob)


def enumerate_trajectories(model: PomdpModel, policy, conditioning: Conditioning | None = None,
                           cap: int = DEFAULT_ENUMERATION_CAP) -> list[tuple[Trajectory, float]]:
    """Brute-force list of every positive-probability trajectory with its probability."""
    e = enumerate_arrays(model, policy, conditioning, cap)
    return [(Trajectory(e.states[i], e.observations[i], e.actions[i]), float(e.probabilities[i]))
            for i in range(len(e.probabilities))]


# -- text format -----------------------------------------------------------

FORMAT_HEADER = "# moexplore pomdp model v1"


def _fmt_row(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def model_to_text(model: PomdpModel) -> str:
    lines = [FORMAT_HEADER,
             f"states {model.num_states}",
             f"observations {model.num_observations}",
             f"actions {model.num_actions}",
             f"horizon {model.horizon}"]
    if model.state_labels is not None:
        lines.append("state_labels " + " ".join(model.state_labels))
    if model.observation_labels is not None:
        lines.append("observation_labels " + " ".join(model.observation_labels))
    lines += ["initial", _fmt_row(model.initial)]
    for a in range(model.num_actions):
        lines.append(f"transition {a}")
        lines += [_fmt_row(r) for r in model.transition[:, a, :]]
    lines.append("observation")
    lines += [_fmt_row(r) for r in model.observation]
    return "\n".join(lines) + "\n"


def model_from_text(text: str) -> PomdpModel:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    it = iter(lines)
    dims, labels = {}, {}
    initial = observation = None
    transition: dict[int, np.ndarray] = {}

    def read_rows(n):
        return np.array([[float(v) for v in next(it).split()] for _ in range(n)])

    for line in it:
        key, _, rest = line.partition(" ")
        if key in ("states", "observations", "actions", "horizon"):
            dims[key] = int(rest)
        elif key in ("state_labels", "observation_labels"):
            labels[key] = tuple(rest.split())
        elif key == "initial":
            initial = read_rows(1)[0]
        elif key == "transition":
            transition[int(rest)] = read_rows(dims["states"])
        elif key == "observation":
            observation = read_rows(dims["states"])
        else:
            raise ValueError(f"unknown model section {key!r}")
    missing = {"states", "observations", "actions", "horizon"} - dims.keys()
    if missing or initial is None or observation is None:
        raise ValueError(f"incomplete model document (missing {sorted(missing) or 'matrices'})")
    if sorted(transition) != list(range(dims["actions"])):
        raise ValueError("transition blocks do not cover every action")
    P = np.stack([transition[a] for a in range(dims["actions"])], axis=1)
    model = PomdpModel(P, observation, initial, dims["horizon"],
                       labels.get("state_labels"), labels.get("observation_labels"))
    if model.num_observations != dims["observations"]:
        raise ValueError("observation matrix width does not match header")
    return model


def save_model(model: PomdpModel, path) -> None:
    Path(path).write_text(model_to_text(model), encoding="utf-8")


def load_model(path) -> PomdpModel:
    return model_from_text(Path(path).read_text(encoding="utf-8"))


def random_model(rng: np.random.Generator, num_states: int, num_observations: int, num_actions: int,
                 horizon: int, observation_sparsity: float = 0.0) -> PomdpModel:
    """Dirichlet(1) rows everywhere; optionally zero out observation entries.

    With ``observation_sparsity > 0`` each observation entry is dropped with that
    probability (each row keeps at least one nonzero entry) before renormalising.
    """
    S, X, A = num_states, num_observations, num_actions
    P = rng.dirichlet(np.ones(S), size=(S, A))
    O = rng.dirichlet(np.ones(X), size=S)
    if observation_sparsity > 0:
        mask = rng.random((S, X)) >= observation_sparsity
        mask[np.arange(S), rng.integers(0, X, S)] = True
        O = O * mask
        O /= O.sum(axis=1, keepdims=True)
    mu = rng.dirichlet(np.ones(S))
    return PomdpModel(P, O, mu, horizon)
