"""Rooms-and-corridors gridworld POMDPs.

Layouts are ASCII maps: ``#`` is a wall, any other character is a free cell
whose character names its observation region (``.`` by default).  States and
observations are the free cells in row-major order.  Actions are up, down,
left, right.  An intended move succeeds with probability ``1 - slip``; the
slip mass is spread uniformly over the free neighbours of the current cell
other than the intended target, and stays in place when there is none.
Moving into a wall makes the current cell the intended target.
"""

from __future__ import annotations

import math
import sys
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import tomli_w
from scipy.optimize import brentq

from .entropy import mean_observation_function_entropy
from .pomdp import PomdpModel

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

Cell = tuple[int, int]
ACTIONS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}
MOVES = tuple(ACTIONS.values())
WALL = "#"
OBSERVATION_KINDS = ("gaussian_manhattan", "deterministic")


@dataclass(frozen=True)
class ObservationSpec:
    kind: str
    sigma2: float | None = None

    def __post_init__(self):
        if self.kind not in OBSERVATION_KINDS:
            raise ValueError(f"unknown observation kind {self.kind!r}")
        if self.kind == "gaussian_manhattan" and not (self.sigma2 is not None and self.sigma2 > 0):
            raise ValueError("gaussian_manhattan needs sigma2 > 0")


def gaussian(sigma2: float) -> ObservationSpec:
    return ObservationSpec("gaussian_manhattan", float(sigma2))


DETERMINISTIC = ObservationSpec("deterministic")


@dataclass(frozen=True)
class GridSpec:
    layout: tuple[str, ...]
    slip_probability: float = 0.1
    horizon: int = 55
    start_cell: Cell = (0, 0)
    observation: Mapping[str, ObservationSpec] = field(default_factory=lambda: {".": DETERMINISTIC})
    glasses_cell: Cell | None = None
    glasses_observations: str = "shared"
    name: str = "custom"
    version: int = 1

    def __post_init__(self):
        layout = tuple(_strip_layout(self.layout))
        object.__setattr__(self, "layout", layout)
        object.__setattr__(self, "start_cell", tuple(self.start_cell))
        if self.glasses_cell is not None:
            object.__setattr__(self, "glasses_cell", tuple(self.glasses_cell))
        if isinstance(self.observation, ObservationSpec):
            object.__setattr__(self, "observation", {".": self.observation})
        problems = self.problems()
        if problems:
            raise ValueError(f"invalid grid spec {self.name!r}: " + "; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.layout or len({len(r) for r in self.layout}) != 1:
            out.append("layout must be a nonempty rectangle")
            return out
        cells = free_cells(self.layout)
        if not cells:
            out.append("layout has no free cell")
            return out
        if not 0 <= self.slip_probability < 1:
            out.append("slip_probability must lie in [0, 1)")
        if self.horizon < 1:
            out.append("horizon must be >= 1")
        if self.start_cell not in cells:
            out.append(f"start cell {self.start_cell} is not free")
        if self.glasses_cell is not None and self.glasses_cell not in cells:
            out.append(f"glasses cell {self.glasses_cell} is not free")
        if self.glasses_observations not in GLASSES_OBSERVATIONS:
            out.append(f"glasses_observations must be one of {GLASSES_OBSERVATIONS}")
        if len(_reachable(self.layout, cells[0])) != len(cells):
            out.append("free cells are not connected")
        missing = {self.layout[r][c] for r, c in cells} - set(self.observation)
        if missing:
            out.append(f"no observation spec for regions {sorted(missing)}")
        return out

    @property
    def cells(self) -> list[Cell]:
        return free_cells(self.layout)

    def with_sigma2(self, sigma2: float) -> "GridSpec":
        """Copy with every Gaussian region set to ``sigma2``."""
        obs = {k: gaussian(sigma2) if v.kind == "gaussian_manhattan" else v for k, v in self.observation.items()}
        return replace(self, observation=obs)


def _strip_layout(layout) -> list[str]:
    if isinstance(layout, str):
        layout = layout.splitlines()
    return [row.strip() for row in layout if row.strip()]


def free_cells(layout: Sequence[str]) -> list[Cell]:
    return [(r, c) for r, row in enumerate(layout) for c, ch in enumerate(row) if ch != WALL]


def _is_free(layout, r, c) -> bool:
    return 0 <= r < len(layout) and 0 <= c < len(layout[0]) and layout[r][c] != WALL


def neighbours(layout, cell: Cell) -> list[Cell]:
    r, c = cell
    return [(r + dr, c + dc) for dr, dc in MOVES if _is_free(layout, r + dr, c + dc)]


def _reachable(layout, start: Cell) -> set[Cell]:
    seen, queue = {start}, deque([start])
    while queue:
        for nb in neighbours(layout, queue.popleft()):
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    return seen


def slip_transition(layout: Sequence[str], slip: float) -> np.ndarray:
    layout = _strip_layout(layout)
    cells = free_cells(layout)
    index = {cell: i for i, cell in enumerate(cells)}
    P = np.zeros((len(cells), len(MOVES), len(cells)))
    for s, (r, c) in enumerate(cells):
        nbs = neighbours(layout, (r, c))
        for a, (dr, dc) in enumerate(MOVES):
            target = (r + dr, c + dc) if _is_free(layout, r + dr, c + dc) else (r, c)
            P[s, a, index[target]] += 1 - slip
            others = [nb for nb in nbs if nb != target]
            if others:
                for nb in others:
                    P[s, a, index[nb]] += slip / len(others)
            else:
                P[s, a, s] += slip
    return P


def manhattan_distances(layout: Sequence[str]) -> np.ndarray:
    cells = np.array(free_cells(_strip_layout(layout)))
    return np.abs(cells[:, None, :] - cells[None, :, :]).sum(axis=-1)


def gaussian_manhattan_observation(layout: Sequence[str], sigma2: float) -> np.ndarray:
    """``O(x|s)`` proportional to ``exp(-d(s, x)^2 / (2 sigma2))``, walls ignored."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    d = manhattan_distances(layout).astype(float)
    # d = 0 on the diagonal keeps every row's normaliser >= 1
    w = np.exp(-(d**2) / (2 * sigma2))
    return w / w.sum(axis=1, keepdims=True)


def observation_matrix(spec: GridSpec) -> np.ndarray:
    cells = spec.cells
    O = np.zeros((len(cells), len(cells)))
    for region, obs in spec.observation.items():
        rows = [i for i, (r, c) in enumerate(cells) if spec.layout[r][c] == region]
        if not rows:
            continue
        if obs.kind == "deterministic":
            O[rows, rows] = 1.0
        else:
            O[rows] = gaussian_manhattan_observation(spec.layout, obs.sigma2)[rows]
    return O


def cell_label(cell: Cell) -> str:
    return f"{cell[0]},{cell[1]}"


GLASSES_OBSERVATIONS = ("shared", "separate")


def apply_glasses(model: PomdpModel, glasses_state: int, observations: str = "shared") -> PomdpModel:
    """Double the state space with a copy in which observations are exact.

    Arriving at ``glasses_state`` moves the agent into the copy for good.
    With ``observations="shared"`` state ``s`` of the copy always emits
    observation ``s``, so the model must have as many observations as states.
    ``"separate"`` gives the copy its own symbols ``S + s`` instead, which
    doubles the observation alphabet.
    """
    if observations not in GLASSES_OBSERVATIONS:
        raise ValueError(f"observations must be one of {GLASSES_OBSERVATIONS}")
    S = model.num_states
    if not 0 <= glasses_state < S:
        raise IndexError(f"glasses state {glasses_state} outside 0..{S - 1}")
    if model.num_observations != S:
        raise ValueError("glasses need an observation alphabet indexed by states")
    A = model.num_actions
    P = np.zeros((2 * S, A, 2 * S))
    base = np.array(model.transition)
    reroute = base.copy()
    reroute[:, :, glasses_state] = 0.0
    P[:S, :, :S] = reroute
    P[:S, :, S + glasses_state] = base[:, :, glasses_state]
    P[S:, :, S:] = base
    if observations == "shared":
        O = np.vstack([model.observation, np.eye(S)])
    else:
        O = np.block([[model.observation, np.zeros((S, S))], [np.zeros((S, S)), np.eye(S)]])
    mu = np.zeros(2 * S)
    mu[:S] = model.initial
    mu[S + glasses_state] = mu[glasses_state]
    mu[glasses_state] = 0.0
    labels = obs_labels = None
    if model.state_labels is not None:
        labels = tuple(model.state_labels) + tuple(f"{lab}+g" for lab in model.state_labels)
    if model.observation_labels is not None:
        obs_labels = tuple(model.observation_labels)
        if observations == "separate":
            obs_labels += tuple(f"{lab}+g" for lab in model.observation_labels)
    return PomdpModel(P, O, mu, model.horizon, labels, obs_labels)


def build_model(spec: GridSpec) -> PomdpModel:
    cells = spec.cells
    P = slip_transition(spec.layout, spec.slip_probability)
    mu = np.zeros(len(cells))
    mu[cells.index(spec.start_cell)] = 1.0
    labels = tuple(cell_label(c) for c in cells)
    model = PomdpModel(P, observation_matrix(spec), mu, spec.horizon, labels, labels)
    if spec.glasses_cell is not None:
        model = apply_glasses(model, cells.index(spec.glasses_cell), spec.glasses_observations)
    return model


# -- serialisation ---------------------------------------------------------

def spec_to_dict(spec: GridSpec) -> dict:
    d = {
        "name": spec.name,
        "version": spec.version,
        "slip_probability": spec.slip_probability,
        "horizon": spec.horizon,
        "start_cell": list(spec.start_cell),
        "layout": "\n".join(spec.layout) + "\n",
        "observation": {k: ({"kind": v.kind, "sigma2": v.sigma2} if v.sigma2 is not None else {"kind": v.kind})
                        for k, v in spec.observation.items()},
    }
    if spec.glasses_cell is not None:
        d["glasses_cell"] = list(spec.glasses_cell)
        d["glasses_observations"] = spec.glasses_observations
    return d


def spec_from_dict(d: Mapping) -> GridSpec:
    return GridSpec(
        layout=tuple(_strip_layout(d["layout"])),
        slip_probability=float(d.get("slip_probability", 0.1)),
        horizon=int(d.get("horizon", 55)),
        start_cell=tuple(d.get("start_cell", (0, 0))),
        observation={k: ObservationSpec(v["kind"], v.get("sigma2")) for k, v in d["observation"].items()},
        glasses_cell=tuple(d["glasses_cell"]) if d.get("glasses_cell") is not None else None,
        glasses_observations=str(d.get("glasses_observations", "shared")),
        name=str(d.get("name", "custom")),
        version=int(d.get("version", 1)),
    )


def spec_to_toml(spec: GridSpec) -> str:
    return tomli_w.dumps(spec_to_dict(spec), multiline_strings=True)


def load_spec(path) -> GridSpec:
    with open(path, "rb") as fh:
        return spec_from_dict(tomllib.load(fh))


def save_spec(spec: GridSpec, path) -> None:
    Path(path).write_text(spec_to_toml(spec), encoding="utf-8")


def ascii_map(spec: GridSpec) -> str:
    rows = [list(r) for r in spec.layout]
    rows[spec.start_cell[0]][spec.start_cell[1]] = "S"
    if spec.glasses_cell is not None:
        rows[spec.glasses_cell[0]][spec.glasses_cell[1]] = "G"
    return "\n".join("".join(r) for r in rows)


# -- canonical environments ------------------------------------------------

CANONICAL = ("well_behaved", "challenging", "structured", "redroom")


def canonical_spec(name: str) -> GridSpec:
    if name not in CANONICAL:
        raise KeyError(f"unknown environment {name!r}; choose from {CANONICAL}")
    with resources.files("moexplore.data").joinpath(f"{name}.toml").open("rb") as fh:
        return spec_from_dict(tomllib.load(fh))


def canonical_environment(name: str) -> tuple[GridSpec, PomdpModel]:
    spec = canonical_spec(name)
    return spec, build_model(spec)


def resolve_environment(name_or_path) -> tuple[GridSpec, PomdpModel]:
    if str(name_or_path) in CANONICAL:
        return canonical_environment(str(name_or_path))
    spec = load_spec(name_or_path)
    return spec, build_model(spec)


def sigma2_entropy(spec: GridSpec, sigma2: float) -> float:
    return mean_observation_function_entropy(build_model(spec.with_sigma2(sigma2)).observation)


def calibrate_sigma2(spec: GridSpec, target_entropy: float, lo: float = 1e-3, hi: float = 1e4,
                     xtol: float = 1e-10) -> float:
    """sigma2 whose built model has mean observation-row entropy ``target_entropy``.

    Mean row entropy is increasing in sigma2, so a bracketing root search on
    log sigma2 suffices.
    """
    f = lambda log_s2: sigma2_entropy(spec, math.exp(log_s2)) - target_entropy
    a, b = math.log(lo), math.log(hi)
    if f(a) > 0 or f(b) < 0:
        raise ValueError(f"target entropy {target_entropy} not reachable for sigma2 in [{lo}, {hi}]")
    return math.exp(brentq(f, a, b, xtol=xtol))
