"""Approximation bounds between latent-state entropy and observation entropy.

All quantities are evaluated for a given observation matrix ``O`` (states x
observations) and the exact occupancies of a policy.  Two of the stated
inequalities, the spectral upper bound ``H(S) - H(X) <= ln sigma_max(O)`` and
its distribution-dependent tight form, fail on ordinary instances (e.g.
``O = [[0.99, 0.01], [0.99, 0.01]]`` with a uniform state occupancy); the
actionable lower bound fails too.  They are computed as stated and any
breach is listed in ``BoundsReport.violations`` rather than raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import entropy
from .pomdp import PomdpModel, exact_state_occupancy, resolve_conditioning

SLACK = 1e-9
POSITIVE_THRESHOLD = 1e-12
CONSISTENCY_TOL = 1e-9


def max_singular_value(m, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Largest singular value by power iteration on the smaller Gram matrix.

    Stops once the Rayleigh quotient changes by less than ``tol`` relative.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError("expected a 2-d matrix")
    if not np.isfinite(m).all():
        raise ValueError("matrix has non-finite entries")
    gram = m.T @ m if m.shape[1] <= m.shape[0] else m @ m.T
    if not gram.any():
        return 0.0
    v = np.random.default_rng(12345).random(gram.shape[0]) + 0.5
    v /= np.linalg.norm(v)
    lam = v @ gram @ v
    for _ in range(max_iter):
        w = gram @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = v @ gram @ v
        if abs(new - lam) <= tol * abs(new):
            lam = new
            break
        lam = new
    return math.sqrt(max(lam, 0.0))


class ZeroEntryError(ValueError):
    def __init__(self, row, col, value):
        super().__init__(f"entry ({row}, {col}) = {value!r} is not strictly positive")
        self.row, self.col = row, col


def hadamard_inverse(m, threshold: float = POSITIVE_THRESHOLD) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    bad = np.argwhere(m <= threshold)
    if bad.size:
        r, c = (int(v) for v in bad[0])
        raise ZeroEntryError(r, c, m[r, c])
    return 1.0 / m


def worst_case_gap(num_states: int, num_observations: int) -> float:
    if num_states < 1 or num_observations < 1:
        raise ValueError("sizes must be >= 1")
    return max(math.log(num_states), math.log(num_observations))


@dataclass(frozen=True)
class SpectralBounds:
    lower: float | None  # None when O has zero entries
    upper: float


def spectral_bounds(observation) -> SpectralBounds:
    O = np.asarray(observation, dtype=float)
    upper = math.log(max_singular_value(O))
    try:
        inv = hadamard_inverse(O)
    except ZeroEntryError:
        return SpectralBounds(None, upper)
    return SpectralBounds(-math.log(max_singular_value(inv)), upper)


class DegenerateDistributionError(ValueError):
    pass


def tight_spectral_upper(observation, p_states) -> float:
    """Distribution-dependent lower bound on H(X|pi) from the spectral argument.

    Evaluates ``H(S)/m + (m-1)/m * ln((|S|-1)/(1-m)) - ln sigma_max(O)`` with
    ``m = max_s p_S(s)``; requires ``m < 1``.
    """
    p = entropy.as_distribution(p_states)
    m = float(p.max())
    if m >= 1 - POSITIVE_THRESHOLD:
        raise DegenerateDistributionError(f"max p_S = {m!r}; the finite form needs max p_S < 1")
    n = p.shape[0]
    h = entropy.shannon_entropy(p)
    return h / m + (m - 1) / m * math.log((n - 1) / (1 - m)) - math.log(max_singular_value(observation))


class InconsistentOccupancyError(ValueError):
    pass


def information_lower_bound(observation, p_states, p_observations) -> float:
    """``H(X) - E_{s~p_S} H(O(.|s))``, a lower bound on H(S|pi)."""
    O = np.asarray(observation, dtype=float)
    p_s = entropy.as_distribution(p_states)
    p_x = entropy.as_distribution(p_observations)
    residual = float(np.abs(p_s @ O - p_x).max())
    if residual > CONSISTENCY_TOL:
        raise InconsistentOccupancyError(f"p_X differs from O^T p_S by {residual:.3g}")
    return entropy.shannon_entropy(p_x) - entropy.conditional_entropy_obs_given_state(O, p_s)


class ZeroColumnError(ValueError):
    def __init__(self, col):
        super().__init__(f"observation {col} is emitted by no state (all-zero column)")
        self.col = col


def normalized_columns(observation) -> np.ndarray:
    """Columns of O rescaled to distributions over states (uniform-prior posterior)."""
    O = np.asarray(observation, dtype=float)
    mass = O.sum(axis=0)
    zero = np.flatnonzero(mass <= 0)
    if zero.size:
        raise ZeroColumnError(int(zero[0]))
    return O / mass


def column_entropies(observation) -> np.ndarray:
    """Entropy of each normalised column, one value per observation."""
    return entropy.row_entropies(normalized_columns(observation).T)


def actionable_lower_bound(observation, p_observations) -> float:
    p_x = entropy.as_distribution(p_observations)
    return (entropy.shannon_entropy(p_x) - float(p_x @ column_entropies(observation))
            + math.log(max_singular_value(observation)))


@dataclass
class BoundsReport:
    h_states: float
    h_obs: float
    gap: float
    worst_case: float
    spectral_upper: float
    spectral_lower: float | None
    tight_spectral_bound: float | None
    info_lower: float
    actionable_lower: float | None
    sigma_max: float
    sigma_max_hadamard_inverse: float | None
    violations: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        def fmt(v, why):
            return f"{v:.17g}" if v is not None else f"undefined ({why})"

        rows = [
            ("h_states", fmt(self.h_states, "")),
            ("h_obs", fmt(self.h_obs, "")),
            ("gap", fmt(self.gap, "")),
            ("worst_case", fmt(self.worst_case, "")),
            ("spectral_upper", fmt(self.spectral_upper, "")),
            ("spectral_lower", fmt(self.spectral_lower, "observation matrix has zeros")),
            ("tight_spectral_bound", fmt(self.tight_spectral_bound, "state occupancy is degenerate")),
            ("info_lower", fmt(self.info_lower, "")),
            ("actionable_lower", fmt(self.actionable_lower, "observation matrix has an all-zero column")),
            ("sigma_max", fmt(self.sigma_max, "")),
            ("sigma_max_hadamard_inverse", fmt(self.sigma_max_hadamard_inverse, "observation matrix has zeros")),
            ("violations", "; ".join(self.violations) if self.violations else "none"),
        ]
        return "".join(f"{k} = {v}\n" for k, v in rows)


def check_bounds(report: BoundsReport, slack: float = SLACK) -> list[str]:
    """Names of every stated inequality that the report's values break."""
    out = []
    if abs(report.gap) > report.worst_case + slack:
        out.append("worst_case: |gap| > max(ln|S|, ln|X|)")
    if report.spectral_lower is not None and report.spectral_lower > report.gap + slack:
        out.append("spectral_lower: ln(1/sigma_max(O^-1)) > gap")
    if report.gap > report.spectral_upper + slack:
        out.append("spectral_upper: gap > ln sigma_max(O)")
    if report.tight_spectral_bound is not None and report.tight_spectral_bound > report.h_obs + slack:
        out.append("tight_spectral_bound: bound > H(X|pi)")
    if report.info_lower > report.h_states + slack:
        out.append("info_lower: H(X) - H(X|S) > H(S|pi)")
    if report.actionable_lower is not None and report.actionable_lower > report.h_states + slack:
        out.append("actionable_lower: H(X) - H(S|X) + ln sigma_max(O) > H(S|pi)")
    return out


def bounds_from_occupancy(observation, p_states) -> BoundsReport:
    O = np.asarray(observation, dtype=float)
    p_s = np.asarray(p_states, dtype=float)
    p_x = p_s @ O
    h_s = entropy.shannon_entropy(p_s)
    h_x = entropy.shannon_entropy(p_x)
    sigma = max_singular_value(O)
    try:
        sigma_inv = max_singular_value(hadamard_inverse(O))
    except ZeroEntryError:
        sigma_inv = None
    try:
        tight = tight_spectral_upper(O, p_s)
    except DegenerateDistributionError:
        tight = None
    try:
        actionable = actionable_lower_bound(O, p_x)
    except ZeroColumnError:
        actionable = None
    report = BoundsReport(
        h_states=h_s,
        h_obs=h_x,
        gap=h_s - h_x,
        worst_case=worst_case_gap(*O.shape),
        spectral_upper=math.log(sigma),
        spectral_lower=-math.log(sigma_inv) if sigma_inv is not None else None,
        tight_spectral_bound=tight,
        info_lower=information_lower_bound(O, p_s, p_x),
        actionable_lower=actionable,
        sigma_max=sigma,
        sigma_max_hadamard_inverse=sigma_inv,
    )
    report.violations = check_bounds(report)
    return report


def bounds_report(model: PomdpModel, policy, conditioning=None) -> BoundsReport:
    conditioning = resolve_conditioning(policy, conditioning)
    return bounds_from_occupancy(model.observation, exact_state_occupancy(model, policy, conditioning))
