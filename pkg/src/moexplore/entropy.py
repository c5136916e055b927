"""Entropies of finite distributions, in nats."""

from __future__ import annotations

import math

import numpy as np

DIST_TOL = 1e-10
ZERO = 1e-300


def as_distribution(p, tol: float = DIST_TOL) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("a distribution is a nonempty 1-d vector")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError("distribution has negative or non-finite entries")
    if abs(p.sum() - 1) > tol:
        raise ValueError(f"distribution sums to {p.sum()!r}")
    return p


def _plogp(p: np.ndarray) -> np.ndarray:
    # 0 ln 0 := 0
    safe = np.where(p > ZERO, p, 1.0)
    return np.where(p > ZERO, p * np.log(safe), 0.0)


def row_entropies(m) -> np.ndarray:
    """Shannon entropy of every row of a (..., n) array, no validation."""
    # 0.0 - x rather than -x keeps a zero entropy from printing as -0
    return 0.0 - _plogp(np.asarray(m, dtype=float)).sum(axis=-1)


def shannon_entropy(p) -> float:
    return float(row_entropies(as_distribution(p)))


def renyi_entropy(p, alpha: float) -> float:
    """Order-``alpha`` Renyi entropy. ``alpha=math.inf`` gives the min-entropy."""
    p = as_distribution(p)
    if alpha == math.inf:
        return min_entropy(p)
    if not alpha > 0 or alpha == 1:
        raise ValueError(f"alpha must be positive and != 1 (use shannon_entropy), got {alpha}")
    nz = p[p > ZERO]
    return float(math.log(np.sum(nz**alpha)) / (1 - alpha))


def min_entropy(p) -> float:
    return float(-math.log(as_distribution(p).max()))


def empirical_distribution(sequence, support_size: int) -> np.ndarray:
    seq = np.asarray(sequence)
    if seq.ndim != 1 or seq.size == 0:
        raise ValueError("sequence must be a nonempty 1-d vector")
    bad = np.flatnonzero((seq < 0) | (seq >= support_size))
    if bad.size:
        i = int(bad[0])
        raise IndexError(f"symbol {seq[i]} at position {i} outside support of size {support_size}")
    return np.bincount(seq, minlength=support_size) / seq.size


def trajectory_entropy(sequence, support_size: int) -> float:
    """Entropy of the empirical distribution of one episode's symbols."""
    return float(row_entropies(empirical_distribution(sequence, support_size)))


def batch_empirical(sequences: np.ndarray, support_size: int) -> np.ndarray:
    """(n x T) index array -> (n x support) empirical distributions."""
    n, T = sequences.shape
    flat = (np.arange(n)[:, None] * support_size + sequences).ravel()
    return np.bincount(flat, minlength=n * support_size).reshape(n, support_size) / T


def batch_trajectory_entropy(sequences: np.ndarray, support_size: int) -> np.ndarray:
    return row_entropies(batch_empirical(sequences, support_size))


def mean_observation_function_entropy(observation) -> float:
    """Average over states of the entropy of each observation row."""
    return float(row_entropies(observation).mean())


def conditional_entropy_obs_given_state(observation, p_states) -> float:
    """Expected emission entropy ``sum_s p(s) H(O(.|s))``."""
    O = np.asarray(observation, dtype=float)
    p = as_distribution(p_states)
    if O.shape[0] != p.shape[0]:
        raise ValueError(f"observation matrix has {O.shape[0]} rows but p_S has {p.shape[0]} entries")
    return float(p @ row_entropies(O))


def format_distribution(p) -> str:
    return "[" + ", ".join(f"{v:.17g}" for v in np.asarray(p, dtype=float)) + "]"
