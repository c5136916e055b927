import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from moexplore import bounds as B
from moexplore.entropy import shannon_entropy
from moexplore.gridworld import canonical_environment
from moexplore.policy import SoftmaxPolicy, TrainConfig, train
from moexplore.pomdp import PomdpModel, exact_state_occupancy, random_model

matrices = st.tuples(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**32 - 1)).map(
    lambda t: np.random.default_rng(t[2]).normal(size=(t[0], t[1])))


def svd_sigma(m):
    return float(np.linalg.svd(np.asarray(m, dtype=float), compute_uv=False)[0])


# -- singular values -------------------------------------------------------------

def test_sigma_examples():
    assert B.max_singular_value(np.eye(5)) == pytest.approx(1.0, rel=1e-12)
    assert B.max_singular_value(np.diag([3.0, 4.0])) == pytest.approx(4.0, rel=1e-12)
    assert B.max_singular_value([[0.5, 0.5], [0.5, 0.5]]) == pytest.approx(1.0, rel=1e-12)
    assert B.max_singular_value(np.zeros((3, 2))) == 0.0


def test_sigma_rejects_non_finite():
    with pytest.raises(ValueError):
        B.max_singular_value([[1.0, np.inf]])


@pytest.mark.parametrize("shape", [(100, 100), (37, 80), (90, 12)])
def test_sigma_matches_dense_svd_on_large_matrices(shape):
    rng = np.random.default_rng(shape[0] * shape[1])
    for m in (rng.normal(size=shape), rng.dirichlet(np.ones(shape[1]), size=shape[0])):
        assert B.max_singular_value(m) == pytest.approx(svd_sigma(m), rel=1e-9)


@given(matrices)
def test_sigma_matches_svd(m):
    assert B.max_singular_value(m) == pytest.approx(svd_sigma(m), rel=1e-9)


@given(matrices, st.floats(-50, 50).filter(lambda c: abs(c) > 1e-3))
def test_sigma_transpose_and_scaling(m, c):
    s = B.max_singular_value(m)
    assert B.max_singular_value(m.T) == pytest.approx(s, rel=1e-9)
    assert B.max_singular_value(c * m) == pytest.approx(abs(c) * s, rel=1e-9)


# -- elementary pieces -----------------------------------------------------------

def test_hadamard_inverse_examples():
    np.testing.assert_array_equal(B.hadamard_inverse(np.full((2, 2), 0.5)), np.full((2, 2), 2.0))
    np.testing.assert_allclose(B.hadamard_inverse([[0.25, 0.75]]), [[4.0, 4 / 3]])
    with pytest.raises(B.ZeroEntryError) as exc:
        B.hadamard_inverse(np.eye(3))
    assert (exc.value.row, exc.value.col) == (0, 1)


def test_worst_case_examples():
    assert B.worst_case_gap(44, 44) == pytest.approx(3.7841896339182615, abs=1e-12)
    assert B.worst_case_gap(1, 1) == 0.0
    assert B.worst_case_gap(2, 8) == math.log(8)
    with pytest.raises(ValueError):
        B.worst_case_gap(0, 3)


def test_spectral_bounds_examples():
    sb = B.spectral_bounds(np.full((2, 2), 0.5))
    assert sb.upper == pytest.approx(0.0, abs=1e-12)
    assert sb.lower == pytest.approx(-math.log(4), abs=1e-12)
    sb = B.spectral_bounds(np.eye(3))
    assert sb.upper == pytest.approx(0.0, abs=1e-12) and sb.lower is None


def test_tight_bound_examples():
    assert B.tight_spectral_upper(np.eye(2), [0.5, 0.5]) <= math.log(2) + 1e-12
    with pytest.raises(B.DegenerateDistributionError):
        B.tight_spectral_upper(np.eye(2), [1.0, 0.0])


def test_tight_bound_under_uniform_occupancy_reduces_to_spectral_form():
    # with p_S uniform over n the bound is ln n - ln sigma_max(O)
    O = np.random.default_rng(0).dirichlet(np.ones(4), size=5)
    assert B.tight_spectral_upper(O, np.full(5, 0.2)) == pytest.approx(
        math.log(5) - math.log(svd_sigma(O)), abs=1e-12)


def test_information_bound_examples():
    rng = np.random.default_rng(1)
    p = rng.dirichlet(np.ones(4))
    perm = np.eye(4)[[2, 0, 3, 1]]
    assert B.information_lower_bound(perm, p, p @ perm) == pytest.approx(shannon_entropy(p @ perm))
    U = np.full((4, 3), 1 / 3)
    assert B.information_lower_bound(U, p, p @ U) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(B.InconsistentOccupancyError):
        B.information_lower_bound(U, p, [0.5, 0.5, 0.0])


def test_actionable_bound_examples():
    p = np.random.default_rng(2).dirichlet(np.ones(4))
    assert B.actionable_lower_bound(np.eye(4), p) == pytest.approx(shannon_entropy(p), abs=1e-12)
    perm = np.eye(4)[[1, 3, 0, 2]]
    assert B.actionable_lower_bound(perm, p @ perm) == pytest.approx(shannon_entropy(p), abs=1e-12)
    with pytest.raises(B.ZeroColumnError) as exc:
        B.actionable_lower_bound(np.array([[1.0, 0.0], [1.0, 0.0]]), [1.0, 0.0])
    assert exc.value.col == 1


def test_column_entropies_use_normalized_columns():
    O = np.array([[0.9, 0.1], [0.3, 0.7]])
    cols = B.column_entropies(O)
    assert cols[0] == pytest.approx(shannon_entropy([0.75, 0.25]))
    assert cols[1] == pytest.approx(shannon_entropy([0.125, 0.875]))


# -- reports ---------------------------------------------------------------------

def test_identity_report():
    m = random_model(np.random.default_rng(3), 4, 4, 2, 6).with_observation(np.eye(4))
    r = B.bounds_report(m, SoftmaxPolicy(np.random.default_rng(0).normal(size=(4, 2))))
    assert r.gap == pytest.approx(0.0, abs=1e-12)
    assert r.spectral_upper == pytest.approx(0.0, abs=1e-12)
    assert r.spectral_lower is None and r.sigma_max_hadamard_inverse is None
    assert r.violations == []
    assert "spectral_lower = undefined (observation matrix has zeros)" in r.to_text()


def test_constant_channel_report_h_obs_policy_free():
    q = np.array([0.2, 0.3, 0.5])
    m = random_model(np.random.default_rng(4), 5, 3, 3, 6).with_observation(np.tile(q, (5, 1)))
    values = {round(B.bounds_report(m, SoftmaxPolicy(np.random.default_rng(s).normal(0, 3, (3, 3)))).h_obs, 12)
              for s in range(4)}
    assert values == {round(shannon_entropy(q), 12)}


def test_report_text_is_flat_key_value():
    m = random_model(np.random.default_rng(5), 3, 3, 2, 4)
    text = B.bounds_report(m, SoftmaxPolicy.uniform(3, 2)).to_text()
    keys = [line.split(" = ")[0] for line in text.splitlines()]
    assert keys == ["h_states", "h_obs", "gap", "worst_case", "spectral_upper", "spectral_lower",
                    "tight_spectral_bound", "info_lower", "actionable_lower", "sigma_max",
                    "sigma_max_hadamard_inverse", "violations"]


def test_rank_one_channel_breaks_spectral_upper_bound():
    # O = 1 q^T: every state emits q, so H(X) = H(q) whatever the policy, while
    # sigma_max(O) = sqrt(S) * |q|_2 grows far slower than H(S) can
    O = np.array([[0.99, 0.01], [0.99, 0.01]])
    r = B.bounds_from_occupancy(O, [0.5, 0.5])
    assert r.gap == pytest.approx(0.6372, abs=1e-4)
    assert r.spectral_upper == pytest.approx(0.3365, abs=1e-4)
    assert r.gap > r.spectral_upper
    assert any(v.startswith("spectral_upper") for v in r.violations)
    assert any(v.startswith("tight_spectral_bound") for v in r.violations)
    # the remaining inequalities hold on this instance
    assert r.spectral_lower <= r.gap and r.info_lower <= r.h_states


def test_check_bounds_flags_each_inequality():
    ok = B.bounds_from_occupancy(np.eye(2), [0.5, 0.5])
    assert B.check_bounds(ok) == []
    bad = B.BoundsReport(h_states=0.1, h_obs=5.0, gap=-4.9, worst_case=1.0, spectral_upper=-5.0,
                         spectral_lower=0.0, tight_spectral_bound=6.0, info_lower=1.0,
                         actionable_lower=1.0, sigma_max=1.0, sigma_max_hadamard_inverse=1.0)
    names = {v.split(":")[0] for v in B.check_bounds(bad)}
    assert names == {"worst_case", "spectral_lower", "spectral_upper", "tight_spectral_bound",
                     "info_lower", "actionable_lower"}


instances = st.tuples(st.integers(0, 2**32 - 1), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6),
                      st.integers(1, 8), st.sampled_from([0.0, 0.4]))


def _instance(seed, S, X, A, T, sparsity):
    rng = np.random.default_rng(seed)
    m = random_model(rng, S, X, A, T, observation_sparsity=sparsity)
    return m, SoftmaxPolicy(rng.normal(0, 2, (X, A)))


@given(instances)
def test_valid_inequalities_hold(inst):
    m, pol = _instance(*inst)
    r = B.bounds_report(m, pol)
    assert abs(r.gap) <= r.worst_case + 1e-9
    assert r.info_lower <= r.h_states + 1e-9
    if r.spectral_lower is not None:
        assert r.spectral_lower <= r.gap + 1e-9
    assert -1e-12 <= r.h_states <= math.log(m.num_states) + 1e-12


@given(instances)
def test_report_consistent_with_components(inst):
    m, pol = _instance(*inst)
    r = B.bounds_report(m, pol)
    p_s = exact_state_occupancy(m, pol)
    assert r.h_states == pytest.approx(shannon_entropy(p_s), abs=1e-12)
    assert r.sigma_max == pytest.approx(svd_sigma(m.observation), rel=1e-9)
    assert set(r.violations) == set(B.check_bounds(r))


def test_random_positive_five_by_five_lower_side():
    rng = np.random.default_rng(6)
    breaches = 0
    for _ in range(200):
        m = random_model(rng, 5, 5, 3, 6)
        r = B.bounds_report(m, SoftmaxPolicy(rng.normal(0, 2, (5, 3))))
        assert r.spectral_lower is not None and r.spectral_lower <= r.gap + 1e-9
        breaches += r.gap > r.spectral_upper + 1e-9
    # the upper side is not a valid inequality; breaches on square channels are uncommon but real
    assert breaches < 200


def test_trained_policy_report_on_gridworld():
    _, m = canonical_environment("well_behaved")
    res = train(m, TrainConfig("moe", iterations=20, eval_every=20, seed=1))
    r = B.bounds_report(m, res.policy)
    assert r.spectral_lower is None
    assert abs(r.gap) <= r.worst_case and r.info_lower <= r.h_states + 1e-9


def test_positive_instance_report_defines_everything():
    O = np.array([[0.6, 0.4], [0.3, 0.7]])
    P = np.full((2, 1, 2), 0.5)
    r = B.bounds_report(PomdpModel(P, O, [0.7, 0.3], 4), np.ones((2, 1)), "observation")
    assert None not in (r.spectral_lower, r.tight_spectral_bound, r.actionable_lower, r.sigma_max_hadamard_inverse)
