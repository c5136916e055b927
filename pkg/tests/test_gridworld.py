import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from moexplore.entropy import mean_observation_function_entropy, row_entropies
from moexplore.gridworld import (
    CANONICAL,
    DETERMINISTIC,
    GridSpec,
    apply_glasses,
    ascii_map,
    build_model,
    calibrate_sigma2,
    canonical_environment,
    canonical_spec,
    free_cells,
    gaussian,
    gaussian_manhattan_observation,
    load_spec,
    save_spec,
    sigma2_entropy,
    slip_transition,
    spec_from_dict,
    spec_to_dict,
)
from moexplore.policy import SoftmaxPolicy
from moexplore.pomdp import exact_state_occupancy, sample_batch, validate_model

UP, DOWN, LEFT, RIGHT = range(4)

layouts = st.sampled_from([
    ("..",), ("...", ".#.", "..."), ("....", "....", "...."), ("..#", "...", "#.."),
    tuple(canonical_spec("well_behaved").layout), tuple(canonical_spec("redroom").layout),
])


def test_corridor_without_slip_is_a_deterministic_shuttle():
    m = build_model(GridSpec([".."], slip_probability=0.0, horizon=4))
    P = m.transition
    assert ((P == 0) | (P == 1)).all()
    assert P[0, RIGHT, 1] == 1 and P[1, LEFT, 0] == 1
    assert P[0, LEFT, 0] == 1 and P[1, UP, 1] == 1


def test_canonical_sizes():
    _, m = canonical_environment("well_behaved")
    assert (m.num_states, m.num_observations, m.num_actions, m.horizon) == (44, 44, 4, 55)
    assert m.initial[0] == 1.0 and m.state_labels[0] == "0,0"


@given(layouts, st.floats(0.0, 0.99))
def test_slip_rows_stochastic_and_target_favoured(layout, slip):
    P = slip_transition(layout, slip)
    np.testing.assert_allclose(P.sum(axis=2), 1.0, atol=1e-12, rtol=0)
    cells = free_cells(layout)
    index = {c: i for i, c in enumerate(cells)}
    moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    for s, (r, c) in enumerate(cells):
        for a, (dr, dc) in enumerate(moves):
            target = index.get((r + dr, c + dc))
            if target is not None:
                assert P[s, a, target] >= 1 - slip - 1e-12


def test_slip_spreads_over_other_free_neighbours():
    # centre of a plus shape: four free neighbours, three share the slip
    P = slip_transition(["#.#", "...", "#.#"], 0.3)
    centre = 2
    np.testing.assert_allclose(sorted(P[centre, UP]), [0, 0.1, 0.1, 0.1, 0.7], atol=1e-15)
    assert P[centre, UP, centre] == 0


def test_bump_and_lone_cell():
    P = slip_transition(["..", "##"], 0.2)
    # bumping up from (0,0): target is itself and the slip goes to (0,1)
    np.testing.assert_allclose(P[0, UP], [0.8, 0.2])
    lone = slip_transition(["."], 0.4)
    np.testing.assert_array_equal(lone[0], np.ones((4, 1)))


def test_narrow_sigma_gives_identity():
    layout = canonical_spec("well_behaved").layout
    O = gaussian_manhattan_observation(layout, 1e-6)
    np.testing.assert_allclose(O, np.eye(44), atol=1e-9)
    assert mean_observation_function_entropy(O) < 1e-6
    np.testing.assert_array_equal(gaussian_manhattan_observation(["."], 2.0), [[1.0]])
    with pytest.raises(ValueError):
        gaussian_manhattan_observation(layout, 0.0)


def test_gaussian_ignores_walls():
    O = gaussian_manhattan_observation([".#."], 1.0)
    w = math.exp(-4 / 2)
    np.testing.assert_allclose(O[0], [1 / (1 + w), w / (1 + w)])


def test_mean_entropy_monotone_in_sigma2():
    spec = canonical_spec("challenging")
    values = [sigma2_entropy(spec, s2) for s2 in np.geomspace(1e-2, 1e3, 40)]
    assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))


def test_reflection_symmetry_of_rows():
    layout = ["....", "....", "...."]
    O = gaussian_manhattan_observation(layout, 1.7)
    cells = free_cells(layout)
    index = {c: i for i, c in enumerate(cells)}
    mirror = np.array([index[(r, 3 - c)] for r, c in cells])
    flip = np.array([index[(2 - r, c)] for r, c in cells])
    for perm in (mirror, flip):
        np.testing.assert_allclose(O[perm][:, perm], O, atol=1e-15)


@pytest.mark.parametrize("name", CANONICAL)
def test_canonical_models_valid(name):
    spec, m = canonical_environment(name)
    assert validate_model(m) == []
    assert spec.name == name and spec.version >= 1


@pytest.mark.parametrize("name,lo,hi,states", [
    ("well_behaved", 0.85, 1.15, 44),
    ("challenging", 2.05, 2.35, 44),
    ("structured", 1.70, 2.00, 88),
])
def test_canonical_observation_entropy(name, lo, hi, states):
    _, m = canonical_environment(name)
    assert m.num_states == states
    assert lo <= mean_observation_function_entropy(m.observation) <= hi


def test_redroom_room_is_exact():
    spec, m = canonical_environment("redroom")
    assert m.horizon == 40 and spec.observation["."].sigma2 == 1.0
    red = [i for i, (r, c) in enumerate(spec.cells) if spec.layout[r][c] == "r"]
    assert red
    np.testing.assert_array_equal(m.observation[red][:, red], np.eye(len(red)))
    other = [i for i in range(m.num_states) if i not in red]
    assert (row_entropies(m.observation[other]) > 0.5).all()


def test_unknown_environment():
    with pytest.raises(KeyError):
        canonical_environment("maze")


# -- glasses ---------------------------------------------------------------------

def _base():
    spec = canonical_spec("challenging")
    return spec, build_model(spec)


def test_glasses_doubles_states_keeps_alphabet():
    spec, m = _base()
    g = apply_glasses(m, spec.cells.index((7, 0)))
    assert (g.num_states, g.num_observations) == (88, 44)
    assert validate_model(g) == []
    np.testing.assert_array_equal(g.observation[44:], np.eye(44))
    assert g.state_labels[44] == "0,0+g"


def test_separate_glasses_alphabet():
    spec, m = _base()
    g = apply_glasses(m, spec.cells.index((7, 0)), observations="separate")
    assert (g.num_states, g.num_observations) == (88, 88)
    np.testing.assert_array_equal(g.observation[44:, 44:], np.eye(44))
    assert not g.observation[44:, :44].any() and not g.observation[:44, 44:].any()
    with pytest.raises(ValueError):
        apply_glasses(m, 3, observations="both")


def test_glasses_block_structure_matches_original():
    spec, m = _base()
    k = spec.cells.index((7, 0))
    g = apply_glasses(m, k)
    S = 44
    P, Q = m.transition, g.transition
    copy = Q[S:, :, S:]
    np.testing.assert_array_equal(copy, P)
    assert not Q[S:, :, :S].any()
    # outside the glasses column, the no-glasses block is the original
    keep = [s for s in range(S) if s != k]
    np.testing.assert_array_equal(Q[:S, :, keep], P[:, :, keep])
    np.testing.assert_array_equal(Q[:S, :, S + k], P[:, :, k])
    assert not Q[:S, :, k].any()


def test_glasses_copy_unvisited_without_reaching_cell():
    spec = GridSpec(["...."], slip_probability=0.0, horizon=6, observation={".": gaussian(1.0)},
                    glasses_cell=(0, 3))
    m = build_model(spec)
    stay_left = np.zeros((4, 4))
    stay_left[:, LEFT] = 1.0
    p = exact_state_occupancy(m, stay_left, "observation")
    assert p[4:].sum() == 0.0


def test_observations_are_exact_after_glasses():
    spec, m = canonical_environment("structured")
    pol = SoftmaxPolicy.uniform(m.num_observations, m.num_actions)
    batch = sample_batch(m, pol, None, np.random.default_rng(0), 400)
    inside = batch.states >= 44
    assert inside.any()
    np.testing.assert_array_equal(batch.observations[inside], batch.states[inside])
    assert (batch.observations[~inside] < 44).all()


def test_glasses_rejects_bad_index():
    _, m = _base()
    with pytest.raises(IndexError):
        apply_glasses(m, 44)


# -- specs -----------------------------------------------------------------------

@pytest.mark.parametrize("kwargs,msg", [
    (dict(layout=["..", "."]), "rectangle"),
    (dict(layout=["##"]), "no free cell"),
    (dict(layout=[".#."]), "connected"),
    (dict(layout=["#."]), "start cell"),
    (dict(layout=[".."], glasses_cell=(1, 0)), "glasses cell"),
    (dict(layout=[".r"]), "regions"),
    (dict(layout=[".."], slip_probability=1.0), "slip"),
    (dict(layout=[".."], horizon=0), "horizon"),
])
def test_invalid_specs(kwargs, msg):
    with pytest.raises(ValueError, match=msg):
        GridSpec(**kwargs)


def test_spec_round_trip(tmp_path):
    spec = GridSpec(["...", ".#r"], slip_probability=0.05, horizon=9, start_cell=(0, 2),
                    observation={".": gaussian(0.7), "r": DETERMINISTIC}, glasses_cell=(1, 0),
                    glasses_observations="separate", name="tiny", version=3)
    save_spec(spec, tmp_path / "s.toml")
    back = load_spec(tmp_path / "s.toml")
    assert back == spec
    assert spec_from_dict(spec_to_dict(spec)) == spec
    text = (tmp_path / "s.toml").read_text()
    assert '"""\n...\n.#r\n"""' in text


def test_build_model_is_deterministic_across_loads():
    a = build_model(canonical_spec("structured"))
    b = build_model(canonical_spec("structured"))
    assert np.array_equal(a.transition, b.transition) and np.array_equal(a.observation, b.observation)


def test_ascii_map_marks_start_and_glasses():
    text = ascii_map(canonical_spec("structured"))
    rows = text.splitlines()
    assert rows[0][0] == "S" and rows[7][0] == "G"


def test_calibration_hits_target():
    spec = canonical_spec("well_behaved")
    s2 = calibrate_sigma2(spec, 1.5)
    assert sigma2_entropy(spec, s2) == pytest.approx(1.5, abs=1e-8)
    with pytest.raises(ValueError, match="not reachable"):
        calibrate_sigma2(spec, 10.0)


def test_frozen_sigma2_reproduces_calibration():
    for name, target in (("well_behaved", 1.0), ("challenging", 2.2), ("structured", 1.85)):
        spec = canonical_spec(name)
        assert spec.observation["."].sigma2 == pytest.approx(calibrate_sigma2(spec, target), rel=1e-6)


def test_sigma2_presets_order():
    spec = canonical_spec("well_behaved")
    values = [sigma2_entropy(spec, s2) for s2 in (0.25, 1.0, 10.0)]
    assert values[0] < values[1] < values[2]
