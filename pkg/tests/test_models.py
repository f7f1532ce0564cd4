import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bermudan_lpr.errors import InvalidInput
from bermudan_lpr.models import (
    ExerciseGrid,
    FiniteChain,
    GbmParams,
    PathEnsemble,
    read_ensemble_states,
    simulate_chain,
    simulate_chain_indices,
    simulate_gbm,
    stream_normals,
    stream_uniforms,
    write_ensemble_csv,
)


@given(seed=st.integers(0, 2**64 - 1), offset=st.integers(0, 2**40), m=st.integers(0, 20),
       draws=st.integers(1, 11))
@settings(max_examples=40, deadline=None)
def test_single_stream_matches_row_of_batch(seed, offset, m, draws):
    batch = stream_uniforms(seed, offset, 21, draws)
    alone = stream_uniforms(seed, offset + m, 1, draws)
    np.testing.assert_array_equal(batch[m], alone[0])


def test_uniforms_in_open_interval_and_roughly_uniform():
    u = stream_uniforms(1, 0, 50_000, 3)
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / u.size)


def test_distinct_seeds_and_offsets_give_distinct_streams():
    a = stream_uniforms(1, 0, 100, 4)
    assert not np.array_equal(a, stream_uniforms(2, 0, 100, 4))
    assert not np.array_equal(a, stream_uniforms(1, 100, 100, 4))


def test_normals_moments():
    z = stream_normals(9, 0, 200_000, 1)[:, 0]
    assert abs(z.mean()) < 4 / math.sqrt(z.size)
    assert abs(z.var() - 1) < 0.02


def test_seed_range_checked():
    with pytest.raises(InvalidInput):
        stream_uniforms(-1, 0, 1, 1)
    with pytest.raises(InvalidInput):
        stream_uniforms(2**64, 0, 1, 1)


def test_grid_validation():
    with pytest.raises(InvalidInput):
        ExerciseGrid((0.0,))
    with pytest.raises(InvalidInput):
        ExerciseGrid((0.0, 1.0, 1.0))
    with pytest.raises(InvalidInput):
        ExerciseGrid.uniform(0.0, 3)
    g = ExerciseGrid.uniform(3.0, 9)
    assert g.L == 9 and g.is_uniform and g.times[-1] == pytest.approx(3.0)
    assert not ExerciseGrid((0.0, 1.0, 3.0)).is_uniform


def test_zero_volatility_is_deterministic():
    p = GbmParams(2, 0.05, 0.1, 0.0)
    grid = ExerciseGrid.uniform(3.0, 9)
    paths = simulate_gbm(p, [90.0, 110.0], grid, 5, seed=1)
    expected = np.array([90.0, 110.0]) * np.exp(-0.05 * np.asarray(grid.times))[:, None]
    np.testing.assert_allclose(paths.states[3], expected, rtol=1e-14)


def test_gbm_mean_matches_forward():
    p = GbmParams(2, 0.05, 0.10, 0.2)
    grid = ExerciseGrid.uniform(3.0, 3)
    paths = simulate_gbm(p, [90.0, 90.0], grid, 100_000, seed=3)
    xT = paths.at(3)
    fwd = 90.0 * math.exp(-0.05 * 3.0)
    se = xT.std(axis=0) / math.sqrt(len(xT))
    assert np.all(np.abs(xT.mean(axis=0) - fwd) < 4 * se)


def test_log_increments_have_the_right_variance():
    p = GbmParams(1, 0.0, 0.0, 0.3)
    grid = ExerciseGrid((0.0, 0.5, 2.0))
    paths = simulate_gbm(p, [1.0], grid, 100_000, seed=4)
    inc = np.log(paths.states[:, 2, 0] / paths.states[:, 1, 0])
    assert inc.var() == pytest.approx(0.09 * 1.5, rel=0.02)


def test_correlation_applied():
    rho = np.array([[1.0, 0.6], [0.6, 1.0]])
    p = GbmParams(2, 0.0, 0.0, 0.2, rho)
    paths = simulate_gbm(p, [1.0, 1.0], ExerciseGrid.uniform(1.0, 1), 50_000, seed=2)
    inc = np.log(paths.at(1))
    assert np.corrcoef(inc.T)[0, 1] == pytest.approx(0.6, abs=0.02)


def test_singular_correlation_uses_square_root():
    rho = np.ones((2, 2))
    p = GbmParams(2, 0.0, 0.0, 0.2, rho)
    paths = simulate_gbm(p, [1.0, 1.0], ExerciseGrid.uniform(1.0, 1), 1000, seed=2)
    np.testing.assert_allclose(paths.at(1)[:, 0], paths.at(1)[:, 1], rtol=1e-12)


@pytest.mark.parametrize("rho", [
    [[1.0, 1.2], [1.2, 1.0]],
    [[1.0, 0.2], [0.3, 1.0]],
    [[2.0, 0.0], [0.0, 1.0]],
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
])
def test_bad_correlation_rejected(rho):
    with pytest.raises(InvalidInput):
        GbmParams(2, 0.0, 0.0, 0.2, np.array(rho))


def test_gbm_input_checks():
    p = GbmParams(2, 0.0, 0.0, 0.2)
    grid = ExerciseGrid.uniform(1.0, 2)
    with pytest.raises(InvalidInput):
        simulate_gbm(p, [1.0], grid, 10, 0)
    with pytest.raises(InvalidInput):
        simulate_gbm(p, [1.0, -1.0], grid, 10, 0)
    with pytest.raises(InvalidInput):
        simulate_gbm(p, [1.0, 1.0], grid, 0, 0)


def test_ensemble_is_read_only_and_reproducible():
    p = GbmParams(2, 0.05, 0.1, 0.2)
    grid = ExerciseGrid.uniform(3.0, 9)
    a = simulate_gbm(p, [90.0, 90.0], grid, 50, seed=11)
    b = simulate_gbm(p, [90.0, 90.0], grid, 50, seed=11)
    assert a.states.tobytes() == b.states.tobytes()
    with pytest.raises(ValueError):
        a.states[0, 0, 0] = 1.0
    # path 7 regenerated on its own
    c = simulate_gbm(p, [90.0, 90.0], grid, 1, seed=11, stream_offset=7)
    np.testing.assert_array_equal(c.states[0], a.states[7])
    assert list(a.streams()) == list(range(50))


def _three_state_chain():
    P = np.array([[0.2, 0.5, 0.3], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]])
    return FiniteChain([80.0, 100.0, 120.0], (P, P), 1, ExerciseGrid.uniform(2.0, 2))


def test_chain_transition_frequencies():
    chain = _three_state_chain()
    idx = simulate_chain_indices(chain, 60_000, seed=5)
    assert np.all(idx[:, 0] == 1)
    freq = np.bincount(idx[:, 1], minlength=3) / len(idx)
    np.testing.assert_allclose(freq, chain.transitions[0][1], atol=0.01)
    from_0 = idx[idx[:, 1] == 0, 2]
    np.testing.assert_allclose(np.bincount(from_0, minlength=3) / len(from_0), chain.transitions[1][0], atol=0.02)


def test_chain_validation():
    grid = ExerciseGrid.uniform(1.0, 1)
    with pytest.raises(InvalidInput):
        FiniteChain([0.0, 1.0], (np.array([[0.5, 0.4], [0.5, 0.5]]),), 0, grid)
    with pytest.raises(InvalidInput):
        FiniteChain([0.0, 1.0], (np.eye(2),), 2, grid)
    with pytest.raises(InvalidInput):
        FiniteChain([0.0, 1.0], (np.eye(2), np.eye(2)), 0, grid)


def test_ensemble_csv_round_trip(tmp_path):
    paths = simulate_chain(_three_state_chain(), 7, seed=1)
    gbm = simulate_gbm(GbmParams(2, 0.05, 0.1, 0.2), [90.0, 90.0], ExerciseGrid.uniform(3.0, 3), 5, 1)
    for ens in (paths, gbm):
        f = tmp_path / "paths.csv"
        write_ensemble_csv(ens, f)
        states, times = read_ensemble_states(f)
        assert states.tobytes() == ens.states.tobytes()
        assert times == ens.grid.times


def test_path_ensemble_shape_checked():
    grid = ExerciseGrid.uniform(1.0, 2)
    with pytest.raises(InvalidInput):
        PathEnsemble(np.ones((3, 2, 1)), grid, [1.0], 0, 0)
    with pytest.raises(InvalidInput):
        PathEnsemble(np.full((3, 3, 1), np.nan), grid, [1.0], 0, 0)
