import math

import numpy as np
import pytest

from bermudan_lpr.dp import DpConfig, backward_induct, tilde_price, tilde_price_with_se, write_level_csv
from bermudan_lpr.errors import InvalidInput
from bermudan_lpr.localpoly import KernelSpec
from bermudan_lpr.models import ExerciseGrid, FiniteChain, GbmParams, simulate_chain, simulate_gbm
from bermudan_lpr.oracles import exact_chain_dp
from bermudan_lpr.payoffs import PayoffSpec
from bermudan_lpr.testbeds import isolating_bandwidth

P = np.array([[0.2, 0.5, 0.3], [0.1, 0.6, 0.3], [0.3, 0.3, 0.4]])


def three_state_chain():
    return FiniteChain([80.0, 100.0, 120.0], (P, P), 1, ExerciseGrid.uniform(2.0, 2))


def test_isolated_fit_matches_exact_continuation():
    chain = three_state_chain()
    put = PayoffSpec.vanilla_put(100.0)
    h = isolating_bandwidth(chain)
    assert h == 10.0
    # Gamma here is (state share) / h ~ 0.03, below 1/log M: the gate is off for this check
    cfg = DpConfig(kernel=KernelSpec("triangle", h), truncation=False)
    paths = simulate_chain(chain, 10_000, seed=3)
    est = backward_induct(paths, put, cfg)
    fitted = est.continuation(1, chain.values)
    exact = np.asarray(exact_chain_dp(chain, put).continuation[1], dtype=float)
    # each state's fit is a sample mean of f_2 over its successors
    sd = np.sqrt(P @ (put.values(2, chain.values) ** 2) - exact**2)
    counts = np.bincount(np.searchsorted(chain.values[:, 0], paths.at(1)[:, 0]), minlength=3)
    assert np.all(np.abs(fitted - exact) <= 4 * sd / np.sqrt(counts) + 1e-12)


def test_gate_passes_isolated_states_on_unit_scale():
    chain = FiniteChain([0.8, 1.0, 1.2], (P, P), 1, ExerciseGrid.uniform(2.0, 2))
    put = PayoffSpec.vanilla_put(1.0)
    cfg = DpConfig(kernel=KernelSpec("triangle", isolating_bandwidth(chain)))
    est = backward_induct(simulate_chain(chain, 10_000, seed=3), put, cfg)
    exact = np.asarray(exact_chain_dp(chain, put).continuation[1], dtype=float)
    np.testing.assert_allclose(est.continuation(1, chain.values), exact, atol=0.01)


def test_basis_larger_than_sample_is_rejected():
    grid = ExerciseGrid.uniform(1.0, 2)
    paths = simulate_gbm(GbmParams(2, 0.0, 0.0, 0.2), [1.0, 1.0], grid, 5, 0)
    with pytest.raises(InvalidInput):
        backward_induct(paths, PayoffSpec.max_call(1.0), DpConfig(degree=2))


def test_zero_payoff_gives_zero_everything():
    grid = ExerciseGrid.uniform(3.0, 9)
    paths = simulate_gbm(GbmParams(2, 0.05, 0.1, 0.2), [90.0, 90.0], grid, 300, 1)
    est = backward_induct(paths, PayoffSpec.zero(), DpConfig(kernel=KernelSpec("triangle", 40.0)))
    assert tilde_price(paths, est, PayoffSpec.zero()) == 0.0
    assert est.c0 == 0.0
    assert all(np.all(t == 0) for t in est.targets)


def test_single_exercise_date_is_discounted_mean():
    grid = ExerciseGrid.uniform(1.0, 1)
    paths = simulate_gbm(GbmParams(1, 0.05, 0.0, 0.2), [100.0], grid, 2000, 1)
    put = PayoffSpec.vanilla_put(100.0)
    cfg = DpConfig.market(0.05, 1.0)
    est = backward_induct(paths, put, cfg)
    assert est.estimators == ()
    expected = math.exp(-0.05) * put.values(1, paths.at(1)).mean()
    assert tilde_price(paths, est, put) == pytest.approx(expected, rel=1e-14)


def test_targets_are_discounted_max_of_next_payoff_and_continuation():
    grid = ExerciseGrid.uniform(3.0, 3)
    paths = simulate_gbm(GbmParams(2, 0.05, 0.1, 0.2), [90.0, 90.0], grid, 400, 2)
    f = PayoffSpec.max_call(100.0)
    cfg = DpConfig.market(0.05, 1.0, kernel=KernelSpec("triangle", 30.0))
    est = backward_induct(paths, f, cfg)
    disc = cfg.discount_per_step
    np.testing.assert_allclose(est.targets[1], disc * f.values(3, paths.at(3)))
    c2 = est.continuation(2, paths.at(2))
    np.testing.assert_allclose(est.targets[0], disc * np.maximum(f.values(2, paths.at(2)), c2))
    assert est.c0 == pytest.approx(disc * np.mean(np.maximum(f.values(1, paths.at(1)), est.first_fit)))


def test_truncation_flag_controls_evaluation():
    grid = ExerciseGrid.uniform(3.0, 3)
    paths = simulate_gbm(GbmParams(2, 0.05, 0.1, 0.2), [90.0, 90.0], grid, 200, 2)
    f = PayoffSpec.max_call(100.0)
    far = np.array([[400.0, 400.0]])
    on = backward_induct(paths, f, DpConfig(kernel=KernelSpec("triangle", 5.0)))
    off = backward_induct(paths, f, DpConfig(kernel=KernelSpec("triangle", 5.0), truncation=False))
    assert on.continuation(1, far)[0] == 0.0 and off.continuation(1, far)[0] == 0.0
    assert np.all(on.continuation(1, paths.at(1)) <= on.c_max)


def test_per_date_bandwidths():
    cfg = DpConfig(kernel=KernelSpec("triangle", 1.0), bandwidths=(2.0, 3.0))
    assert cfg.kernel_at(1).bandwidth == 2.0 and cfg.kernel_at(2).bandwidth == 3.0


def test_config_guards():
    for kw in [dict(degree=-1), dict(discount_per_step=0.0), dict(nu=-1.0), dict(start_index=2), dict(c_max=-1.0)]:
        with pytest.raises(InvalidInput):
            DpConfig(**kw)


def test_start_index_zero_uses_immediate_payoff():
    grid = ExerciseGrid.uniform(1.0, 1)
    paths = simulate_gbm(GbmParams(1, 0.1, 0.0, 0.1), [50.0], grid, 1000, 1)
    put = PayoffSpec.vanilla_put(100.0)
    # holding is worth about 100 exp(-0.1) - 50 < 50, so exercising at t0 wins
    est = backward_induct(paths, put, DpConfig.market(0.1, 1.0, start_index=0))
    value, se = tilde_price_with_se(paths, est, put)
    assert value == 50.0 and se == 0.0


def test_chain_mismatch_detected():
    grid = ExerciseGrid.uniform(1.0, 2)
    a = simulate_gbm(GbmParams(1, 0.0, 0.0, 0.2), [1.0], grid, 50, 1)
    b = simulate_gbm(GbmParams(1, 0.0, 0.0, 0.2), [1.0], grid, 50, 2)
    est = backward_induct(a, PayoffSpec.vanilla_put(1.0), DpConfig(kernel=KernelSpec("triangle", 0.3)))
    with pytest.raises(InvalidInput):
        tilde_price(b, est, PayoffSpec.vanilla_put(1.0))


def test_level_csv(tmp_path):
    grid = ExerciseGrid.uniform(1.0, 3)
    paths = simulate_gbm(GbmParams(1, 0.0, 0.0, 0.2), [1.0], grid, 100, 1)
    est = backward_induct(paths, PayoffSpec.vanilla_put(1.0), DpConfig(kernel=KernelSpec("triangle", 0.3)))
    write_level_csv(est, tmp_path / "levels.csv")
    rows = (tmp_path / "levels.csv").read_text().splitlines()
    assert rows[0] == "k,mean_target,gated_fraction" and len(rows) == 3
