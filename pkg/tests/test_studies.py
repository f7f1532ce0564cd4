import numpy as np
import pytest

from bermudan_lpr.errors import InvalidInput, Unsupported
from bermudan_lpr.studies import RegressionPlan, bandwidth_study, boundary_study, loglog_slope, rate_study
from bermudan_lpr.testbeds import DigitalModel, linear_margin_chain

from .test_pricing import small_experiment


def test_loglog_slope():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    assert loglog_slope(x, 3 * x**-0.5) == pytest.approx(-0.5)
    assert loglog_slope([1.0, 2.0], [0.0, 0.0]) is None
    assert loglog_slope([1.0, 2.0, 4.0], [1.0, 0.0, 0.25]) == pytest.approx(-1.0)


def test_rate_study_rows_and_threads():
    model = linear_margin_chain()
    plan = RegressionPlan(bandwidth=0.5 / 49)
    one = rate_study(model, [256, 512], 4, plan, master_seed=1)
    two = rate_study(model, [256, 512], 4, plan, master_seed=1, threads=2)
    assert [r.M for r in one.rows] == [256, 512]
    assert one.rows == two.rows
    assert all(r.bias_hat >= 0 for r in one.rows)


def test_rate_study_guards():
    plan = RegressionPlan(bandwidth=0.1)
    with pytest.raises(InvalidInput):
        rate_study(linear_margin_chain(), [512, 256], 2, plan)
    with pytest.raises(InvalidInput):
        rate_study(linear_margin_chain(), [], 2, plan)
    with pytest.raises(Unsupported):
        rate_study(object(), [256], 2, plan)


def test_digital_rate_study_uses_rule_bandwidth():
    study = rate_study(DigitalModel(quadrature_points=2000), [512], 2, RegressionPlan(beta=1.0))
    assert study.rows[0].h == pytest.approx(512 ** (-1 / 3))
    assert study.slope_hat is None


def test_bandwidth_study_guards_and_common_seeds():
    exp = small_experiment(M=200, N=200)
    with pytest.raises(InvalidInput):
        bandwidth_study(exp, [], 2)
    with pytest.raises(InvalidInput):
        bandwidth_study(exp, [-1.0], 2)
    results = bandwidth_study(exp, [40.0, 80.0], 2)
    assert results[0][1].seeds == results[1][1].seeds


def test_boundary_study_rows():
    rng = np.random.default_rng(0)
    fit, rows = boundary_study(rng.uniform(size=5000), [0.01, 0.1])
    assert [r[0] for r in rows] == [0.01, 0.1] and all(r[2] for r in rows)
