import numpy as np
import pytest

from cfhazard.cf import ControlFunctionSpec
from cfhazard.data import PanelDataset, build_frame
from cfhazard.errors import EstimationError
from cfhazard.estimator import (
    coefficient_table,
    degenerate_periods,
    fit_ivcloglog,
    fit_naive_cloglog,
    fit_predictor_substitution,
)
from cfhazard.simulate import DgpConfig, generate_panel


def _extend(d, exog=None, exog_names=None, instruments=None, instrument_names=None, fail=None):
    return PanelDataset(
        entity=d.entity,
        time=d.time,
        fail=d.fail if fail is None else fail,
        endog=d.endog,
        exog=d.exog if exog is None else exog,
        instruments=d.instruments if instruments is None else instruments,
        endog_names=d.endog_names,
        exog_names=d.exog_names if exog_names is None else exog_names,
        instrument_names=d.instrument_names if instrument_names is None else instrument_names,
    )


@pytest.fixture(scope="module")
def panel():
    return generate_panel(DgpConfig(n_entities=400, endogeneity_rho=0.5, seed=11), 0)


def test_names_follow_convention(panel):
    res = fit_ivcloglog(build_frame(panel), ControlFunctionSpec(2))
    assert res.names[0] == "pi_x1:psi_t1"
    assert "psi_t1" in res.names and "x1" in res.names
    assert res.names[-2:] == ["cf_v1^1", "cf_v1^2"]
    assert res.diagnostics["converged"]
    np.testing.assert_array_equal(res.std_errors, np.sqrt(np.diag(res.V)))


def test_summary_table(panel):
    res = fit_ivcloglog(build_frame(panel))
    tab = res.summary(0.9)
    row = tab.loc["x1"]
    assert row.estimate == res.coef("x1")
    assert row.ci_high - row.estimate == pytest.approx(1.6448536269514722 * row.std_error, rel=1e-12)
    assert list(tab.columns) == ["estimate", "std_error", "z", "p", "ci_low", "ci_high"]


def test_coefficient_table_p_values():
    tab = coefficient_table(["a"], [1.96], [1.0])
    assert tab.loc["a", "p"] == pytest.approx(0.04999579, rel=1e-6)


def test_screening_reports_and_leaves_estimates_unchanged(panel):
    pp = np.zeros(len(panel))
    pp[np.flatnonzero(panel.fail == 0)[:15]] = 1.0
    dirty = _extend(
        panel,
        exog=np.column_stack([panel.exog, pp]),
        exog_names=panel.exog_names + ("pp",),
        instruments=np.column_stack([panel.instruments, panel.instruments]),
        instrument_names=("inst1", "inst1_copy"),
    )
    res = fit_ivcloglog(build_frame(dirty))
    clean = fit_ivcloglog(build_frame(panel))
    assert res.diagnostics["perfect_predictors"] == ["pp"]
    assert res.diagnostics["dropped_instruments"] == ["inst1_copy"]
    assert res.names == clean.names
    np.testing.assert_allclose(res.theta, clean.theta, rtol=0, atol=1e-10)


def test_perfect_predictor_in_second_stage_only(panel):
    # a dummy equal to y: separation by construction
    leak = panel.fail.astype(float)
    d = _extend(panel, exog=np.column_stack([panel.exog, leak]), exog_names=panel.exog_names + ("leak",))
    res = fit_ivcloglog(build_frame(d))
    assert "leak" in res.diagnostics["perfect_predictors"]
    assert "leak" not in res.names


def test_degenerate_period_rows_dropped(panel):
    fail = panel.fail.copy()
    fail[panel.time == 8] = 0
    d = _extend(panel, fail=fail)
    frame = build_frame(d)
    assert degenerate_periods(frame) == [8]
    res = fit_ivcloglog(frame)
    assert res.diagnostics["dropped_periods"] == [8]
    assert "psi_t8" not in res.names


def test_custom_clusters(panel):
    frame = build_frame(panel)
    own = fit_ivcloglog(frame, clusters=np.arange(frame.n_entities))
    default = fit_ivcloglog(frame)
    np.testing.assert_allclose(own.V, default.V, rtol=1e-12, atol=1e-15)
    coarse = fit_ivcloglog(frame, clusters=np.arange(frame.n_entities) // 4)
    assert coarse.vce.omega_kind == "custom-clustered"
    with pytest.raises(EstimationError, match="cluster map"):
        fit_ivcloglog(frame, clusters=np.arange(3))


def test_transform_route(panel):
    res = fit_ivcloglog(build_frame(panel), transforms=["xpos=1(x1 > 0)"])
    assert "xpos" in res.names and "x1" not in res.names[res.n_first :]
    # the first stage still regresses the raw variable
    assert res.first.endog_names == ["x1"]


def test_naive_and_substitution_fit(panel):
    frame = build_frame(panel)
    naive = fit_naive_cloglog(frame)
    twosps = fit_predictor_substitution(frame)
    assert naive.names == twosps.names
    assert naive.coef("x1") != twosps.coef("x1")
    assert np.all(np.isfinite(naive.std_errors))


def test_order_condition_surfaces_from_pipeline(panel):
    d = _extend(panel, instruments=np.zeros((len(panel), 0)), instrument_names=())
    with pytest.raises(EstimationError, match="order condition"):
        fit_ivcloglog(build_frame(d))
