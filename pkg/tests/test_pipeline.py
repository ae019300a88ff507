import numpy as np
import pytest

from conftest import small_design, small_panel
from spillover.dgp import simulate
from spillover.errors import InvalidArgumentError, StageError
from spillover.model import ModelLayout, PanelData
from spillover.network import WeightsSet
from spillover.optimizer import OptimizerConfig
from spillover.pipeline import (
    EstimationReport,
    PipelineConfig,
    build_report,
    estimate_fixed_r,
    full_pipeline,
    run_pipeline,
)
from spillover.selection import full_pipeline as selection_entry


@pytest.fixture(scope="module")
def fitted():
    tr = small_panel(n=20, T=20, seed=5, R0=1)
    return tr, estimate_fixed_r(tr.panel, 1)


def test_fixed_r_keeps_strong_coefficients(fitted):
    tr, est = fitted
    theta0 = small_design(n=20, T=20, seed=5, R0=1).theta0.values
    assert est.theta_hat.values.shape == est.theta_tilde.values.shape
    assert set(est.support) <= set(np.flatnonzero(est.theta_check.values))
    assert est.inference is not None and len(est.inference.se) == len(est.support)
    strong = np.abs(theta0) >= 0.2
    assert np.all(est.theta_hat.values[strong] != 0)


def test_refit_keeps_penalized_zeros(fitted):
    _, est = fitted
    zeros = est.theta_check.values == 0
    assert not est.theta_hat.values[zeros].any()


def test_report_json_round_trip(fitted):
    tr, est = fitted
    rep = build_report(tr.panel, est)
    text = rep.to_json()
    back = EstimationReport.from_json(text)
    assert back == rep
    assert back.to_json() == text
    table = rep.coefficient_table()
    assert table.splitlines()[0].split() == ["parameter", "estimate", "corrected", "se", "t"]
    assert len(table.splitlines()) == len(rep.support) + 3


def test_no_network_no_factors_zero_gamma_is_ols():
    tr = small_panel(n=12, T=10, Q=0, K=2, R0=0, dynamic=False, interact=False, seed=3)
    data = tr.panel
    est = estimate_fixed_r(data, 0, PipelineConfig(fixed_gamma=(0.0, 0.0)))
    X = data.regressors.reshape(data.layout.P, -1).T
    ols = np.linalg.lstsq(X, data.Y.reshape(-1), rcond=None)[0]
    np.testing.assert_allclose(est.theta_hat.values, ols, atol=1e-8)


def test_too_few_observations_rejected():
    lay = ModelLayout(0, ("x1", "x2", "x3"), (), False, ())
    data = PanelData(np.ones((1, 2)), np.zeros((1, 2)), np.ones((3, 1, 2)), lay, WeightsSet.empty(1))
    with pytest.raises(InvalidArgumentError):
        run_pipeline(data, 0)


def test_r_max_bounds():
    tr = small_panel(n=6, T=5, seed=1)
    with pytest.raises(InvalidArgumentError):
        run_pipeline(tr.panel, 5)


def test_stage_error_names_stage(monkeypatch):
    import spillover.pipeline as pl
    from spillover.errors import SingularInformationError

    def boom(*a, **k):
        raise SingularInformationError("degenerate")

    monkeypatch.setattr(pl, "run_inference", boom)
    tr = small_panel(n=10, T=10, seed=2, R0=0)
    with pytest.raises(StageError) as info:
        pl.estimate_fixed_r(tr.panel, 0)
    assert info.value.stage == "inference"
    assert isinstance(info.value.cause, SingularInformationError)


def test_invalid_config():
    with pytest.raises(InvalidArgumentError):
        PipelineConfig(variant="IC9")
    with pytest.raises(InvalidArgumentError):
        PipelineConfig(grid_span=2.0)


def test_full_pipeline_small():
    tr = simulate(small_design(n=25, T=25, seed=4, R0=1))
    cfg = PipelineConfig(R_max=3)
    res = run_pipeline(tr.panel, cfg=cfg)
    rep = res.report
    assert set(rep.R_selected) == {"IC1", "IC2", "IC3"}
    assert rep.R_used == rep.R_selected["IC2"] == res.final.R
    assert {r["variant"] for r in rep.factor_trace} == {"IC1", "IC2", "IC3"}
    assert len(rep.factor_trace) == 3 * 4
    assert rep.to_json() == full_pipeline(tr.panel, cfg=cfg).to_json()
    assert selection_entry(tr.panel, cfg=cfg).to_json() == rep.to_json()


def test_reuse_when_selected_equals_r_max(monkeypatch):
    import spillover.pipeline as pl

    tr = small_panel(n=15, T=15, seed=6, R0=1)
    monkeypatch.setattr(pl, "select_num_factors", lambda resid, R_max, variants: {v.name: R_max for v in variants})
    calls = []
    orig = pl.estimate_fixed_r
    monkeypatch.setattr(pl, "estimate_fixed_r", lambda *a, **k: calls.append(a[1]) or orig(*a, **k))
    res = pl.run_pipeline(tr.panel, 1)
    assert calls == [1]
    assert res.final.initial is res.stage2.initial
    np.testing.assert_allclose(res.final.theta_hat.values, res.stage2.theta_hat.values, atol=1e-9)
    assert res.final.inference is not None


def test_benchmark_gamma_is_interior_and_support_exact():
    from spillover.dgp import table1_design

    d = table1_design(25, 25, seed=1)
    est = estimate_fixed_r(simulate(d).panel, 3)
    g_rho, g_beta = est.selection.gamma_star
    rho_levels = sorted({p.gamma_rho for p in est.selection.trace})
    beta_levels = sorted({p.gamma_beta for p in est.selection.trace})
    assert beta_levels[0] < g_beta < beta_levels[-1]
    assert g_rho < rho_levels[-1]
    assert np.array_equal(est.theta_hat.values != 0, d.theta0.values != 0)


def test_network_free_data_degrades_to_penalized_regression():
    from spillover.dgp import SimulationDesign
    from spillover.model import ParamVector

    lay = ModelLayout(0, ("x1",), (), False, ())
    d = SimulationDesign(25, 25, 0, ParamVector(np.array([1.0]), lay), WeightsSet.empty(25), 1.0, 50, 3)
    res = run_pipeline(simulate(d).panel, 3)
    assert res.R_selected["IC2"] <= 1
    assert res.report.support == ["delta1"]
    assert abs(res.report.theta_hat[0] - 1.0) < 0.1
