import math

import numpy as np
import pytest

from conftest import small_design, small_panel
from spillover.errors import InvalidArgumentError, NumericDegenerateError, SelectionFailure
from spillover.model import ParamVector
from spillover.objective import ObjectiveContext, residual_panel
from spillover.optimizer import OptimizerConfig, maximize_unpenalized
from spillover.penalty import make_adaptive_weights
from spillover.selection import (
    IC1,
    IC2,
    IC3,
    GammaGrid,
    factor_ic_trace,
    ic_factors,
    ic_star,
    residual_factor_panel,
    select_gamma,
    select_num_factors,
    support_penalty,
)


def test_variant_penalties_at_25():
    assert IC1.penalty(25, 25) == pytest.approx(0.128755, abs=1e-6)
    assert IC2.penalty(25, 25) == pytest.approx(2 * 25 / 625 * math.log(25))
    assert IC3.penalty(25, 25) == pytest.approx(2 * 25 / 625 * math.log(625 / 50))
    assert support_penalty(50, 30) == pytest.approx(math.log(30) / 30)


def test_grid_validation_and_layout():
    g = GammaGrid.logarithmic(1.0, 2.0, points=4, span=1e-3)
    assert g.rho_values[0] == pytest.approx(1e-3) and g.beta_values[-1] == 2.0 and len(g) == 16
    assert GammaGrid.logarithmic(0.0, 1.0).rho_values == (0.0,)
    with pytest.raises(InvalidArgumentError):
        GammaGrid((1.0, 0.5), (1.0,))
    with pytest.raises(InvalidArgumentError):
        GammaGrid(tuple(range(21)), (1.0,))
    with pytest.raises(InvalidArgumentError):
        GammaGrid((), (1.0,))


@pytest.fixture(scope="module")
def setup():
    tr = small_panel(n=12, T=10, seed=7)
    ctx = ObjectiveContext(tr.panel, 1)
    res = maximize_unpenalized(ctx, OptimizerConfig(multistart_count=2))
    return ctx, res, make_adaptive_weights(res.theta_hat, 4.0)


def test_ic_star_endpoints(setup):
    ctx, res, pen = setup
    zero = ParamVector(np.zeros(ctx.P), ctx.layout)
    from spillover.objective import trailing_eigensum

    s2_zero = trailing_eigensum(residual_panel(zero.values, ctx), 1)
    assert ic_star((1e12, 1e12), ctx, pen, theta_init=res.theta_hat) == pytest.approx(s2_zero)
    full = ic_star((0.0, 0.0), ctx, pen, theta_init=res.theta_hat)
    assert full == pytest.approx(res.sigma2 + support_penalty(ctx.n, ctx.T) * ctx.P, rel=1e-8)


def test_single_point_grid(setup):
    ctx, res, pen = setup
    sel = select_gamma(GammaGrid((0.0,), (0.0,)), ctx, pen, theta_init=res.theta_hat)
    assert sel.gamma_star == (0.0, 0.0) and len(sel.trace) == 1


def test_tie_goes_to_lexicographically_first(setup):
    ctx, res, pen = setup
    sel = select_gamma(GammaGrid((1e10, 1e11), (1e10, 1e11)), ctx, pen, theta_init=res.theta_hat)
    assert sel.gamma_star == (1e10, 1e10)
    assert len({p.ic_star for p in sel.trace}) == 1


def test_grid_selection_reproducible(setup):
    ctx, res, pen = setup
    grid = GammaGrid.logarithmic(1e-2, 1e-2, points=3, span=1e-6)
    a = select_gamma(grid, ctx, pen, theta_init=res.theta_hat)
    b = select_gamma(grid, ctx, pen, theta_init=res.theta_hat)
    assert a.trace_rows() == b.trace_rows()


def test_all_points_fail(setup, monkeypatch):
    ctx, res, pen = setup
    import spillover.selection as sel_mod
    from spillover.errors import OptimizationFailure

    def boom(*a, **k):
        raise OptimizationFailure("x")

    monkeypatch.setattr(sel_mod, "maximize_penalized", boom)
    with pytest.raises(SelectionFailure):
        select_gamma(GammaGrid((0.0,), (0.0,)), ctx, pen)


def test_residual_factor_panel_identities():
    d = small_design(seed=3, sigma0_sq=0.0)
    tr = small_panel(seed=3, sigma0_sq=0.0)
    ctx = ObjectiveContext(tr.panel, 1)
    np.testing.assert_allclose(residual_factor_panel(d.theta0, ctx), tr.common, atol=1e-9)
    zero = ParamVector(np.zeros(ctx.P), ctx.layout)
    np.testing.assert_array_equal(residual_factor_panel(zero, ctx), tr.panel.Y)


def test_exact_rank_input_is_degenerate(rng):
    M = rng.standard_normal((10, 3)) @ rng.standard_normal((3, 12))
    with pytest.raises(NumericDegenerateError):
        ic_factors(M, 3, IC2)
    assert np.isfinite(ic_factors(M, 2, IC2))


def test_rank_two_signal_selected(rng):
    n, T = 40, 200
    M = 5 * rng.standard_normal((n, 2)) @ rng.standard_normal((2, T)) + rng.standard_normal((n, T))
    assert select_num_factors(M, 6) == {"IC1": 2, "IC2": 2, "IC3": 2}
    trace = factor_ic_trace(M, 6, [IC2])
    vals = [r["ic"] for r in trace]
    k = int(np.argmin(vals))
    assert all(b >= a for a, b in zip(vals[k:], vals[k + 1:])) and all(a >= b for a, b in zip(vals[:k], vals[1:k + 1]))


def test_pure_noise_selects_zero():
    from spillover.dgp import make_rng

    hits = sum(select_num_factors(make_rng(5, (s,)).standard_normal((25, 25)), 6, [IC2])["IC2"] == 0
               for s in range(100))
    assert hits >= 90


def test_r_max_zero_and_bounds(rng):
    M = rng.standard_normal((6, 6))
    assert select_num_factors(M, 0) == {"IC1": 0, "IC2": 0, "IC3": 0}
    with pytest.raises(InvalidArgumentError):
        select_num_factors(M, 6)
