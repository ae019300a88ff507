import numpy as np
import pytest

from conftest import random_weights, small_panel
from spillover.errors import InadmissibleParameterError, InvalidArgumentError, InvariantViolationError
from spillover.model import (
    ModelLayout,
    PanelData,
    ParamVector,
    a_matrix,
    build_instruments,
    g_matrix,
    log_det_s,
    projector_from,
    residuals,
    s_matrix,
)
from spillover.network import WeightsSet, build_path_neighbors


def test_layout_names_and_blocks():
    lay = ModelLayout(2, ("x1", "x2"), ((0, 0), (0, 1)), True, (0,))
    assert lay.names == ["rho1", "rho2", "delta1", "delta2", "delta1_1", "delta1_2", "phi1", "phi2"]
    assert (lay.Q, lay.K_primitive, lay.K_delta, lay.K_phi, lay.K, lay.P) == (2, 2, 4, 2, 6, 8)
    assert lay.index("phi2") == 7
    assert ModelLayout.from_dict(lay.to_dict()) == lay


def test_layout_rejects_bad_interaction():
    with pytest.raises(InvalidArgumentError):
        ModelLayout(1, ("x1",), ((0, 1),))
    with pytest.raises(InvalidArgumentError):
        ModelLayout(1, ("x1",), (), True, (0, 0))


def test_param_vector_parts_and_immutability():
    lay = ModelLayout(1, ("x1",), (), True, ())
    th = ParamVector.from_parts(lay, [0.2], [1.5], [0.3])
    assert th.as_dict() == {"rho1": 0.2, "delta1": 1.5, "phi1": 0.3}
    np.testing.assert_array_equal(th.beta, [1.5, 0.3])
    with pytest.raises(ValueError):
        th.values[0] = 1.0
    with pytest.raises(InvalidArgumentError):
        ParamVector(np.zeros(2), lay)


def test_s_matrix_and_logdet(rng):
    ws = random_weights(6, 2, rng)
    rho = np.array([0.3, -0.2])
    S = s_matrix(rho, ws)
    np.testing.assert_allclose(S, np.eye(6) - 0.3 * ws.stack[0] + 0.2 * ws.stack[1])
    assert log_det_s(rho, ws) == pytest.approx(np.log(np.linalg.det(S)), abs=1e-12)
    assert log_det_s([0.0, 0.0], ws) == 0.0


def test_logdet_inadmissible():
    ws = WeightsSet((build_path_neighbors(4, 1),))
    with pytest.raises(InadmissibleParameterError):
        log_det_s([1.0], ws)  # S singular for a row-stochastic W


def test_a_matrix_static_is_zero(rng):
    ws = random_weights(5, 2, rng)
    A, norm = a_matrix([0.1, 0.1], [0.0, 0.0, 0.0], ws)
    assert norm == 0.0 and not A.any()


def test_a_matrix_own_lag_only(rng):
    ws = random_weights(5, 1, rng)
    A, _ = a_matrix([0.0], [0.5, 0.0], ws)
    np.testing.assert_allclose(A, 0.5 * np.eye(5))


def test_g_matrix_at_zero_is_w(rng):
    ws = random_weights(5, 2, rng)
    np.testing.assert_allclose(g_matrix(1, [0.0, 0.0], ws), ws.stack[1])


def test_residuals_at_truth_equal_common_plus_noise():
    tr = small_panel(seed=3)
    E = residuals(_theta0(seed=3), tr.panel)
    np.testing.assert_allclose(E, tr.common + tr.epsilon, atol=1e-9)


def _theta0(seed):
    from conftest import small_design

    return small_design(seed=seed).theta0


def test_panel_validation():
    tr = small_panel()
    p = tr.panel
    with pytest.raises(InvalidArgumentError):
        PanelData(p.Y, p.Y_lag[:, :-1], p.X_star, p.layout, p.weights)
    Y = np.array(p.Y)
    Y[0, 0] = np.inf
    with pytest.raises(InvariantViolationError):
        PanelData(Y, p.Y_lag, p.X_star, p.layout, p.weights)


def test_regressor_order():
    p = small_panel().panel
    W = p.weights.stack
    reg = p.regressors
    np.testing.assert_array_equal(reg[0], p.X_star[0])
    np.testing.assert_allclose(reg[2], W[0] @ p.X_star[0])
    np.testing.assert_array_equal(reg[4], p.Y_lag)
    np.testing.assert_allclose(reg[6], W[1] @ p.Y_lag)


def test_projector_properties(rng):
    B = rng.standard_normal((7, 2))
    P = projector_from(B)
    np.testing.assert_allclose(P.P @ P.P, P.P, atol=1e-12)
    np.testing.assert_allclose(P.annihilate(B), 0, atol=1e-12)
    assert projector_from(np.zeros((4, 2))).dimension == 0
    rank1 = projector_from(np.outer(rng.standard_normal(5), [1.0, 2.0]))
    assert rank1.dimension == 1


def test_instruments_structure():
    tr = small_panel(seed=1)
    th = _theta0(1)
    Z = build_instruments(th, tr.panel)
    G0 = g_matrix(0, th.rho, tr.panel.weights)
    Xb = np.tensordot(th.beta, tr.panel.regressors, axes=1)
    np.testing.assert_allclose(Z[0], G0 @ Xb)
    np.testing.assert_array_equal(Z[2:], tr.panel.regressors)
