import numpy as np
import pytest

from spillover.errors import (
    DiagnosticWarning,
    InvalidArgumentError,
    InvariantViolationError,
    NumericDegenerateError,
)
from spillover.network import (
    WeightsMatrix,
    WeightsSet,
    build_group_blocks,
    build_path_neighbors,
    row_normalize,
    validate_weights,
)


def test_path_neighbors_degree_one_is_tridiagonal_row_stochastic():
    W = build_path_neighbors(5, 1)
    expected = np.zeros((5, 5))
    for i in range(5):
        nbrs = [j for j in (i - 1, i + 1) if 0 <= j < 5]
        expected[i, nbrs] = 1.0 / len(nbrs)
    np.testing.assert_array_equal(W.values, expected)
    assert W.row_normalized and W.label == "W1"


def test_path_neighbors_degree_two_links():
    W = build_path_neighbors(6, 2, normalize=False)
    assert W.values[0, 2] == 1 and W.values[2, 0] == 1 and W.values[0, 1] == 0
    assert np.all(np.diag(W.values) == 0)


@pytest.mark.parametrize("n,degree", [(1, 1), (5, 0), (5, 5)])
def test_path_neighbors_rejects_bad_degree(n, degree):
    with pytest.raises(InvalidArgumentError):
        build_path_neighbors(n, degree)


def test_group_blocks():
    W = build_group_blocks(["a", "a", "b", "b", "b"])
    np.testing.assert_allclose(W.values[0], [0, 1, 0, 0, 0])
    np.testing.assert_allclose(W.values[2], [0, 0, 0, 0.5, 0.5])


def test_group_blocks_singletons_warn():
    with pytest.warns(DiagnosticWarning):
        W = build_group_blocks([1, 2, 3])
    assert not W.values.any()


def test_row_normalize_idempotent_and_zero_rows():
    A = np.array([[0, 2.0, 1.0], [0, 0, 0], [3.0, 1.0, 0]])
    W1 = row_normalize(WeightsMatrix(A))
    W2 = row_normalize(W1)
    np.testing.assert_array_equal(W1.values, W2.values)
    np.testing.assert_allclose(W1.values.sum(axis=1), [1, 0, 1])


def test_row_normalize_zero_sum_row():
    with pytest.raises(NumericDegenerateError):
        row_normalize(WeightsMatrix(np.array([[0, 1.0, -1.0], [1, 0, 0], [1, 0, 0]])))


def test_weights_matrix_validation():
    with pytest.raises(InvalidArgumentError):
        WeightsMatrix(np.zeros((2, 3)))
    with pytest.raises(InvariantViolationError):
        WeightsMatrix(np.array([[0, np.nan], [1, 0]]))
    with pytest.raises(InvariantViolationError):
        WeightsMatrix(np.array([[0, 0.5], [1, 0]]), row_normalized=True)
    W = WeightsMatrix(np.eye(2))
    with pytest.raises(ValueError):
        W.values[0, 0] = 3.0


def test_weights_set_bounds():
    ws = WeightsSet((build_path_neighbors(6, 1), build_path_neighbors(6, 2)))
    assert ws.Q == 2 and ws.n == 6
    assert ws.max_row_sum == pytest.approx(1.0)
    assert ws.rho_bound(0.01) == pytest.approx(0.99)
    assert WeightsSet.empty(4).rho_bound() == np.inf
    with pytest.raises(InvalidArgumentError):
        WeightsSet((build_path_neighbors(6, 1), build_path_neighbors(5, 1)))


def test_validate_weights():
    ws = WeightsSet((build_path_neighbors(6, 1),))
    rep = validate_weights(ws)
    assert rep.diagonal_zero and rep.rho_bound == pytest.approx(0.99)
    bad = WeightsSet((WeightsMatrix(np.eye(3), label="I"),))
    with pytest.raises(InvariantViolationError):
        validate_weights(bad)
    zero_row = WeightsSet((WeightsMatrix(np.array([[0, 1.0, 0], [0, 0, 0], [1, 0, 0]])),))
    with pytest.warns(DiagnosticWarning):
        rep = validate_weights(zero_row)
    assert rep.zero_rows == (1,)
