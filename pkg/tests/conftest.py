import numpy as np
import pytest

from spillover.dgp import CovariateSpec, SimulationDesign, simulate
from spillover.model import ModelLayout, ParamVector
from spillover.network import WeightsMatrix, WeightsSet, build_path_neighbors, row_normalize

ACCEPTANCE_LINES = []


def random_weights(n, Q, rng, density=0.5):
    mats = []
    for q in range(Q):
        A = (rng.uniform(size=(n, n)) < density) * rng.uniform(0.2, 1.0, size=(n, n))
        np.fill_diagonal(A, 0.0)
        for i in range(n):
            if not A[i].any():
                A[i, (i + 1) % n] = 1.0
        mats.append(row_normalize(WeightsMatrix(A, label=f"R{q + 1}")))
    return WeightsSet(tuple(mats))


def small_design(n=8, T=6, Q=2, K=2, R0=1, seed=0, sigma0_sq=1.0, dynamic=True, interact=True,
                 error_dist="normal", weights=None, burn_in=20):
    """Scaled-down design sharing the benchmark structure."""
    interactions = tuple((0, q) for q in range(Q)) if interact and K else ()
    lag_channels = tuple(range(Q)) if dynamic else ()
    layout = ModelLayout(Q, tuple(f"x{k + 1}" for k in range(K)), interactions, dynamic, lag_channels)
    rho = [0.2, -0.15, 0.1][:Q]
    delta = [1.0, -0.5, 0.8][:K] + [0.4, -0.3, 0.2][: len(interactions)]
    phi = ([0.3] + [0.1, -0.1, 0.05][:Q]) if dynamic else []
    theta0 = ParamVector.from_parts(layout, rho, delta, phi)
    if weights is None:
        weights = WeightsSet(tuple(build_path_neighbors(n, q + 1) for q in range(Q))) if Q else WeightsSet.empty(n)
    return SimulationDesign(n, T, R0, theta0, weights, sigma0_sq, burn_in, seed,
                            CovariateSpec(), error_dist)


def small_panel(**kw):
    return simulate(small_design(**kw))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
