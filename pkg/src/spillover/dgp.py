"""Simulation of panels from the spillover model.

Outcomes follow the reduced-form recursion

    y_t = A y_{t-1} + S^{-1} (X*_t delta + Lambda f_t + eps_t),

run from ``y = 0`` through a burn-in that is discarded.  The factor design
mirrors the standard simulation layout: path-neighbour weights whose count
grows with ``n`` and primitive covariates whose count grows with ``T``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .model import ModelLayout, PanelData, ParamVector, a_matrix, lag_operator, s_inverse
from .network import WeightsSet, build_path_neighbors

RNG_NAME = "numpy.random.Philox"
DEFAULT_BURN_IN = 200

_CHANNELS = {25: 3, 50: 4, 100: 5}
_PRIMITIVES = {25: 3, 50: 4, 100: 5}
_RHO = (0.2, 0.2, 0.0, 0.2, 0.0)
_DELTA = (3.0, 0.0, -3.0, 0.0, 3.0)
_DELTA_INTERACT = (1.0, 0.0, -1.0, 0.0, 1.0)
_PHI = (0.15, 0.0, -0.15, 0.0, 0.0)


def make_rng(seed, spawn_key=()) -> np.random.Generator:
    """Counter-based generator; replications use distinct spawn keys."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in spawn_key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class CovariateSpec:
    """``x* = nu + lambda' f + e`` with integer ``nu`` and Gaussian ``e``."""

    nu_low: int = -10
    nu_high: int = 10
    e_variance: float = 2.0
    factor_loaded: bool = True


@dataclass(frozen=True, eq=False)
class SimulationDesign:
    n: int
    T: int
    R0: int
    theta0: ParamVector
    weights: WeightsSet
    sigma0_sq: float = 1.0
    burn_in: int = DEFAULT_BURN_IN
    seed: int = 0
    covariate_spec: CovariateSpec = field(default_factory=CovariateSpec)
    error_dist: str = "normal"

    def __post_init__(self):
        if self.n < 1 or self.T < 1 or self.R0 < 0 or self.burn_in < 0 or self.sigma0_sq < 0:
            raise InvalidArgumentError("n, T must be positive; R0, burn_in, sigma0_sq nonnegative")
        if self.weights.Q and self.weights.n != self.n:
            raise InvalidArgumentError("weights size does not match n")
        if self.error_dist not in ("normal", "centered_exponential"):
            raise InvalidArgumentError(f"unknown error distribution {self.error_dist!r}")
        _, norm = a_matrix(self.theta0.rho, self.theta0.phi, self.weights, self.layout)
        if not norm < 1:
            raise InvalidArgumentError(f"design is not stationary: ||A||_2 = {norm:.4f}")

    @property
    def layout(self) -> ModelLayout:
        return self.theta0.layout

    def with_seed(self, seed: int) -> "SimulationDesign":
        return SimulationDesign(
            self.n, self.T, self.R0, self.theta0, self.weights, self.sigma0_sq,
            self.burn_in, seed, self.covariate_spec, self.error_dist,
        )


@dataclass(frozen=True, eq=False)
class SimulatedTruth:
    Lambda0: np.ndarray
    F0: np.ndarray
    epsilon: np.ndarray
    panel: PanelData
    X_star_initial: np.ndarray

    @property
    def common(self) -> np.ndarray:
        return common_component(self.Lambda0, self.F0, self.panel.n, self.panel.T)


def table1_layout(n: int, T: int) -> ModelLayout:
    Q, K = _CHANNELS[n], _PRIMITIVES[T]
    return ModelLayout(
        n_channels=Q,
        exog_names=tuple(f"x{k + 1}" for k in range(K)),
        interactions=tuple((0, q) for q in range(Q)),
        own_lag=True,
        lag_channels=tuple(range(Q - 1)),
    )


def table1_design(n: int, T: int, seed: int = 0, burn_in: int = DEFAULT_BURN_IN) -> SimulationDesign:
    """Benchmark design: ``Q`` grows with ``n``, primitive covariates with ``T``.

    The lag block holds ``Q`` coefficients, the own lag and lags through
    ``W_1 .. W_{Q-1}``.
    """
    if n not in _CHANNELS or T not in _PRIMITIVES:
        raise InvalidArgumentError(f"(n, T) must lie in {{25, 50, 100}}^2, got ({n}, {T})")
    layout = table1_layout(n, T)
    Q, K = layout.Q, layout.K_primitive
    theta0 = ParamVector.from_parts(layout, _RHO[:Q], _DELTA[:K] + _DELTA_INTERACT[:Q], _PHI[:Q])
    weights = WeightsSet(tuple(build_path_neighbors(n, q + 1) for q in range(Q)))
    return SimulationDesign(n, T, 3, theta0, weights, 1.0, burn_in, seed)


def common_component(Lambda, F, n, T) -> np.ndarray:
    if Lambda.shape[1] == 0:
        return np.zeros((n, T))
    return Lambda @ F.T


def exogenous_index(delta, X_star, W, layout: ModelLayout) -> np.ndarray:
    """``sum_kappa delta_kappa X*_kappa + sum delta_{kappa q} W_q X*_kappa``."""
    out = np.zeros(X_star.shape[1:])
    K = layout.K_primitive
    for k in range(K):
        out = out + delta[k] * X_star[k]
    for j, (k, q) in enumerate(layout.interactions):
        out = out + delta[K + j] * (W[q] @ X_star[k])
    return out


def _recursion(Sinv, A, U, y0) -> tuple[np.ndarray, np.ndarray]:
    """Run ``y_t = A y_{t-1} + S^{-1} u_t``; returns (Y, Y_lag)."""
    V = Sinv @ U
    n, T = U.shape
    Y = np.empty((n, T))
    prev = np.asarray(y0, dtype=float)
    for t in range(T):
        prev = A @ prev + V[:, t]
        Y[:, t] = prev
    Y_lag = np.column_stack([y0, Y[:, :-1]]) if T > 1 else np.asarray(y0, dtype=float).reshape(n, 1)
    return Y, Y_lag


def _draw_errors(rng, dist, size):
    if dist == "normal":
        return rng.standard_normal(size)
    return rng.standard_exponential(size) - 1.0


def simulate(design: SimulationDesign, spawn_key=()) -> SimulatedTruth:
    """Draw one panel; identical ``(design, spawn_key)`` give identical bits."""
    rng = make_rng(design.seed, spawn_key)
    n, T, R0, B = design.n, design.T, design.R0, design.burn_in
    layout, theta = design.layout, design.theta0
    spec = design.covariate_spec
    total = B + T + 1  # tau = -B, ..., T; the first column only seeds the lag

    Lambda = rng.standard_normal((n, R0))
    F_all = rng.standard_normal((total, R0))
    K = layout.K_primitive
    nu = rng.integers(spec.nu_low, spec.nu_high, endpoint=True, size=K)
    e = rng.standard_normal((K, n, total)) * np.sqrt(spec.e_variance)
    eps_all = _draw_errors(rng, design.error_dist, (n, total)) * np.sqrt(design.sigma0_sq)

    common_all = common_component(Lambda, F_all, n, total)
    loaded = common_all if spec.factor_loaded else 0.0
    X_all = np.stack([nu[k] + loaded + e[k] for k in range(K)]) if K else np.zeros((0, n, total))

    W = design.weights.stack
    Sinv = s_inverse(theta.rho, design.weights)
    A = Sinv @ lag_operator(theta.phi, design.weights, layout)

    y0 = np.zeros(n)
    if B > 0:
        U_burn = exogenous_index(theta.delta, X_all[:, :, 1 : B + 1], W, layout)
        U_burn = U_burn + (common_all[:, 1 : B + 1] + eps_all[:, 1 : B + 1])
        Y_burn, _ = _recursion(Sinv, A, U_burn, y0)
        y0 = Y_burn[:, -1].copy()

    X_star = np.ascontiguousarray(X_all[:, :, B + 1 :])
    F0 = np.ascontiguousarray(F_all[B + 1 :])
    eps = np.ascontiguousarray(eps_all[:, B + 1 :])
    common = common_component(Lambda, F0, n, T)
    U = exogenous_index(theta.delta, X_star, W, layout) + (common + eps)
    Y, Y_lag = _recursion(Sinv, A, U, y0)
    panel = PanelData(Y, Y_lag, X_star, layout, design.weights)
    return SimulatedTruth(Lambda, F0, eps, panel, np.ascontiguousarray(X_all[:, :, B]))


def expected_panel(theta: ParamVector, panel: PanelData, common: np.ndarray) -> PanelData:
    """The ``eps = 0`` counterpart of ``panel`` from its observed initial lag."""
    layout, weights = panel.layout, panel.weights
    Sinv = s_inverse(theta.rho, weights)
    A = Sinv @ lag_operator(theta.phi, weights, layout)
    common = np.asarray(common, dtype=float)
    U = exogenous_index(theta.delta, panel.X_star, weights.stack, layout) + (common + 0.0)
    Y, Y_lag = _recursion(Sinv, A, U, panel.Y_lag[:, 0].copy())
    return PanelData(Y, Y_lag, panel.X_star, layout, weights)


def simulate_expected_path(theta: ParamVector, truth: SimulatedTruth, factor_product: np.ndarray) -> PanelData:
    return expected_panel(theta, truth.panel, factor_product)
