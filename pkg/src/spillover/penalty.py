"""Adaptive Lasso penalty and its proximal map."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError, InvariantViolationError
from .model import ParamVector

DEFAULT_ZETA = 4.0


@dataclass(frozen=True, eq=False)
class PenaltyConfig:
    """Block penalty ``gamma_rho sum w|rho| + gamma_beta sum w|beta|``.

    Coordinates whose initial estimate is exactly zero carry an infinite
    weight; they are recorded in ``frozen_zero_mask`` and pinned to zero.
    """

    gamma_rho: float
    gamma_beta: float
    zeta: float
    weights_omega: np.ndarray
    frozen_zero_mask: np.ndarray
    n_rho: int

    def __post_init__(self):
        w = np.array(self.weights_omega, dtype=float).reshape(-1)
        m = np.array(self.frozen_zero_mask, dtype=bool).reshape(-1)
        if w.shape != m.shape:
            raise InvalidArgumentError("weights and frozen mask lengths differ")
        if not (np.isfinite(self.gamma_rho) and np.isfinite(self.gamma_beta)):
            raise InvalidArgumentError("penalty levels must be finite")
        if self.gamma_rho < 0 or self.gamma_beta < 0:
            raise InvalidArgumentError("penalty levels must be nonnegative")
        if self.zeta <= 0:
            raise InvalidArgumentError("zeta must be positive")
        w[m] = 0.0
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise InvalidArgumentError("adaptive weights must be finite and nonnegative off the frozen mask")
        w.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "weights_omega", w)
        object.__setattr__(self, "frozen_zero_mask", m)

    @property
    def P(self) -> int:
        return self.weights_omega.size

    def with_gamma(self, gamma_rho: float, gamma_beta: float) -> "PenaltyConfig":
        return replace(self, gamma_rho=float(gamma_rho), gamma_beta=float(gamma_beta))

    def block_gamma(self) -> np.ndarray:
        g = np.full(self.P, float(self.gamma_beta))
        g[: self.n_rho] = self.gamma_rho
        return g

    def thresholds(self) -> np.ndarray:
        """Per-coordinate ``gamma * omega``; frozen coordinates report 0."""
        return self.block_gamma() * self.weights_omega


def make_adaptive_weights(theta_dagger: ParamVector, zeta: float = DEFAULT_ZETA) -> PenaltyConfig:
    """Weights ``|theta_p|^-zeta`` from an initial estimate, with zero penalty levels."""
    if not zeta > 0:
        raise InvalidArgumentError("zeta must be positive")
    v = np.asarray(theta_dagger.values, dtype=float)
    frozen = v == 0
    w = np.zeros_like(v)
    with np.errstate(over="ignore"):
        w[~frozen] = np.abs(v[~frozen]) ** (-zeta)
    if np.any(~np.isfinite(w)):
        raise InvalidArgumentError("adaptive weight overflow; initial estimate too close to zero")
    return PenaltyConfig(0.0, 0.0, float(zeta), w, frozen, theta_dagger.layout.Q)


def _values(theta):
    return np.asarray(theta.values if isinstance(theta, ParamVector) else theta, dtype=float)


def penalty_value(theta, cfg: PenaltyConfig) -> float:
    v = _values(theta)
    if np.any(v[cfg.frozen_zero_mask] != 0):
        raise InvariantViolationError("nonzero coefficient on a frozen-zero coordinate")
    return float(np.dot(cfg.thresholds(), np.abs(v)))


def soft_threshold(x, thresh):
    return np.sign(x) * np.maximum(np.abs(x) - thresh, 0.0)


def project_rho(values, n_rho: int, bound: float) -> np.ndarray:
    """Radially shrink the first ``n_rho`` entries onto ``sum |rho| <= bound``."""
    out = np.array(values, dtype=float)
    if n_rho and np.isfinite(bound):
        s = np.abs(out[:n_rho]).sum()
        if s > bound:
            out[:n_rho] *= bound / s
    return out


def prox_step(theta_in, step: float, cfg: PenaltyConfig, rho_bound: float = np.inf) -> np.ndarray:
    """Soft-threshold at ``step * gamma * omega``, zero frozen entries, project ``rho``."""
    if not step > 0:
        raise InvalidArgumentError("step must be positive")
    x = soft_threshold(_values(theta_in), step * cfg.thresholds())
    x[cfg.frozen_zero_mask] = 0.0
    return project_rho(x, cfg.n_rho, rho_bound)
