"""Core model algebra shared by the objective, simulator and inference code.

The outcome panel ``Y`` (``n x T``) satisfies

    S(rho) Y = sum_k beta_k X_k + Lambda F' + E,    S(rho) = I - sum_q rho_q W_q,

where the regressors ``X_k`` are, in order, the primitive exogenous
covariates, their network interactions ``W_q X*_kappa``, the own lag and the
network lags ``W_q Y_{-1}``.  The parameter vector is ``theta = (rho, beta)``
with ``beta = (delta, phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InadmissibleParameterError, InvalidArgumentError, InvariantViolationError
from .network import DEFAULT_TAU, WeightsSet

PINV_RTOL = 1e-10


@dataclass(frozen=True)
class ModelLayout:
    """Which regressors enter the model and how parameters are named.

    Parameters
    ----------
    n_channels : int
        Number of weights matrices ``Q``.
    exog_names : tuple of str
        Labels of the primitive covariates ``X*_kappa``.
    interactions : tuple of (int, int)
        Pairs ``(kappa, q)`` (0-based) adding the regressor ``W_q X*_kappa``.
    own_lag : bool
        Include ``Y_{-1}``.
    lag_channels : tuple of int
        Channels ``q`` (0-based) adding ``W_q Y_{-1}``.
    """

    n_channels: int
    exog_names: tuple[str, ...] = ()
    interactions: tuple[tuple[int, int], ...] = ()
    own_lag: bool = True
    lag_channels: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "exog_names", tuple(str(s) for s in self.exog_names))
        object.__setattr__(self, "interactions", tuple((int(k), int(q)) for k, q in self.interactions))
        object.__setattr__(self, "lag_channels", tuple(int(q) for q in self.lag_channels))
        if self.n_channels < 0:
            raise InvalidArgumentError("n_channels must be nonnegative")
        for k, q in self.interactions:
            if not (0 <= k < len(self.exog_names) and 0 <= q < self.n_channels):
                raise InvalidArgumentError(f"interaction ({k}, {q}) out of range")
        for q in self.lag_channels:
            if not 0 <= q < self.n_channels:
                raise InvalidArgumentError(f"lag channel {q} out of range")
        if len(set(self.interactions)) != len(self.interactions) or len(set(self.lag_channels)) != len(
            self.lag_channels
        ):
            raise InvalidArgumentError("duplicate interaction or lag channel")

    @classmethod
    def full(cls, n_channels: int, exog_names: Sequence[str], interact_with: Sequence[int] = ()) -> "ModelLayout":
        """Own lag plus every network lag; interactions of the listed covariates on all channels."""
        inter = tuple((k, q) for k in interact_with for q in range(n_channels))
        return cls(n_channels, tuple(exog_names), inter, True, tuple(range(n_channels)))

    @property
    def Q(self) -> int:
        return self.n_channels

    @property
    def K_primitive(self) -> int:
        return len(self.exog_names)

    @property
    def K_delta(self) -> int:
        return len(self.exog_names) + len(self.interactions)

    @property
    def K_phi(self) -> int:
        return int(self.own_lag) + len(self.lag_channels)

    @property
    def K(self) -> int:
        return self.K_delta + self.K_phi

    @property
    def P(self) -> int:
        return self.Q + self.K

    @property
    def rho_slice(self) -> slice:
        return slice(0, self.Q)

    @property
    def beta_slice(self) -> slice:
        return slice(self.Q, self.P)

    @property
    def delta_slice(self) -> slice:
        return slice(self.Q, self.Q + self.K_delta)

    @property
    def phi_slice(self) -> slice:
        return slice(self.Q + self.K_delta, self.P)

    @property
    def names(self) -> list[str]:
        out = [f"rho{q + 1}" for q in range(self.Q)]
        out += [f"delta{k + 1}" for k in range(self.K_primitive)]
        out += [f"delta{k + 1}_{q + 1}" for k, q in self.interactions]
        if self.own_lag:
            out.append("phi1")
        out += [f"phi{q + 2}" for q in self.lag_channels]
        return out

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise InvalidArgumentError(f"unknown parameter {name!r}") from None

    def to_dict(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "exog": list(self.exog_names),
            "interactions": [list(p) for p in self.interactions],
            "own_lag": self.own_lag,
            "lag_channels": list(self.lag_channels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelLayout":
        return cls(
            int(d["n_channels"]),
            tuple(d.get("exog", ())),
            tuple(tuple(p) for p in d.get("interactions", ())),
            bool(d.get("own_lag", True)),
            tuple(d.get("lag_channels", ())),
        )


@dataclass(frozen=True, eq=False)
class ParamVector:
    values: np.ndarray
    layout: ModelLayout

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size != self.layout.P:
            raise InvalidArgumentError(f"parameter vector has length {v.size}, layout expects {self.layout.P}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_parts(cls, layout: ModelLayout, rho, delta, phi) -> "ParamVector":
        return cls(np.concatenate([np.ravel(rho), np.ravel(delta), np.ravel(phi)]), layout)

    @property
    def rho(self) -> np.ndarray:
        return self.values[self.layout.rho_slice]

    @property
    def beta(self) -> np.ndarray:
        return self.values[self.layout.beta_slice]

    @property
    def delta(self) -> np.ndarray:
        return self.values[self.layout.delta_slice]

    @property
    def phi(self) -> np.ndarray:
        return self.values[self.layout.phi_slice]

    @property
    def support_mask(self) -> np.ndarray:
        return self.values != 0

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.layout.names, (float(x) for x in self.values)))

    def check_admissible(self, weights: WeightsSet, tau: float = DEFAULT_TAU) -> None:
        bound = weights.rho_bound(tau)
        if np.abs(self.rho).sum() > bound * (1 + 1e-12):
            raise InadmissibleParameterError(
                f"sum |rho| = {np.abs(self.rho).sum():.6g} exceeds admissible bound {bound:.6g}"
            )


def build_regressors(Y_lag, X_star, weights: WeightsSet, layout: ModelLayout) -> np.ndarray:
    """Stack the ``K`` regressor panels in layout order, shape ``(K, n, T)``."""
    X_star = np.asarray(X_star, dtype=float)
    Y_lag = np.asarray(Y_lag, dtype=float)
    n, T = Y_lag.shape
    W = weights.stack
    parts = [X_star[k] for k in range(layout.K_primitive)]
    parts += [W[q] @ X_star[k] for k, q in layout.interactions]
    if layout.own_lag:
        parts.append(Y_lag)
    parts += [W[q] @ Y_lag for q in layout.lag_channels]
    if not parts:
        return np.zeros((0, n, T))
    return np.stack(parts)


@dataclass(frozen=True, eq=False)
class PanelData:
    """Outcome, lagged outcome and primitive covariates with derived regressors.

    ``X_star`` has shape ``(K*, n, T)``; ``regressors`` is built from it
    and the weights set, in the order given by ``layout``.
    """

    Y: np.ndarray
    Y_lag: np.ndarray
    X_star: np.ndarray
    layout: ModelLayout
    weights: WeightsSet
    regressors: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Y = np.array(self.Y, dtype=float)
        Y_lag = np.array(self.Y_lag, dtype=float)
        X_star = np.array(self.X_star, dtype=float)
        if Y.ndim != 2:
            raise InvalidArgumentError("Y must be an n x T matrix")
        n, T = Y.shape
        if X_star.size == 0:
            X_star = np.zeros((0, n, T))
        if Y_lag.shape != (n, T) or X_star.ndim != 3 or X_star.shape[1:] != (n, T):
            raise InvalidArgumentError(
                f"panel shape mismatch: Y {Y.shape}, Y_lag {Y_lag.shape}, X_star {X_star.shape}"
            )
        if X_star.shape[0] != self.layout.K_primitive:
            raise InvalidArgumentError(
                f"{X_star.shape[0]} covariates supplied, layout names {self.layout.K_primitive}"
            )
        if self.weights.Q != self.layout.Q or (self.weights.Q and self.weights.n != n):
            raise InvalidArgumentError("weights set does not match the layout or cross-section size")
        for name, arr in (("Y", Y), ("Y_lag", Y_lag), ("X_star", X_star)):
            if not np.all(np.isfinite(arr)):
                raise InvariantViolationError(f"{name} has non-finite entries")
            arr.setflags(write=False)
        reg = build_regressors(Y_lag, X_star, self.weights, self.layout)
        reg.setflags(write=False)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "Y_lag", Y_lag)
        object.__setattr__(self, "X_star", X_star)
        object.__setattr__(self, "regressors", reg)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def T(self) -> int:
        return self.Y.shape[1]

    def spatial_lags(self) -> np.ndarray:
        """``W_q Y`` for each channel, shape ``(Q, n, T)``."""
        return np.einsum("qij,jt->qit", self.weights.stack, self.Y)

    def design(self) -> np.ndarray:
        """All ``P`` panels ``C_p`` with ``E(theta) = Y - sum_p theta_p C_p``."""
        return np.concatenate([self.spatial_lags(), self.regressors])


@dataclass(frozen=True, eq=False)
class Projector:
    basis: np.ndarray

    @property
    def dimension(self) -> int:
        return self.basis.shape[1]

    @property
    def size(self) -> int:
        return self.basis.shape[0]

    @property
    def P(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @property
    def M(self) -> np.ndarray:
        return np.eye(self.size) - self.P

    def project(self, X: np.ndarray) -> np.ndarray:
        return self.basis @ (self.basis.T @ X)

    def annihilate(self, X: np.ndarray) -> np.ndarray:
        return X - self.project(X)


def projector_from(B: np.ndarray, rtol: float = PINV_RTOL) -> Projector:
    """Orthogonal projector onto the column space of ``B``."""
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if B.size == 0 or not np.any(B):
        return Projector(np.zeros((B.shape[0], 0)))
    U, s, _ = np.linalg.svd(B, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0]))
    return Projector(np.ascontiguousarray(U[:, :rank]))


def _stack(weights) -> np.ndarray:
    return weights.stack if isinstance(weights, WeightsSet) else np.asarray(weights, dtype=float)


def s_matrix(rho, weights) -> np.ndarray:
    W = _stack(weights)
    rho = np.asarray(rho, dtype=float).reshape(-1)
    if rho.size != W.shape[0]:
        raise InvalidArgumentError(f"rho has length {rho.size}, expected {W.shape[0]}")
    n = W.shape[1] if W.ndim == 3 and W.shape[0] else getattr(weights, "n", 0)
    return np.eye(n) - np.tensordot(rho, W, axes=1) if rho.size else np.eye(n)


def log_det_s(rho, weights) -> float:
    """``log det S(rho)``; raises if the determinant is not positive."""
    sign, logdet = np.linalg.slogdet(s_matrix(rho, weights))
    if sign <= 0 or not np.isfinite(logdet):
        raise InadmissibleParameterError(f"det S(rho) is not positive at rho={np.asarray(rho).tolist()}")
    return float(logdet)


def s_inverse(rho, weights) -> np.ndarray:
    S = s_matrix(rho, weights)
    try:
        Sinv = np.linalg.inv(S)
    except np.linalg.LinAlgError:
        raise InadmissibleParameterError("S(rho) is singular") from None
    if not np.all(np.isfinite(Sinv)) or np.linalg.cond(S) > 1e14:
        raise InadmissibleParameterError("S(rho) is numerically singular")
    return Sinv


def lag_operator(phi, weights, layout: ModelLayout) -> np.ndarray:
    """``phi_1 I + sum_q phi_{q+1} W_q`` for the lags present in ``layout``."""
    W = _stack(weights)
    n = W.shape[1] if W.shape[0] else weights.n
    phi = np.asarray(phi, dtype=float).reshape(-1)
    if phi.size != layout.K_phi:
        raise InvalidArgumentError(f"phi has length {phi.size}, layout expects {layout.K_phi}")
    out = np.zeros((n, n))
    j = 0
    if layout.own_lag:
        out += phi[0] * np.eye(n)
        j = 1
    for q, c in zip(layout.lag_channels, phi[j:]):
        out += c * W[q]
    return out


def a_matrix(rho, phi, weights, layout: ModelLayout | None = None) -> tuple[np.ndarray, float]:
    """Reduced-form lag matrix ``A = S^{-1}(phi_1 I + sum phi W)`` and ``||A||_2``.

    Without ``layout``, ``phi`` is read in full form: own lag then one entry per channel.
    """
    W = _stack(weights)
    if layout is None:
        layout = ModelLayout(W.shape[0], own_lag=True, lag_channels=tuple(range(W.shape[0])))
    A = s_inverse(rho, weights) @ lag_operator(phi, weights, layout)
    return A, float(np.linalg.norm(A, 2))


def g_matrix(q: int, rho, weights) -> np.ndarray:
    W = _stack(weights)
    if not 0 <= q < W.shape[0]:
        raise InvalidArgumentError(f"channel index {q} out of range")
    return W[q] @ s_inverse(rho, weights)


def g_matrices(rho, weights) -> np.ndarray:
    """All ``G_q = W_q S^{-1}``, shape ``(Q, n, n)``."""
    W = _stack(weights)
    Sinv = s_inverse(rho, weights)
    return W @ Sinv


def residuals(theta: ParamVector, data: PanelData) -> np.ndarray:
    """Columns ``S(rho) y_t - X_t beta``."""
    if theta.layout != data.layout:
        raise InvalidArgumentError("parameter layout does not match the panel layout")
    return residuals_from_design(theta.values, data.Y, data.design())


def residuals_from_design(theta, Y, C) -> np.ndarray:
    return Y - np.tensordot(theta, C, axes=1) if len(theta) else np.array(Y, copy=True)


def build_instruments(theta_ref: ParamVector, data: PanelData) -> np.ndarray:
    """Instrument panels ``(G_q X beta for each q, then X_k)``, shape ``(P, n, T)``."""
    Xb = np.tensordot(theta_ref.beta, data.regressors, axes=1) if data.layout.K else np.zeros((data.n, data.T))
    if data.layout.Q:
        G = g_matrices(theta_ref.rho, data.weights)
        top = G @ Xb
    else:
        top = np.zeros((0, data.n, data.T))
    return np.concatenate([top, data.regressors])
