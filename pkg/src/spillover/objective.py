"""Concentrated quasi-likelihood with interactive fixed effects.

For a parameter point ``theta`` the residual panel is ``E = S(rho) Y - sum_k beta_k X_k``.
Concentrating out the loadings leaves

    Q(theta) = (1/n) log det S(rho) - 1/2 log sigma2(theta) - penalty(theta),

where ``sigma2`` is the sum of the ``n - R`` smallest eigenvalues of ``E E' / nT``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DiagnosticWarning,
    InadmissibleParameterError,
    InvalidArgumentError,
    NumericDegenerateError,
)
from .model import PanelData, ParamVector

SIGMA2_FLOOR = 1e-300
GAP_RTOL = 1e-12
FD_STEP = 1e-6


@dataclass(frozen=True, eq=False)
class ObjectiveContext:
    """Data, factor count and optional penalty; caches the design panels."""

    data: PanelData
    R: int
    penalty: object = None
    C: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.R < 0 or self.R >= min(self.data.n, self.data.T):
            raise InvalidArgumentError(f"R must satisfy 0 <= R < min(n, T); got R={self.R}")
        C = self.data.design()
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @property
    def weights(self):
        return self.data.weights

    @property
    def layout(self):
        return self.data.layout

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def T(self) -> int:
        return self.data.T

    @property
    def P(self) -> int:
        return self.layout.P

    def with_R(self, R: int) -> "ObjectiveContext":
        return ObjectiveContext(self.data, R, self.penalty)

    def with_penalty(self, penalty) -> "ObjectiveContext":
        return ObjectiveContext(self.data, self.R, penalty)


@dataclass(frozen=True, eq=False)
class FactorEstimate:
    Lambda_hat: np.ndarray
    F_hat: np.ndarray
    sigma2_hat: float
    eigenvalues: np.ndarray = None

    @property
    def common(self) -> np.ndarray:
        return self.Lambda_hat @ self.F_hat.T


@dataclass
class Evaluation:
    """Smooth objective with its ingredients at one parameter point."""

    value: float
    sigma2: float
    residuals: np.ndarray
    basis: np.ndarray
    gap_ok: bool
    Sinv: np.ndarray | None = None
    gradient: np.ndarray | None = None
    metric: np.ndarray | None = None
    hessian: np.ndarray | None = None


def residual_panel(theta_values, ctx: ObjectiveContext) -> np.ndarray:
    theta = np.asarray(theta_values, dtype=float)
    if theta.size == 0:
        return np.array(ctx.data.Y, copy=True)
    return ctx.data.Y - np.tensordot(theta, ctx.C, axes=1)


def principal_fit(E: np.ndarray, R: int, full: bool = False):
    """Top-``R`` loading basis of ``E E'`` and the trailing eigen-sum over ``nT``.

    The eigenproblem is solved on the smaller of the two Gram matrices.

    Returns
    -------
    sigma2 : float
    basis : ndarray, shape (n, R), orthonormal columns
    eigenvalues : ndarray, descending eigenvalues of the Gram over ``nT``
    gap_ok : bool
        False when eigenvalues ``R`` and ``R+1`` coincide to relative ``1e-12``.
    """
    n, T = E.shape
    nT = n * T
    use_n = n <= T
    G = (E @ E.T if use_n else E.T @ E) / nT
    mu, vec = np.linalg.eigh(G)
    mu, vec = mu[::-1].copy(), np.ascontiguousarray(vec[:, ::-1])
    total = float(np.trace(G))
    if R == 0:
        return (total, np.zeros((n, 0)), mu, True) + ((None,) if full else ())
    sigma2 = total - float(mu[:R].sum())
    scale = max(abs(mu[0]), np.finfo(float).tiny)
    gap_ok = len(mu) <= R or (mu[R - 1] - mu[R]) > GAP_RTOL * scale
    if use_n:
        basis = np.ascontiguousarray(vec[:, :R])
    else:
        raw = E @ vec[:, :R]
        basis, _ = np.linalg.qr(raw)
    if full:
        eig = (mu * nT, vec) if use_n else None
        return max(sigma2, 0.0), basis, mu, gap_ok, eig
    return max(sigma2, 0.0), basis, mu, gap_ok


def trailing_eigensum(E: np.ndarray, R: int) -> float:
    """Sum of the ``n - R`` smallest eigenvalues of ``E E' / nT`` (values only)."""
    n, T = E.shape
    G = (E @ E.T if n <= T else E.T @ E) / (n * T)
    total = float(np.trace(G))
    if R == 0:
        return total
    mu = np.linalg.eigvalsh(G)
    return max(total - float(mu[-R:].sum()), 0.0)


def _log_sigma2(sigma2):
    if not sigma2 > SIGMA2_FLOOR:
        raise NumericDegenerateError(
            f"residual variance {sigma2:.3g} is not positive; R is too large for the data"
        )
    return np.log(sigma2)


def _logdet_inv(rho, W):
    n = W.shape[1]
    S = np.eye(n) - np.tensordot(rho, W, axes=1) if len(rho) else np.eye(n)
    sign, logdet = np.linalg.slogdet(S)
    if sign <= 0 or not np.isfinite(logdet):
        raise InadmissibleParameterError(f"det S(rho) is not positive at rho={np.round(rho, 6).tolist()}")
    return logdet, S


def evaluate(theta_values, ctx: ObjectiveContext, order: int = 0) -> Evaluation:
    """Smooth part of the objective; ``order`` 1 adds the gradient, 2 the metric.

    The metric is the exact negative Hessian (including the curvature
    released by re-optimizing the loadings) with its spectrum floored to
    keep it positive definite.
    """
    theta = np.asarray(theta_values, dtype=float)
    W = ctx.weights.stack
    Q = ctx.layout.Q
    n, T = ctx.n, ctx.T
    rho = theta[:Q]
    logdet, S = _logdet_inv(rho, W) if Q else (0.0, None)
    E = residual_panel(theta, ctx)
    if order < 1:
        sigma2 = trailing_eigensum(E, ctx.R)
        return Evaluation(logdet / n - 0.5 * _log_sigma2(sigma2), sigma2, E, None, True)
    sigma2, basis, _, gap_ok, eig = principal_fit(E, ctx.R, full=True)
    value = logdet / n - 0.5 * _log_sigma2(sigma2)
    ev = Evaluation(value, sigma2, E, basis, gap_ok)
    nT = n * T
    ME = E - basis @ (basis.T @ E)
    C = ctx.C
    grad = np.tensordot(C, ME, axes=([1, 2], [0, 1])) / (nT * sigma2)
    if Q:
        Sinv = np.linalg.inv(S)
        G = W @ Sinv
        grad[:Q] -= np.trace(G, axis1=1, axis2=2) / n
        ev.Sinv = Sinv
    ev.gradient = grad
    if order < 2:
        return ev
    MC = C - np.matmul(basis, np.matmul(basis.T, C))
    flat = MC.reshape(len(C), -1)
    H = (flat @ flat.T - _rotation_curvature(E, C, ctx.R, eig)) / (nT * sigma2)
    gs = -2.0 * (flat @ ME.reshape(-1)) / (nT * sigma2)
    H -= 0.5 * np.outer(gs, gs)
    if Q:
        H[:Q, :Q] += np.einsum("qij,rji->qr", G, G) / n
    H = 0.5 * (H + H.T)
    ev.hessian = H
    w, V = np.linalg.eigh(H)
    floor = max(1e-8 * max(w.max(), 1.0), 1e-10)
    w = np.maximum(w, floor)
    ev.metric = (V * w) @ V.T
    return ev


def _rotation_curvature(E, C, R, eig=None):
    """Curvature given back when the loading basis re-optimizes.

    Second-order perturbation of the top-``R`` eigenvalue sum of ``E E'``:
    ``sum_{i<=R<j} (u_i'(C_p E' + E C_p')u_j)(same for p') / (mu_i - mu_j)``.
    """
    P = len(C)
    if R == 0 or P == 0:
        return np.zeros((P, P))
    if eig is None:
        mu, U = np.linalg.eigh(E @ E.T)
        mu, U = mu[::-1].copy(), np.ascontiguousarray(U[:, ::-1])
    else:
        mu, U = eig
    top, rest = U[:, :R], U[:, R:]
    gap = mu[:R, None] - mu[None, R:]
    if np.any(gap <= GAP_RTOL * max(mu[0], np.finfo(float).tiny)):
        return np.zeros((P, P))
    n, T = E.shape
    m = n - R
    wide = C.transpose(1, 0, 2).reshape(n, P * T)
    # (R, P, m): u_i' C_p E' u_j
    a = ((top.T @ wide).reshape(R * P, T) @ (E.T @ rest)).reshape(R, P, m)
    # (m, P, R): u_j' C_p E' u_i
    b = ((rest.T @ wide).reshape(m * P, T) @ (E.T @ top)).reshape(m, P, R)
    a = (a + b.transpose(2, 1, 0)) / np.sqrt(gap)[:, None, :]
    flat = a.transpose(1, 0, 2).reshape(P, R * m)
    return flat @ flat.T


def sigma2_hat(theta: ParamVector, Lambda, ctx: ObjectiveContext) -> float:
    """``(1/nT) sum_t e_t' M_Lambda e_t`` for a given loading matrix."""
    E = residual_panel(theta.values, ctx)
    Lambda = np.asarray(Lambda, dtype=float).reshape(ctx.n, -1)
    if Lambda.shape[1] == 0 or not np.any(Lambda):
        ME = E
    else:
        coef, *_ = np.linalg.lstsq(Lambda, E, rcond=None)
        ME = E - Lambda @ coef
    return float(np.sum(ME * ME) / (ctx.n * ctx.T))


def concentrated_value(theta: ParamVector, ctx: ObjectiveContext) -> tuple[float, float]:
    """Penalized concentrated objective and the trailing eigen-sum."""
    ev = evaluate(theta.values, ctx)
    value = ev.value
    if ctx.penalty is not None:
        from .penalty import penalty_value

        value -= penalty_value(theta, ctx.penalty)
    return float(value), float(ev.sigma2)


def recover_factor_estimate(theta: ParamVector, ctx: ObjectiveContext) -> FactorEstimate:
    """Principal-component loadings and factors of the residual panel."""
    E = residual_panel(theta.values, ctx)
    sigma2, basis, mu, gap_ok = principal_fit(E, ctx.R)
    if not gap_ok:
        warnings.warn(
            f"eigenvalues {ctx.R} and {ctx.R + 1} coincide; loading basis is not unique",
            DiagnosticWarning,
            stacklevel=2,
        )
    return FactorEstimate(basis, E.T @ basis, float(sigma2), mu)


def finite_difference_gradient(theta_values, ctx: ObjectiveContext, step: float = FD_STEP) -> np.ndarray:
    theta = np.asarray(theta_values, dtype=float)
    g = np.empty_like(theta)
    for p in range(theta.size):
        e = np.zeros_like(theta)
        e[p] = step
        g[p] = (evaluate(theta + e, ctx).value - evaluate(theta - e, ctx).value) / (2 * step)
    return g


def smooth_gradient(theta: ParamVector, ctx: ObjectiveContext) -> np.ndarray:
    """Gradient of the unpenalized concentrated objective.

    Uses the envelope property: the concentrating basis is held fixed.
    Falls back to central differences when the eigen-gap at ``R`` is degenerate.
    """
    ev = evaluate(theta.values, ctx, order=1)
    if ev.gap_ok:
        return ev.gradient
    warnings.warn(
        "degenerate eigen-gap at the factor count; using finite-difference gradient",
        DiagnosticWarning,
        stacklevel=2,
    )
    return finite_difference_gradient(theta.values, ctx)
