"""Bias correction and sandwich standard errors for the selected coefficients.

With ``D`` the information matrix and ``V`` the excess-kurtosis/skewness
correction, the estimator on the selected support satisfies, approximately,

    sqrt(nT) D (theta_hat - theta0) ~ N(b, D + V),

so the corrected estimator is ``theta_hat - D^{-1} b / sqrt(nT)`` with
standard errors from ``D^{-1} (D + V) D^{-1} / nT``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dgp import expected_panel
from .errors import (
    InadmissibleParameterError,
    InvalidArgumentError,
    NumericDegenerateError,
    SingularInformationError,
)
from .model import PanelData, ParamVector, build_regressors, g_matrices, lag_operator, projector_from, s_inverse
from .objective import FactorEstimate, ObjectiveContext, recover_factor_estimate

COND_MAX = 1e12
H_TRUNC = 1e-14
Z975 = 1.959963984540054


def g_star(q: int, rho, weights) -> np.ndarray:
    """``G_q - tr(G_q)/n I``, the trace-free part of ``W_q S^{-1}``."""
    G = g_matrices(rho, weights)[q]
    n = G.shape[0]
    return G - np.trace(G) / n * np.eye(n)


@dataclass(frozen=True, eq=False)
class InferenceInputs:
    """Plug-in quantities at the selected estimate.

    ``support`` lists the selected parameter indices in layout order;
    the first ``Q0`` of them are spillover coefficients.
    """

    theta_hat: ParamVector
    data: PanelData
    factors: FactorEstimate
    R: int
    sigma2: float
    M3: float
    M4: float
    support: tuple[int, ...]
    Sinv: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise NumericDegenerateError("residual variance must be positive for inference")

    @property
    def layout(self):
        return self.data.layout

    @property
    def rho_support(self) -> list[int]:
        return [p for p in self.support if p < self.layout.Q]

    @property
    def Q0(self) -> int:
        return len(self.rho_support)

    @property
    def P0(self) -> int:
        return len(self.support)

    @property
    def names(self) -> list[str]:
        names = self.layout.names
        return [names[p] for p in self.support]

    @property
    def loading_projector(self):
        return projector_from(self.factors.Lambda_hat)

    @property
    def factor_projector(self):
        return projector_from(self.factors.F_hat)


@dataclass(frozen=True)
class BiasComponents:
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    assembled: np.ndarray


@dataclass(frozen=True, eq=False)
class SandwichParts:
    D: np.ndarray
    V: np.ndarray
    Omega: np.ndarray
    Xi: np.ndarray
    Phi: np.ndarray


@dataclass(eq=False)
class InferenceResult:
    names: list[str]
    support: tuple[int, ...]
    theta_hat: np.ndarray
    theta_c: np.ndarray
    se: np.ndarray
    tstats: np.ndarray
    bias: BiasComponents
    parts: SandwichParts
    sigma2: float
    M3: float
    M4: float
    condition_number: float

    def full(self, layout, which: str = "theta_c") -> np.ndarray:
        """Length-``P`` vector with NaN off the support."""
        out = np.full(layout.P, np.nan)
        out[list(self.support)] = getattr(self, which)
        return out


def estimate_moments(residual_matrix, loading_projector=None, factor_projector=None, R: int = 0):
    """Raw moments of the defactored residuals ``M_Lambda E M_F``.

    The entries are rescaled by ``c = nT / ((n-R)(T-R))`` in the second
    moment, ``c^{3/2}`` in the third and ``c^2`` in the fourth.
    """
    E = np.asarray(residual_matrix, dtype=float)
    n, T = E.shape
    if loading_projector is not None:
        E = loading_projector.annihilate(E)
    if factor_projector is not None:
        E = factor_projector.annihilate(E.T).T
    if not np.any(E):
        return 0.0, 0.0, 0.0
    c = n * T / ((n - R) * (T - R))
    return float(np.mean(E**2) * c), float(np.mean(E**3) * c**1.5), float(np.mean(E**4) * c**2)


def prepare_inputs(theta_hat: ParamVector, ctx: ObjectiveContext, support=None) -> InferenceInputs:
    """Gather plug-ins at ``theta_hat`` using ``ctx.R`` factors."""
    data = ctx.data
    if support is None:
        support = tuple(int(p) for p in np.flatnonzero(theta_hat.values))
    support = tuple(sorted(int(p) for p in support))
    factors = recover_factor_estimate(theta_hat, ctx)
    E = data.Y - np.tensordot(theta_hat.values, ctx.C, axes=1)
    Pl, Pf = projector_from(factors.Lambda_hat), projector_from(factors.F_hat)
    sigma2, M3, M4 = estimate_moments(E, Pl, Pf, ctx.R)
    Sinv = s_inverse(theta_hat.rho, data.weights)
    G = data.weights.stack @ Sinv
    return InferenceInputs(theta_hat, data, factors, ctx.R, sigma2, M3, M4, support, Sinv, G)


def instruments(inputs: InferenceInputs, regressors=None) -> np.ndarray:
    """Selected instrument panels: ``G_q X beta`` for spillovers, ``X_k`` otherwise."""
    layout = inputs.layout
    X = inputs.data.regressors if regressors is None else regressors
    beta = inputs.theta_hat.beta
    Xb = np.tensordot(beta, X, axes=1) if layout.K else np.zeros((inputs.data.n, inputs.data.T))
    Q = layout.Q
    out = []
    for p in inputs.support:
        out.append(inputs.G[p] @ Xb if p < Q else X[p - Q])
    if not out:
        return np.zeros((0, inputs.data.n, inputs.data.T))
    return np.stack(out)


def zbar_instruments(inputs: InferenceInputs) -> np.ndarray:
    """Instruments rebuilt on the ``eps = 0`` path with the estimated common component."""
    common = inputs.factors.Lambda_hat @ inputs.factors.F_hat.T
    bar = expected_panel(inputs.theta_hat, inputs.data, common)
    return instruments(inputs, bar.regressors)


def omega_matrix(G: np.ndarray) -> np.ndarray:
    n = G.shape[1]
    tr = np.trace(G, axis1=1, axis2=2)
    GG = np.einsum("qij,rji->qr", G, G) + np.einsum("qij,rij->qr", G, G)
    return GG / n - 2.0 / n**2 * np.outer(tr, tr)


def compute_D(inputs: InferenceInputs, Z=None) -> np.ndarray:
    """Information matrix ``Z'(M_F kron M_Lambda)Z / (sigma2 nT) + blockdiag(Omega, 0)``."""
    if not inputs.sigma2 > 0:
        raise NumericDegenerateError("residual variance must be positive")
    Z = instruments(inputs) if Z is None else Z
    n, T = inputs.data.n, inputs.data.T
    MZ = _double_annihilate(Z, inputs)
    flat_Z = Z.reshape(len(Z), -1)
    D = flat_Z @ MZ.reshape(len(Z), -1).T / (inputs.sigma2 * n * T)
    Q0 = inputs.Q0
    if Q0:
        D[:Q0, :Q0] += omega_matrix(inputs.G[inputs.rho_support])
    return 0.5 * (D + D.T)


def _double_annihilate(Z, inputs):
    Pl, Pf = inputs.loading_projector, inputs.factor_projector
    out = Z - np.matmul(Pl.basis, np.matmul(Pl.basis.T, Z))
    return out - np.matmul(np.matmul(out, Pf.basis), Pf.basis.T)


def compute_V(inputs: InferenceInputs, Z=None, Zbar=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Skewness/kurtosis correction; returns ``(V, Xi, Phi)``."""
    P0, Q0 = inputs.P0, inputs.Q0
    n, T = inputs.data.n, inputs.data.T
    if Q0 == 0:
        z = np.zeros((P0, P0))
        return z, np.zeros((0, 0)), z
    Z = instruments(inputs) if Z is None else Z
    Zbar = zbar_instruments(inputs) if Zbar is None else Zbar
    G = inputs.G[inputs.rho_support]
    diag = np.einsum("qii->qi", G) - (np.trace(G, axis1=1, axis2=2) / n)[:, None]
    Xi = T * diag @ diag.T
    zz = _double_annihilate(Zbar, inputs) + (Z - Zbar)
    Phi_bar = diag @ zz.sum(axis=2).T  # (Q0, P0)
    Phi = np.zeros((P0, P0))
    Phi[:Q0] = Phi_bar
    s2 = inputs.sigma2
    V = inputs.M3 / s2**2 * (Phi + Phi.T)
    V[:Q0, :Q0] += (inputs.M4 - 3 * s2**2) / s2**2 * Xi
    return V / (n * T), Xi, Phi


def _lag_diagonal_sums(F_hat, T):
    """``sum_t (P_F)_{t, t+h}`` for ``h = 1..T-1``."""
    P = projector_from(F_hat).P if F_hat.size else np.zeros((T, T))
    return np.array([np.trace(P, offset=h) for h in range(1, T)])


def compute_bias(inputs: InferenceInputs) -> BiasComponents:
    layout = inputs.layout
    data = inputs.data
    n, T, R = data.n, data.T, inputs.R
    W = data.weights.stack
    theta = inputs.theta_hat
    rho_sup = inputs.rho_support
    G = inputs.G
    Pl = inputs.loading_projector.P

    b1 = np.array([math.sqrt(T / n) * (R * np.trace(G[q]) / n - np.trace(Pl @ G[q])) for q in rho_sup])

    Sinv = inputs.Sinv
    A = Sinv @ lag_operator(theta.phi, data.weights, layout)
    if np.any(A != 0) and np.linalg.norm(A, 2) >= 1:
        raise InadmissibleParameterError("estimated lag matrix is not stable (||A||_2 >= 1)")
    phi_params = []  # (support position, channel or None)
    phi_start = layout.phi_slice.start
    for pos, p in enumerate(inputs.support):
        if p >= phi_start:
            j = p - phi_start
            if layout.own_lag:
                phi_params.append((pos, None if j == 0 else layout.lag_channels[j - 1]))
            else:
                phi_params.append((pos, layout.lag_channels[j]))

    w = _lag_diagonal_sums(inputs.factors.F_hat, T)
    b2 = np.zeros(len(rho_sup))
    b3 = np.zeros(len(phi_params))
    if np.any(A != 0) and w.size:
        # M_h = A^h S^{-1}; terms: b2 uses h, b3 uses h-1
        M_prev = Sinv  # A^0 S^{-1}
        for h in range(1, T):
            M_h = A @ M_prev
            tr_q = np.array([np.einsum("ij,ji->", W[q], M_h) for q in rho_sup])
            tr_phi = np.array(
                [np.trace(M_prev) if c is None else np.einsum("ij,ji->", W[c], M_prev) for _, c in phi_params]
            )
            b2 -= w[h - 1] * tr_q
            b3 -= w[h - 1] * tr_phi
            mag = max(np.abs(tr_q).max(initial=0.0), np.abs(tr_phi).max(initial=0.0)) * max(abs(w[h - 1]), 1.0)
            if mag < H_TRUNC and np.abs(M_h).max() < H_TRUNC:
                break
            M_prev = M_h
    root = math.sqrt(n * T)
    b2 /= root
    b3 /= root
    assembled = np.zeros(inputs.P0)
    assembled[: len(rho_sup)] = b1 + b2
    for (pos, _), v in zip(phi_params, b3):
        assembled[pos] = v
    return BiasComponents(b1, b2, b3, assembled)


def bias_correct(theta_hat_support, inputs: InferenceInputs, D=None, V=None, bias=None):
    """Corrected estimates, standard errors and t-statistics on the support."""
    theta_hat_support = np.asarray(theta_hat_support, dtype=float)
    D = compute_D(inputs) if D is None else D
    V = compute_V(inputs)[0] if V is None else V
    b = compute_bias(inputs).assembled if bias is None else np.asarray(bias)
    n, T = inputs.data.n, inputs.data.T
    if D.size == 0:
        empty = np.zeros(0)
        return empty, empty, empty, 1.0
    cond = float(np.linalg.cond(D))
    if not np.isfinite(cond) or cond > COND_MAX:
        raise SingularInformationError(f"information matrix is singular (condition number {cond:.3g})")
    Dinv = np.linalg.inv(D)
    theta_c = theta_hat_support - Dinv @ b / math.sqrt(n * T)
    cov = Dinv @ (D + V) @ Dinv / (n * T)
    var = np.diag(cov)
    if np.any(var <= 0):
        raise SingularInformationError("sandwich covariance has a nonpositive diagonal entry")
    se = np.sqrt(var)
    return theta_c, se, theta_c / se, cond


def run_inference(theta_hat: ParamVector, ctx: ObjectiveContext, support=None) -> InferenceResult:
    inputs = prepare_inputs(theta_hat, ctx, support)
    if inputs.P0 == 0:
        raise InvalidArgumentError("empty support; nothing to infer")
    Z = instruments(inputs)
    D = compute_D(inputs, Z)
    Zbar = zbar_instruments(inputs) if inputs.Q0 else None
    V, Xi, Phi = compute_V(inputs, Z, Zbar)
    bias = compute_bias(inputs)
    est = theta_hat.values[list(inputs.support)]
    theta_c, se, t, cond = bias_correct(est, inputs, D, V, bias.assembled)
    Q0 = inputs.Q0
    Omega = D[:Q0, :Q0] - compute_D_gram_block(inputs, Z)[:Q0, :Q0] if Q0 else np.zeros((0, 0))
    parts = SandwichParts(D, V, Omega, Xi, Phi)
    return InferenceResult(
        inputs.names, inputs.support, est, theta_c, se, t, bias, parts,
        inputs.sigma2, inputs.M3, inputs.M4, cond,
    )


def compute_D_gram_block(inputs: InferenceInputs, Z) -> np.ndarray:
    n, T = inputs.data.n, inputs.data.T
    MZ = _double_annihilate(Z, inputs)
    return Z.reshape(len(Z), -1) @ MZ.reshape(len(Z), -1).T / (inputs.sigma2 * n * T)


def wald_covers(theta_c, se, theta0, z: float = Z975) -> np.ndarray:
    return np.abs(np.asarray(theta_c) - np.asarray(theta0)) <= z * np.asarray(se)
