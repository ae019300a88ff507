"""Maximization of the (penalized) concentrated likelihood.

The smooth part is handled by a proximal Newton method: each iteration
solves a weighted-Lasso quadratic model by coordinate descent, then
backtracks on the full penalized objective.  Exact zeros come from the
soft-threshold updates; the curvature model only speeds up convergence.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .dgp import make_rng
from .errors import (
    InadmissibleParameterError,
    InvalidArgumentError,
    NumericDegenerateError,
    OptimizationFailure,
)
from .model import ParamVector
from .network import DEFAULT_TAU
from .objective import ObjectiveContext, evaluate, finite_difference_gradient, principal_fit
from .penalty import PenaltyConfig, project_rho

log = logging.getLogger(__name__)

ARMIJO = 1e-4
_FAILURES = (InadmissibleParameterError, NumericDegenerateError, np.linalg.LinAlgError)


@dataclass(frozen=True)
class OptimizerConfig:
    max_iterations: int = 5000
    objective_tolerance: float = 1e-9
    step_init: float = 1.0
    backtrack_factor: float = 0.5
    multistart_count: int = 3
    seed: int = 0
    step_tolerance: float = 1e-9
    tau: float = DEFAULT_TAU
    trace_path: str | None = None

    def __post_init__(self):
        if not self.objective_tolerance > 0 or not self.step_tolerance > 0:
            raise InvalidArgumentError("tolerances must be positive")
        if not 0 < self.backtrack_factor < 1:
            raise InvalidArgumentError("backtrack_factor must lie in (0, 1)")
        if self.max_iterations < 1 or self.multistart_count < 1 or not self.step_init > 0:
            raise InvalidArgumentError("max_iterations, multistart_count and step_init must be positive")


@dataclass(eq=False)
class OptimizerResult:
    theta_hat: ParamVector
    objective_trace: list[float]
    converged: bool
    iterations_used: int
    active_support: tuple[int, ...]
    objective: float
    sigma2: float
    step_sizes: list[float] = field(default_factory=list)

    @property
    def support_mask(self) -> np.ndarray:
        m = np.zeros(self.theta_hat.layout.P, dtype=bool)
        m[list(self.active_support)] = True
        return m


def _kkt_polish(z, c, H, lam, idx, tol):
    """Exact solve on the current support with signs fixed; None unless KKT holds."""
    act = idx[z[idx] != 0]
    out = np.zeros_like(z)
    if act.size:
        s = np.sign(z[act])
        try:
            out[act] = np.linalg.solve(H[np.ix_(act, act)], c[act] - lam[act] * s)
        except np.linalg.LinAlgError:
            return None
        if np.any(np.sign(out[act]) != s):
            return None
    resid = c[idx] - H[idx] @ out
    inactive = out[idx] == 0
    scale = tol * (1.0 + np.abs(c[idx]).max())
    if np.any(np.abs(resid[inactive]) > lam[idx][inactive] + scale):
        return None
    return out


def _solve_subproblem(x, g, H, lam, free, rounds=200, sweeps=5, tol=1e-10):
    """Maximize ``g'd - d'Hd/2 - sum lam |x + d|`` over ``d`` with frozen entries fixed at 0.

    Equivalent to a weighted Lasso in ``z = x + d``.  Coordinate descent
    finds the support and signs; an exact solve on that support finishes.
    """
    idx = np.flatnonzero(free)
    z = np.where(free, x, 0.0)
    c = g + H @ x
    if not np.any(lam[idx] > 0):
        out = np.zeros_like(x)
        out[idx] = np.linalg.solve(H[np.ix_(idx, idx)], c[idx])
        return out
    diag = np.diag(H).tolist()
    lam_l = lam.tolist()
    Hz = H @ z
    for _ in range(rounds):
        for _ in range(sweeps):
            for p in idx:
                a = diag[p]
                zp = z[p]
                u = zp + (c[p] - Hz[p]) / a
                t = lam_l[p] / a
                new = u - t if u > t else (u + t if u < -t else 0.0)
                if new != zp:
                    z[p] = new
                    Hz += H[:, p] * (new - zp)
        exact = _kkt_polish(z, c, H, lam, idx, tol)
        if exact is not None:
            return exact
    return z


def _newton_on_support(x, z, g, H, lam):
    """Replace the model step by an exact Newton step on the support of ``z``.

    The floored metric distorts curvature on the support whenever the
    Hessian is indefinite off it; the exact block restores fast local
    convergence.  Kept only when the block is negative definite for the
    objective and the signs of ``z`` are preserved.
    """
    act = np.flatnonzero(z)
    if act.size == 0 or H is None:
        return z
    out_ = np.setdiff1d(np.arange(x.size), act)
    Haa = H[np.ix_(act, act)]
    try:
        L = np.linalg.cholesky(Haa)
    except np.linalg.LinAlgError:
        return z
    s = np.sign(z[act])
    rhs = g[act] - lam[act] * s + H[np.ix_(act, out_)] @ x[out_]
    d = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
    new = np.zeros_like(z)
    new[act] = x[act] + d
    if np.any(np.sign(new[act]) != s):
        return z
    return new


class _Trace:
    def __init__(self, path):
        self.fh = open(path, "a", encoding="utf-8") if path else None

    def write(self, **rec):
        if self.fh:
            self.fh.write(json.dumps(rec) + "\n")

    def close(self):
        if self.fh:
            self.fh.close()


def _prox_newton(ctx: ObjectiveContext, start, lam, frozen, cfg: OptimizerConfig) -> OptimizerResult:
    layout = ctx.layout
    Q = layout.Q
    bound = ctx.weights.rho_bound(cfg.tau)
    free = ~frozen

    def clean(v):
        v = project_rho(v, Q, bound)
        v[frozen] = 0.0
        return v

    def pen(v):
        return float(np.dot(lam, np.abs(v)))

    x = clean(np.array(start, dtype=float))
    ev = evaluate(x, ctx, order=2)
    F = ev.value - pen(x)
    trace, steps = [F], []
    converged = False
    it = 0
    tracer = _Trace(cfg.trace_path)
    try:
        for it in range(1, cfg.max_iterations + 1):
            g = ev.gradient if ev.gap_ok else finite_difference_gradient(x, ctx)
            z = _solve_subproblem(x, g, ev.metric, lam, free)
            z = _newton_on_support(x, z, g, ev.hessian, lam)
            d = z - x
            dmax = float(np.abs(d).max()) if d.size else 0.0
            if dmax == 0.0:
                converged = True
                break
            delta = float(g @ d) - (pen(z) - pen(x))
            t = cfg.step_init
            accepted = None
            while t > 1e-14:
                xn = clean(x + t * d)
                try:
                    en = evaluate(xn, ctx, order=0)
                    Fn = en.value - pen(xn)
                except _FAILURES:
                    Fn = -np.inf
                if Fn >= F + ARMIJO * t * delta or (delta <= 1e-10 and Fn >= F):
                    accepted = (xn, Fn)
                    break
                t *= cfg.backtrack_factor
            if accepted is None:
                # no ascent left along the model direction; treat as stationary when the model agrees
                converged = delta <= max(1e3 * cfg.objective_tolerance, 1e-8) * (1 + abs(F))
                break
            xn, Fn = accepted
            improvement = Fn - F
            move = float(np.abs(xn - x).max())
            x, F = xn, Fn
            trace.append(F)
            steps.append(t)
            tracer.write(iteration=it, objective=F, step=t, support=int(np.count_nonzero(x)))
            if improvement < cfg.objective_tolerance and move < cfg.step_tolerance:
                converged = True
                break
            ev = evaluate(x, ctx, order=2)
    finally:
        tracer.close()
    final = evaluate(x, ctx, order=0)
    theta = ParamVector(x, layout)
    support = tuple(int(i) for i in np.flatnonzero(x != 0))
    return OptimizerResult(theta, trace, converged, it, support, F, float(final.sigma2), steps)


def default_start(ctx: ObjectiveContext) -> ParamVector:
    """``rho = 0``; ``beta`` by least squares after projecting out ``R`` principal components.

    One alternation: loadings from ``Y``, fit ``beta``, loadings from the
    residuals, refit ``beta``.
    """
    layout = ctx.layout
    Q, K = layout.Q, layout.K
    Y = ctx.data.Y
    X = ctx.C[Q:]
    theta = np.zeros(layout.P)
    if K == 0:
        return ParamVector(theta, layout)
    E = Y
    for _ in range(2):
        _, basis, _, _ = principal_fit(E, ctx.R)
        MX = X - np.einsum("ir,krt->kit", basis, np.einsum("ir,kit->krt", basis, X))
        MY = Y - basis @ (basis.T @ Y)
        beta, *_ = np.linalg.lstsq(MX.reshape(K, -1).T, MY.reshape(-1), rcond=None)
        E = Y - np.tensordot(beta, X, axes=1)
    theta[Q:] = beta
    return ParamVector(theta, layout)


def nuclear_norm_start(ctx: ObjectiveContext, mult: float = 1.0, max_iter: int = 300, tol: float = 1e-10) -> ParamVector:
    """Start from a nuclear-norm regularized fit of the linearized model.

    Alternates singular-value soft-thresholding of ``Y - sum theta_p C_p``
    with least squares of ``Y - Gamma`` on the design, treating ``W_q Y`` as
    ordinary regressors.  The level is ``mult (sqrt n + sqrt T) sigma`` with
    ``sigma`` taken from the default start.  It avoids the basin where the
    factors absorb a level shift in the covariates.
    """
    layout = ctx.layout
    n, T = ctx.n, ctx.T
    Y = ctx.data.Y
    C = ctx.C
    P = layout.P
    if P == 0:
        return ParamVector(np.zeros(0), layout)
    base = default_start(ctx)
    R = ctx.R
    sig2 = evaluate(base.values, ctx).sigma2 * n * T / max((n - R) * (T - R), 1)
    tau = mult * (np.sqrt(n) + np.sqrt(T)) * np.sqrt(max(sig2, 0.0))
    pinv = np.linalg.pinv(C.reshape(P, -1).T)
    theta = np.array(base.values)
    for _ in range(max_iter):
        E = Y - np.tensordot(theta, C, axes=1)
        U, s, Vt = np.linalg.svd(E, full_matrices=False)
        Gamma = (U * np.maximum(s - tau, 0.0)) @ Vt
        new = pinv @ (Y - Gamma).reshape(-1)
        done = np.abs(new - theta).max() < tol * (1 + np.abs(theta).max())
        theta = new
        if done:
            break
    return ParamVector(project_rho(theta, layout.Q, ctx.weights.rho_bound(DEFAULT_TAU)), layout)


def _random_starts(theta: np.ndarray, ctx, cfg: OptimizerConfig, count: int):
    rng = make_rng(cfg.seed, (7919,))
    Q = ctx.layout.Q
    bound = ctx.weights.rho_bound(cfg.tau)
    for _ in range(count):
        v = theta + rng.normal(scale=0.1 * (np.abs(theta) + 0.1))
        if Q:
            r = rng.uniform(-1, 1, Q) * (0.5 * min(bound, 1.0) / Q)
            v[:Q] = 0.5 * v[:Q] + r
        yield project_rho(v, Q, bound)


def maximize_unpenalized(
    ctx: ObjectiveContext, cfg: OptimizerConfig | None = None, theta_init: ParamVector | None = None,
    frozen=None,
) -> OptimizerResult:
    """Unpenalized concentrated QML, best over ``multistart_count`` starts.

    The candidates are, in order, ``theta_init`` (default start if None, or
    the unrestricted fit when ``frozen`` is nonempty),
    the nuclear-norm start, then random perturbations of the first.  When
    ``theta_init`` is nonzero on ``frozen``, a penalty-continuation start is added.
    ``frozen`` optionally pins coordinates to zero (used for post-selection refits).
    """
    cfg = cfg or OptimizerConfig()
    P = ctx.P
    frozen = np.zeros(P, dtype=bool) if frozen is None else np.asarray(frozen, dtype=bool)
    if theta_init is None and frozen.any():
        # restricted fits from the default start fall into a level-shift basin
        theta_init = maximize_unpenalized(ctx, cfg).theta_hat
    if theta_init is None:
        theta_init = default_start(ctx)
    lam = np.zeros(P)
    starts = [np.array(theta_init.values)]
    if cfg.multistart_count > 1:
        try:
            starts.append(np.where(frozen, 0.0, nuclear_norm_start(ctx).values))
        except _FAILURES as exc:
            log.debug("nuclear-norm start failed: %s", exc)
    starts += list(_random_starts(starts[0], ctx, cfg, cfg.multistart_count - len(starts)))
    if np.any(starts[0][frozen] != 0):
        try:
            starts.append(_continuation_start(ctx, starts[0], frozen, cfg))
        except _FAILURES as exc:
            log.debug("continuation start failed: %s", exc)
    return _best_of(ctx, starts, lam, frozen, cfg)


def _continuation_start(ctx, theta, frozen, cfg, lam0=1e-4, max_steps=60):
    """Drive the frozen coordinates to zero under a doubling l1 penalty, warm-started.

    Zeroing them in one step can land in a worse local maximum.
    """
    th = np.array(theta, dtype=float)
    free = np.zeros_like(frozen)
    for k in range(max_steps):
        th = np.array(_prox_newton(ctx, th, np.where(frozen, lam0 * 2.0**k, 0.0), free, cfg).theta_hat.values)
        if not th[frozen].any():
            break
    return np.where(frozen, 0.0, th)


def _best_of(ctx, starts, lam, frozen, cfg):
    best, errors = None, []
    for s in starts:
        try:
            res = _prox_newton(ctx, s, lam, frozen, cfg)
        except _FAILURES as exc:
            errors.append(str(exc))
            continue
        if best is None or res.objective > best.objective:
            best = res
    if best is None:
        raise OptimizationFailure("all starting points failed: " + "; ".join(errors))
    return best


def maximize_penalized(
    ctx: ObjectiveContext, penalty_cfg: PenaltyConfig, opt_cfg: OptimizerConfig | None = None,
    theta_init: ParamVector | None = None,
) -> OptimizerResult:
    """Penalized estimator from a single start (warm starts make multistart unnecessary)."""
    opt_cfg = opt_cfg or OptimizerConfig()
    if theta_init is None:
        theta_init = default_start(ctx)
    if penalty_cfg.P != ctx.P:
        raise InvalidArgumentError("penalty length does not match the parameter vector")
    return _best_of(ctx, [np.array(theta_init.values)], penalty_cfg.thresholds(), penalty_cfg.frozen_zero_mask, opt_cfg)


def kkt_gamma_bounds(ctx: ObjectiveContext, penalty_cfg: PenaltyConfig) -> tuple[float, float]:
    """Smallest block levels making ``theta = 0`` a first-order stationary point."""
    zero = np.zeros(ctx.P)
    ev = evaluate(zero, ctx, order=1)
    g = ev.gradient if ev.gap_ok else finite_difference_gradient(zero, ctx)
    live = ~penalty_cfg.frozen_zero_mask
    w = penalty_cfg.weights_omega
    Q = ctx.layout.Q
    ratio = np.zeros(ctx.P)
    ratio[live] = np.abs(g[live]) / w[live]
    rb = float(ratio[:Q].max()) if Q else 0.0
    bb = float(ratio[Q:].max()) if ctx.P > Q else 0.0
    return rb, bb


def compute_gamma_bar(
    ctx: ObjectiveContext, penalty_cfg: PenaltyConfig, theta_init: ParamVector | None = None,
    opt_cfg: OptimizerConfig | None = None, rel_width: float = 0.05,
) -> tuple[float, float]:
    """Block levels beyond which the penalized fit is identically zero.

    Starts from the first-order bounds at zero and bisects a common
    multiplier ``s`` until the fit from ``theta_init`` is empty at ``s``
    and nonempty just below, to ``rel_width`` relative bracket width.
    """
    opt_cfg = opt_cfg or OptimizerConfig(multistart_count=1)
    if not np.any(ctx.data.Y):
        return 0.0, 0.0
    rb, bb = kkt_gamma_bounds(ctx, penalty_cfg)
    if rb == 0 and bb == 0:
        return 0.0, 0.0
    if theta_init is None:
        theta_init = default_start(ctx)
    init = ParamVector(np.where(penalty_cfg.frozen_zero_mask, 0.0, theta_init.values), ctx.layout)

    def empty(s):
        res = maximize_penalized(ctx, penalty_cfg.with_gamma(s * rb, s * bb), opt_cfg, init)
        return not res.active_support

    hi = 1.0
    while not empty(hi):
        hi *= 2.0
        if hi > 2.0**40:
            raise OptimizationFailure("could not bracket the all-zero penalty level")
    lo = hi / 2.0
    while empty(lo):
        hi, lo = lo, lo / 2.0
        if lo < 1e-12:
            return hi * rb, hi * bb
    while (hi - lo) / hi > rel_width:
        mid = 0.5 * (lo + hi)
        if empty(mid):
            hi = mid
        else:
            lo = mid
    return hi * rb, hi * bb
