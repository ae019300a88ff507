"""Penalty-level selection by IC* and factor-count selection by information criteria."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericDegenerateError, SelectionFailure, SpilloverError
from .model import ParamVector
from .objective import ObjectiveContext, residual_panel
from .optimizer import OptimizerConfig, OptimizerResult, maximize_penalized
from .penalty import PenaltyConfig

GRID_POINTS = 12
GRID_SPAN = 1e-9
GRID_CAP = 20


def _strictly_increasing(v):
    return all(b > a for a, b in zip(v, v[1:]))


@dataclass(frozen=True)
class GammaGrid:
    rho_values: tuple[float, ...]
    beta_values: tuple[float, ...]

    def __post_init__(self):
        rv = tuple(float(x) for x in self.rho_values)
        bv = tuple(float(x) for x in self.beta_values)
        for name, v in (("rho", rv), ("beta", bv)):
            if not v:
                raise InvalidArgumentError(f"{name} grid is empty")
            if any(x < 0 or not math.isfinite(x) for x in v) or not _strictly_increasing(v):
                raise InvalidArgumentError(f"{name} grid must be finite, nonnegative and strictly increasing")
            if len(v) > GRID_CAP:
                raise InvalidArgumentError(f"{name} grid exceeds {GRID_CAP} points")
        object.__setattr__(self, "rho_values", rv)
        object.__setattr__(self, "beta_values", bv)

    @classmethod
    def logarithmic(cls, gamma_rho_bar: float, gamma_beta_bar: float, points: int = GRID_POINTS,
                    span: float = GRID_SPAN) -> "GammaGrid":
        """``points`` log-spaced levels per block on ``[span * bar, bar]``; a zero bar gives ``(0,)``."""
        def block(bar):
            if bar <= 0:
                return (0.0,)
            return tuple(float(x) for x in np.geomspace(span * bar, bar, points))

        return cls(block(gamma_rho_bar), block(gamma_beta_bar))

    def __len__(self):
        return len(self.rho_values) * len(self.beta_values)


@dataclass(frozen=True)
class FactorICVariant:
    name: str
    penalty_fn: Callable[[int, int], float]

    def penalty(self, n: int, T: int) -> float:
        return float(self.penalty_fn(n, T))


def _ic1(n, T):
    m = min(n, T)
    return math.log(m) / m


def _ic2(n, T):
    return (n + T) / (n * T) * math.log(min(n, T))


def _ic3(n, T):
    return (n + T) / (n * T) * math.log(n * T / (n + T))


IC1 = FactorICVariant("IC1", _ic1)
IC2 = FactorICVariant("IC2", _ic2)
IC3 = FactorICVariant("IC3", _ic3)
FACTOR_VARIANTS = {v.name: v for v in (IC1, IC2, IC3)}


def support_penalty(n: int, T: int) -> float:
    """Per-coefficient IC* penalty ``log(min(n,T)) / min(n,T)``."""
    m = min(n, T)
    return math.log(m) / m


@dataclass(frozen=True)
class GridPoint:
    gamma_rho: float
    gamma_beta: float
    sigma2: float
    support_rho: int
    support_beta: int
    ic_star: float
    converged: bool


@dataclass(eq=False)
class GammaSelection:
    gamma_star: tuple[float, float]
    trace: list[GridPoint]
    fit: OptimizerResult

    def trace_rows(self) -> list[dict]:
        return [p.__dict__.copy() for p in self.trace]


def _ic_of(res: OptimizerResult, ctx: ObjectiveContext) -> tuple[float, int, int]:
    Q = ctx.layout.Q
    s = np.asarray(res.active_support, dtype=int)
    s_rho = int(np.sum(s < Q))
    s_beta = int(s.size - s_rho)
    return res.sigma2 + support_penalty(ctx.n, ctx.T) * (s_rho + s_beta), s_rho, s_beta


def ic_star(gamma, ctx: ObjectiveContext, penalty_base: PenaltyConfig, opt_cfg: OptimizerConfig | None = None,
            theta_init: ParamVector | None = None) -> float:
    """``sigma2(gamma) + rho_ic * (|S_rho| + |S_beta|)`` at the penalized fit."""
    res = maximize_penalized(ctx, penalty_base.with_gamma(*gamma), opt_cfg, theta_init)
    return _ic_of(res, ctx)[0]


def select_gamma(grid: GammaGrid, ctx: ObjectiveContext, penalty_base: PenaltyConfig,
                 opt_cfg: OptimizerConfig | None = None, theta_init: ParamVector | None = None) -> GammaSelection:
    """Minimize IC* over the product grid.

    Each ``gamma_rho`` row is traversed from the largest ``gamma_beta``
    downward with warm starts; each row starts from ``theta_init``.  The
    argmin scans points in ascending lexicographic ``(gamma_rho, gamma_beta)``
    order and keeps the first minimum.
    """
    opt_cfg = opt_cfg or OptimizerConfig(multistart_count=1)
    P = ctx.P
    base = np.zeros(P) if theta_init is None else np.where(penalty_base.frozen_zero_mask, 0.0, theta_init.values)
    results: dict[tuple[int, int], tuple[GridPoint, OptimizerResult]] = {}
    errors = []
    for i, gr in enumerate(grid.rho_values):
        warm = ParamVector(base, ctx.layout)
        for j in reversed(range(len(grid.beta_values))):
            gb = grid.beta_values[j]
            try:
                res = maximize_penalized(ctx, penalty_base.with_gamma(gr, gb), opt_cfg, warm)
            except SpilloverError as exc:
                errors.append(f"({gr:.3g}, {gb:.3g}): {exc}")
                continue
            ic, sr, sb = _ic_of(res, ctx)
            results[(i, j)] = (GridPoint(gr, gb, res.sigma2, sr, sb, ic, res.converged), res)
            warm = res.theta_hat
    if not results:
        raise SelectionFailure("every grid point failed: " + "; ".join(errors[:3]))
    best = None
    for key in sorted(results):
        if best is None or results[key][0].ic_star < results[best][0].ic_star:
            best = key
    trace = [results[k][0] for k in sorted(results)]
    point, fit = results[best]
    return GammaSelection((point.gamma_rho, point.gamma_beta), trace, fit)


def residual_factor_panel(theta_check: ParamVector, ctx: ObjectiveContext) -> np.ndarray:
    """``S(rho) Y - sum_k beta_k X_k``: the panel left for a pure factor model."""
    return residual_panel(theta_check.values, ctx)


def _trailing(panel, R):
    n, T = panel.shape
    G = panel @ panel.T if n <= T else panel.T @ panel
    mu = np.linalg.eigvalsh(G / (n * T))[::-1]
    return float(np.trace(G) / (n * T) - mu[:R].sum())


def ic_factors(panel_resid, R: int, variant: FactorICVariant) -> float:
    panel_resid = np.asarray(panel_resid, dtype=float)
    n, T = panel_resid.shape
    if not 0 <= R < min(n, T):
        raise InvalidArgumentError(f"R must lie in [0, min(n, T)); got {R}")
    tail = _trailing(panel_resid, R)
    scale = float(np.sum(panel_resid**2)) / (n * T)
    if not tail > 1e-14 * max(scale, 1e-300):
        raise NumericDegenerateError(f"trailing eigen-sum vanishes at R={R}")
    return math.log(tail) + variant.penalty(n, T) * R


def factor_ic_trace(panel_resid, R_max: int, variants: Sequence[FactorICVariant]) -> list[dict]:
    rows = []
    for v in variants:
        for R in range(R_max + 1):
            try:
                val = ic_factors(panel_resid, R, v)
            except NumericDegenerateError:
                val = math.inf
            rows.append({"R": R, "variant": v.name, "ic": val})
    return rows


def select_num_factors(panel_resid, R_max: int, variants: Sequence[FactorICVariant] = (IC1, IC2, IC3)) -> dict[str, int]:
    """Per-variant argmin of the factor IC over ``0..R_max``; ties go to the smaller ``R``."""
    panel_resid = np.asarray(panel_resid, dtype=float)
    if R_max < 0 or R_max >= min(panel_resid.shape):
        raise InvalidArgumentError(f"R_max must lie in [0, min(n, T)); got {R_max}")
    out = {}
    for v in variants:
        vals = []
        for R in range(R_max + 1):
            try:
                vals.append(ic_factors(panel_resid, R, v))
            except NumericDegenerateError:
                vals.append(math.inf)
        if all(math.isinf(x) for x in vals):
            raise NumericDegenerateError("factor IC undefined for every candidate R")
        out[v.name] = int(np.argmin(vals))
    return out


def full_pipeline(data, R_max=None, cfg=None):
    """End-to-end estimation; see :func:`spillover.pipeline.full_pipeline`."""
    from .pipeline import full_pipeline as _run

    return _run(data, R_max, cfg)
