"""Multi-step estimation: initial fit, adaptive Lasso with IC*, factor count, refit, inference."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidArgumentError, SpilloverError, StageError
from .inference import InferenceResult, run_inference
from .model import PanelData, ParamVector
from .objective import ObjectiveContext
from .optimizer import OptimizerConfig, OptimizerResult, compute_gamma_bar, maximize_unpenalized
from .penalty import DEFAULT_ZETA, PenaltyConfig, make_adaptive_weights
from .selection import (
    FACTOR_VARIANTS,
    GRID_POINTS,
    GRID_SPAN,
    GammaGrid,
    GammaSelection,
    factor_ic_trace,
    residual_factor_panel,
    select_gamma,
    select_num_factors,
)

DEFAULT_R_MAX = 6


@dataclass(frozen=True)
class PipelineConfig:
    """Settings shared by fixed-``R`` estimation and the full pipeline.

    ``variant`` names the factor criterion whose ``R*`` drives the
    re-estimation; all variants are reported.  ``fixed_gamma`` replaces
    the IC* search with a single ``(gamma_rho, gamma_beta)`` point.
    """

    R_max: int = DEFAULT_R_MAX
    zeta: float = DEFAULT_ZETA
    grid_points: int = GRID_POINTS
    grid_span: float = GRID_SPAN
    variant: str = "IC2"
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(multistart_count=2))
    path_optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(multistart_count=1))
    inference: bool = True
    fixed_gamma: tuple[float, float] | None = None

    def __post_init__(self):
        if self.variant not in FACTOR_VARIANTS:
            raise InvalidArgumentError(f"unknown factor criterion {self.variant!r}")
        if self.R_max < 0:
            raise InvalidArgumentError("R_max must be nonnegative")
        if not 0 < self.grid_span < 1 or self.grid_points < 1:
            raise InvalidArgumentError("grid_span must lie in (0, 1) and grid_points be positive")


@dataclass(eq=False)
class FixedREstimate:
    """All intermediate results of the adaptive-Lasso path at one factor count."""

    R: int
    initial: OptimizerResult
    penalty: PenaltyConfig
    gamma_bar: tuple[float, float]
    selection: GammaSelection
    refit: OptimizerResult
    inference: InferenceResult | None
    warnings: list[str] = field(default_factory=list)

    @property
    def theta_tilde(self) -> ParamVector:
        return self.initial.theta_hat

    @property
    def theta_check(self) -> ParamVector:
        return self.selection.fit.theta_hat

    @property
    def theta_hat(self) -> ParamVector:
        return self.refit.theta_hat

    @property
    def support(self) -> tuple[int, ...]:
        return self.refit.active_support


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (SpilloverError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def penalized_path(ctx: ObjectiveContext, initial: OptimizerResult, cfg: PipelineConfig):
    """Adaptive weights from ``initial``, ``gamma_bar``, and the IC* grid search."""
    theta_t = initial.theta_hat
    pen = make_adaptive_weights(theta_t, cfg.zeta)
    if cfg.fixed_gamma is not None:
        bar = tuple(float(g) for g in cfg.fixed_gamma)
        grid = GammaGrid((bar[0],), (bar[1],))
    else:
        bar = compute_gamma_bar(ctx, pen, theta_t, cfg.path_optimizer)
        grid = GammaGrid.logarithmic(*bar, points=cfg.grid_points, span=cfg.grid_span)
    sel = select_gamma(grid, ctx, pen, cfg.path_optimizer, theta_t)
    return pen, bar, sel


def refit_on_support(ctx: ObjectiveContext, fit: OptimizerResult, cfg: PipelineConfig) -> OptimizerResult:
    """Unpenalized maximization with the zeros of ``fit`` pinned, started at ``fit``."""
    frozen = ~fit.support_mask
    one = OptimizerConfig(**{**asdict(cfg.optimizer), "multistart_count": 1})
    return maximize_unpenalized(ctx, one, fit.theta_hat, frozen=frozen)


def estimate_fixed_r(data: PanelData, R: int, cfg: PipelineConfig | None = None,
                     initial: OptimizerResult | None = None) -> FixedREstimate:
    """Adaptive-Lasso estimation, support refit and inference with ``R`` factors."""
    cfg = cfg or PipelineConfig()
    ctx = _stage("setup", ObjectiveContext, data, R)
    if initial is None:
        initial = _stage("initial", maximize_unpenalized, ctx, cfg.optimizer)
    pen, bar, sel = _stage("penalized", penalized_path, ctx, initial, cfg)
    refit = _stage("refit", refit_on_support, ctx, sel.fit, cfg)
    inf = None
    caught = []
    if cfg.inference and refit.active_support:
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            inf = _stage("inference", run_inference, refit.theta_hat, ctx)
        caught = [str(w.message) for w in rec]
    return FixedREstimate(R, initial, pen, bar, sel, refit, inf, caught)


def _finite(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _vec(v):
    return [_finite(x) for x in np.asarray(v, dtype=float).ravel()]


@dataclass
class EstimationReport:
    """Plain-data summary of an estimation run; round-trips through JSON.

    Vectors are full length in the order of ``names``; entries off the
    selected support are ``None`` for inference quantities.
    """

    names: list[str]
    layout: dict
    n: int
    T: int
    R_max: int | None
    R_selected: dict[str, int]
    R_used: int
    theta_tilde: list
    theta_check: list
    theta_hat: list
    theta_c: list
    se: list
    tstats: list
    support: list[str]
    gamma_bar: list
    gamma_star: list
    gamma_trace: list[dict]
    factor_trace: list[dict]
    bias: dict
    sigma2: float | None
    moments: dict
    condition_number: float | None
    diagnostics: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "EstimationReport":
        return cls(**json.loads(text))

    def coefficient_table(self) -> str:
        head = f"{'parameter':<12}{'estimate':>14}{'corrected':>14}{'se':>12}{'t':>13}"
        lines = [head, "-" * len(head)]
        idx = {nm: i for i, nm in enumerate(self.names)}
        for nm in self.support:
            i = idx[nm]
            vals = [self.theta_hat[i], self.theta_c[i], self.se[i], self.tstats[i]]
            cells = ["" if v is None else f"{v:.6f}" for v in vals]
            lines.append(f"{nm:<12}{cells[0]:>14}{cells[1]:>14}{cells[2]:>12}{cells[3]:>13}")
        lines.append(f"R used: {self.R_used}   selected: " + ", ".join(f"{k}={v}" for k, v in self.R_selected.items()))
        return "\n".join(lines) + "\n"


def build_report(data: PanelData, est: FixedREstimate, R_max=None, R_selected=None, factor_trace=None,
                 extra_diagnostics=None) -> EstimationReport:
    layout = data.layout
    P = layout.P
    nan = np.full(P, np.nan)
    inf = est.inference
    theta_c = inf.full(layout, "theta_c") if inf else nan
    se = inf.full(layout, "se") if inf else nan
    tst = inf.full(layout, "tstats") if inf else nan
    if inf:
        sup_names = inf.names
        bias = {
            "b1": _vec(inf.bias.b1), "b2": _vec(inf.bias.b2), "b3": _vec(inf.bias.b3),
            "assembled": _vec(inf.bias.assembled),
        }
        moments = {"sigma2": _finite(inf.sigma2), "M3": _finite(inf.M3), "M4": _finite(inf.M4)}
        cond = _finite(inf.condition_number)
        sigma2 = _finite(inf.sigma2)
    else:
        sup_names = [layout.names[p] for p in est.support]
        bias, moments, cond, sigma2 = {}, {}, None, _finite(est.refit.sigma2)
    trace = [{k: (_finite(v) if isinstance(v, float) else v) for k, v in row.items()}
             for row in est.selection.trace_rows()]
    diag = {
        "initial_converged": bool(est.initial.converged),
        "refit_converged": bool(est.refit.converged),
        "grid_unconverged": int(sum(not p.converged for p in est.selection.trace)),
        "warnings": list(est.warnings),
    }
    diag.update(extra_diagnostics or {})
    return EstimationReport(
        names=list(layout.names), layout=layout.to_dict(), n=data.n, T=data.T,
        R_max=R_max, R_selected=dict(R_selected or {}), R_used=int(est.R),
        theta_tilde=_vec(est.theta_tilde.values), theta_check=_vec(est.theta_check.values),
        theta_hat=_vec(est.theta_hat.values), theta_c=_vec(theta_c), se=_vec(se), tstats=_vec(tst),
        support=list(sup_names), gamma_bar=_vec(est.gamma_bar), gamma_star=_vec(est.selection.gamma_star),
        gamma_trace=trace,
        factor_trace=[{**r, "ic": _finite(r["ic"])} for r in (factor_trace or [])],
        bias=bias, sigma2=sigma2, moments=moments, condition_number=cond, diagnostics=diag,
    )


@dataclass(eq=False)
class PipelineResult:
    report: EstimationReport
    stage2: FixedREstimate
    final: FixedREstimate
    R_selected: dict[str, int]


def run_pipeline(data: PanelData, R_max: int | None = None, cfg: PipelineConfig | None = None) -> PipelineResult:
    """Full procedure with intermediate objects; see :func:`full_pipeline`."""
    cfg = cfg or PipelineConfig()
    R_max = cfg.R_max if R_max is None else int(R_max)
    n, T, P = data.n, data.T, data.layout.P
    if n * T <= P:
        raise InvalidArgumentError(f"need nT > P; got nT = {n * T}, P = {P}")
    if not 0 <= R_max < min(n, T):
        raise InvalidArgumentError(f"R_max must lie in [0, min(n, T)); got {R_max}")
    no_inf = PipelineConfig(**{**cfg.__dict__, "inference": False})
    stage2 = estimate_fixed_r(data, R_max, no_inf)
    ctx = ObjectiveContext(data, R_max)
    resid = _stage("factors", residual_factor_panel, stage2.theta_check, ctx)
    variants = list(FACTOR_VARIANTS.values())
    R_sel = _stage("factors", select_num_factors, resid, R_max, variants)
    ftrace = factor_ic_trace(resid, R_max, variants)
    R_star = R_sel[cfg.variant]
    if R_star == R_max:
        refit = _stage("reestimate", refit_on_support, ctx, stage2.selection.fit, cfg)
        final = FixedREstimate(R_max, stage2.initial, stage2.penalty, stage2.gamma_bar, stage2.selection, refit, None)
        if cfg.inference and refit.active_support:
            final.inference = _stage("inference", run_inference, refit.theta_hat, ctx)
    else:
        final = estimate_fixed_r(data, R_star, cfg)
    report = build_report(data, final, R_max, R_sel, ftrace)
    return PipelineResult(report, stage2, final, R_sel)


def full_pipeline(data: PanelData, R_max: int | None = None, cfg: PipelineConfig | None = None) -> EstimationReport:
    """Initial fit and IC* selection at ``R_max``, factor count, re-estimation at ``R*``, inference.

    Any stage failure is raised as :class:`StageError` naming the stage.
    """
    return run_pipeline(data, R_max, cfg).report
