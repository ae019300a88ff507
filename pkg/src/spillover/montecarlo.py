"""Replicated simulation and estimation experiments with summary tables."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dgp import RNG_NAME, SimulationDesign, simulate
from .errors import ExperimentFailure, InvalidArgumentError
from .inference import Z975
from .objective import ObjectiveContext
from .optimizer import maximize_unpenalized
from .pipeline import PipelineConfig, estimate_fixed_r, run_pipeline
from .selection import FACTOR_VARIANTS

OUTPUTS = ("bias", "coverage", "zeros", "factor_selection")
MAX_FAILURE_RATE = 0.05


@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    """One simulation experiment.

    ``R_used`` is a fixed factor count, or ``"pipeline"`` to select it with
    ``R_max``.  Replication ``r`` draws from the stream keyed by
    ``(master_seed, r)``, so results do not depend on execution order.
    """

    design: SimulationDesign
    replications: int = 100
    R_used: int | str = 3
    master_seed: int = 0
    outputs: frozenset = frozenset(OUTPUTS)
    R_max: int = 6
    config: PipelineConfig = field(default_factory=PipelineConfig)
    oracle: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidArgumentError("replications must be at least 1")
        unknown = set(self.outputs) - set(OUTPUTS)
        if unknown:
            raise InvalidArgumentError(f"unknown outputs {sorted(unknown)}")
        object.__setattr__(self, "outputs", frozenset(self.outputs))
        if self.R_used != "pipeline" and not (isinstance(self.R_used, int) and self.R_used >= 0):
            raise InvalidArgumentError("R_used must be a nonnegative integer or 'pipeline'")
        if self.threads < 1:
            raise InvalidArgumentError("threads must be positive")

    @property
    def pipeline(self) -> bool:
        return self.R_used == "pipeline"

    def describe(self) -> dict:
        d = self.design
        cfg = self.config
        return {
            "design": {
                "n": d.n, "T": d.T, "R0": d.R0, "sigma0_sq": d.sigma0_sq, "burn_in": d.burn_in,
                "error_dist": d.error_dist, "names": d.layout.names, "theta0": d.theta0.values.tolist(),
                "layout": d.layout.to_dict(), "weights": list(d.weights.labels),
            },
            "replications": self.replications,
            "R_used": self.R_used,
            "R_max": self.R_max,
            "master_seed": self.master_seed,
            "outputs": sorted(self.outputs),
            "oracle": self.oracle,
            "config": {
                "zeta": cfg.zeta, "grid_points": cfg.grid_points, "grid_span": cfg.grid_span,
                "variant": cfg.variant, "multistart_count": cfg.optimizer.multistart_count,
                "objective_tolerance": cfg.optimizer.objective_tolerance,
                "step_tolerance": cfg.optimizer.step_tolerance,
            },
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.describe(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class ReplicationRecord:
    index: int
    ok: bool
    error: str = ""
    R_used: int = -1
    R_selected: dict = field(default_factory=dict)
    theta_hat: np.ndarray | None = None
    theta_c: np.ndarray | None = None
    se: np.ndarray | None = None
    oracle: np.ndarray | None = None
    seconds: float = 0.0

    @property
    def support(self) -> np.ndarray:
        return self.theta_hat != 0


def run_replication(plan: ExperimentPlan, index: int) -> ReplicationRecord:
    """Simulate and estimate one replication; failures are recorded, not raised."""
    start = time.perf_counter()
    design = plan.design.with_seed(plan.master_seed)
    P = design.layout.P
    try:
        truth = simulate(design, spawn_key=(index,))
        data = truth.panel
        if plan.pipeline:
            res = run_pipeline(data, plan.R_max, plan.config)
            est, R_sel = res.final, res.R_selected
        else:
            est, R_sel = estimate_fixed_r(data, plan.R_used, plan.config), {}
        inf = est.inference
        theta_hat = np.array(est.theta_hat.values)
        theta_c = inf.full(design.layout, "theta_c") if inf else np.full(P, np.nan)
        se = inf.full(design.layout, "se") if inf else np.full(P, np.nan)
        oracle = None
        if plan.oracle:
            ctx = ObjectiveContext(data, est.R)
            frozen = design.theta0.values == 0
            oracle = np.array(maximize_unpenalized(ctx, plan.config.optimizer, est.theta_tilde, frozen).theta_hat.values)
        return ReplicationRecord(index, True, "", int(est.R), dict(R_sel), theta_hat, theta_c, se, oracle,
                                 time.perf_counter() - start)
    except Exception as exc:  # isolate every replication
        return ReplicationRecord(index, False, f"{type(exc).__name__}: {exc}", seconds=time.perf_counter() - start)


def _worker(args):
    plan, index = args
    return run_replication(plan, index)


@dataclass
class ExperimentSummary:
    """Aggregates over successful replications.

    ``coverage`` conditions on the parameter being selected;
    ``coverage_unconditional`` counts unselected replications as misses.
    """

    names: list[str]
    theta0: list[float]
    replications: int
    successful: int
    failures: int
    outputs: list[str]
    mean_bias: dict = field(default_factory=dict)
    mean_bias_raw: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)
    coverage_unconditional: dict = field(default_factory=dict)
    zero_rate: dict = field(default_factory=dict)
    zero_rate_overall: float | None = None
    support_exact_rate: float | None = None
    factor_selection: dict = field(default_factory=dict)
    oracle_max_diff: float | None = None
    failure_log: list[str] = field(default_factory=list)
    records: list[ReplicationRecord] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "records"}
        return d


def _mean(x):
    return float(np.mean(x)) if len(x) else None


def aggregate(plan: ExperimentPlan, records: list[ReplicationRecord]) -> ExperimentSummary:
    records = sorted(records, key=lambda r: r.index)
    design = plan.design
    names = design.layout.names
    theta0 = design.theta0.values
    good = [r for r in records if r.ok]
    fails = [f"replication {r.index}: {r.error}" for r in records if not r.ok]
    s = ExperimentSummary(list(names), theta0.tolist(), len(records), len(good), len(fails),
                          sorted(plan.outputs), failure_log=fails, records=records)
    if not good:
        return s
    est = np.array([r.theta_hat for r in good])
    corr = np.array([r.theta_c for r in good])
    se = np.array([r.se for r in good])
    sel = est != 0
    nonzero = np.flatnonzero(theta0 != 0)
    zeros = np.flatnonzero(theta0 == 0)
    for p in nonzero:
        nm = names[p]
        m = sel[:, p] & np.isfinite(corr[:, p])
        if "bias" in plan.outputs:
            s.mean_bias[nm] = _mean(corr[m, p] - theta0[p])
            s.mean_bias_raw[nm] = _mean(est[sel[:, p], p] - theta0[p])
        if "coverage" in plan.outputs:
            hit = np.zeros(len(good), dtype=bool)
            hit[m] = np.abs(corr[m, p] - theta0[p]) <= Z975 * se[m, p]
            s.coverage[nm] = _mean(hit[m])
            s.coverage_unconditional[nm] = _mean(hit)
    if "zeros" in plan.outputs and zeros.size:
        for p in zeros:
            s.zero_rate[names[p]] = _mean(~sel[:, p])
        s.zero_rate_overall = _mean((~sel[:, zeros]).ravel())
    s.support_exact_rate = _mean(np.all(sel == (theta0 != 0), axis=1))
    if "factor_selection" in plan.outputs and plan.pipeline:
        for v in FACTOR_VARIANTS:
            s.factor_selection[v] = _mean([r.R_selected.get(v) == design.R0 for r in good])
    if plan.oracle:
        exact = [r for r in good if np.array_equal(r.support, theta0 != 0) and r.oracle is not None]
        if exact:
            s.oracle_max_diff = float(max(np.abs(r.theta_hat - r.oracle).max() for r in exact))
    return s


def run_experiment(plan: ExperimentPlan, progress=None) -> ExperimentSummary:
    """Run every replication and aggregate.

    Raises
    ------
    ExperimentFailure
        When more than 5% of replications fail; ``logs`` lists the errors.
    """
    jobs = range(plan.replications)
    if plan.threads > 1 and plan.replications > 1:
        with ProcessPoolExecutor(max_workers=plan.threads) as pool:
            records = list(pool.map(_worker, [(plan, i) for i in jobs]))
    else:
        records = []
        for i in jobs:
            records.append(run_replication(plan, i))
            if progress:
                progress(records[-1])
    summary = aggregate(plan, records)
    if summary.failures > MAX_FAILURE_RATE * plan.replications:
        raise ExperimentFailure(
            f"{summary.failures} of {plan.replications} replications failed", summary.failure_log
        )
    return summary


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "NA"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


SUMMARY_HEADER = ("table", "parameter", "value")


def summary_rows(summary: ExperimentSummary) -> list[tuple[str, str, str]]:
    rows = []
    out = set(summary.outputs)
    if "bias" in out:
        rows += [("bias", k, _fmt(v)) for k, v in summary.mean_bias.items()]
    if "coverage" in out:
        rows += [("coverage", k, _fmt(v)) for k, v in summary.coverage.items()]
        rows += [("coverage_unconditional", k, _fmt(v)) for k, v in summary.coverage_unconditional.items()]
    if "zeros" in out:
        rows += [("zeros", k, _fmt(v)) for k, v in summary.zero_rate.items()]
        if summary.zero_rate_overall is not None:
            rows.append(("zeros", "all", _fmt(summary.zero_rate_overall)))
    if "factor_selection" in out:
        rows += [("factor_selection", k, _fmt(v)) for k, v in summary.factor_selection.items()]
    return rows


def summarize_to_tables(summary: ExperimentSummary) -> dict[str, str]:
    """CSV and aligned-text renderings; keys ``"csv"`` and ``"text"``."""
    rows = summary_rows(summary)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_HEADER)
    w.writerows(rows)
    widths = [max([len(h)] + [len(r[i]) for r in rows]) for i, h in enumerate(SUMMARY_HEADER)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(SUMMARY_HEADER)).rstrip()]
    for r in rows:
        lines.append("  ".join(c.ljust(widths[i]) if i < 2 else c.rjust(widths[i]) for i, c in enumerate(r)))
    return {"csv": buf.getvalue(), "text": "\n".join(lines) + "\n"}


def _num(v) -> str:
    v = float(v)
    return repr(v) if math.isfinite(v) else "NA"


def replications_csv(summary: ExperimentSummary) -> str:
    names = summary.names
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["replication", "status", "R_used"] + [f"R_{v}" for v in FACTOR_VARIANTS]
    for tag in ("est", "corr", "se"):
        header += [f"{tag}_{nm}" for nm in names]
    header.append("error")
    w.writerow(header)
    blanks = [""] * (3 * len(names))
    for r in summary.records:
        row = [r.index, "ok" if r.ok else "failed", r.R_used if r.ok else ""]
        row += [r.R_selected.get(v, "") for v in FACTOR_VARIANTS]
        if r.ok:
            row += [_num(x) for x in r.theta_hat] + [_num(x) for x in r.theta_c] + [_num(x) for x in r.se]
        else:
            row += blanks
        row.append(r.error)
        w.writerow(row)
    return buf.getvalue()


def write_results(plan: ExperimentPlan, summary: ExperimentSummary, out_dir, timing: float | None = None) -> list[Path]:
    """Write ``summary.csv``, ``summary.txt``, ``replications.csv`` and ``manifest.json``.

    Wall-clock time enters the manifest only when ``timing`` is given, so
    default outputs are byte-reproducible.
    """
    out = Path(out_dir)
    tables = summarize_to_tables(summary)
    manifest = {
        "package_version": __version__,
        "rng": RNG_NAME,
        "config_hash": plan.config_hash(),
        "plan": plan.describe(),
        "seeds": [{"replication": i, "seed": plan.master_seed, "spawn_key": [i]} for i in range(plan.replications)],
        "successful": summary.successful,
        "failures": summary.failures,
        "failure_log": summary.failure_log,
        "summary": {k: v for k, v in summary.to_dict().items() if k not in ("failure_log",)},
    }
    if timing is not None:
        manifest["wall_clock_seconds"] = timing
    files = {
        "summary.csv": tables["csv"],
        "summary.txt": tables["text"],
        "replications.csv": replications_csv(summary),
        "manifest.json": json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    }
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
