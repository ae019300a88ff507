"""Command-line interface: ``spillover simulate | estimate | montecarlo``.

Settings come from an optional JSON ``--config`` file, overridden by flags.
The whole configuration is validated before anything is written.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dgp import simulate, table1_design
from .errors import IngestionError, InvalidArgumentError, SpilloverError
from .files import load_panel_data, read_json, write_json, write_panel_csv, write_rows_csv, write_weights_csv
from .montecarlo import ExperimentPlan, run_experiment, write_results
from .optimizer import OptimizerConfig
from .penalty import DEFAULT_ZETA
from .pipeline import DEFAULT_R_MAX, PipelineConfig, build_report, estimate_fixed_r, run_pipeline

log = logging.getLogger("spillover")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
DESIGNS = ("table1",)
U64 = 2**64


class ConfigError(InvalidArgumentError):
    pass


@dataclass
class RunConfig:
    """Merged configuration for one command."""

    command: str
    seed: int = 0
    out: str | None = None
    create: bool = False
    design: str = "table1"
    n: int | None = None
    t: int | None = None
    reps: int = 100
    r_max: int | None = None
    fix_r: int | None = None
    zeta: float = DEFAULT_ZETA
    gamma: float | None = None
    threads: int = 1
    emit_truth: bool = False
    timing: bool = False
    oracle: bool = False
    panel: str | None = None
    weights: list[str] = field(default_factory=list)
    model: str | None = None
    layout: dict | None = None

    @classmethod
    def from_sources(cls, args: argparse.Namespace) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        merged = {"command": args.command}
        if args.config:
            data = read_json(args.config)
            if not isinstance(data, dict):
                raise ConfigError(f"{args.config}: top level must be an object")
            bad = set(data) - known - {"command"}
            if bad:
                raise ConfigError(f"{args.config}: unknown keys {sorted(bad)}")
            base = Path(args.config).parent
            for key in ("panel", "model", "out"):
                if isinstance(data.get(key), str):
                    data[key] = str(base / data[key])
            if isinstance(data.get("weights"), list):
                data["weights"] = [str(base / w) for w in data["weights"]]
            merged.update({k: v for k, v in data.items() if k != "command"})
        for k, v in vars(args).items():
            if k in known and v is not None and k != "command":
                if isinstance(v, bool) and not v:
                    continue
                if isinstance(v, list) and not v:
                    continue
                merged[k] = v
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 0 <= int(self.seed) < U64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.zeta <= 0:
            raise ConfigError("zeta must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        if self.gamma is not None and self.gamma < 0:
            raise ConfigError("gamma must be nonnegative")
        for name in ("r_max", "fix_r"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.out is None:
            raise ConfigError("--out is required")
        out = Path(self.out)
        if out.exists() and not out.is_dir():
            raise OSError(f"{out}: not a directory")
        if not out.exists() and not self.create:
            raise OSError(f"{out}: output directory does not exist (use --create)")
        if self.command in ("simulate", "montecarlo"):
            if self.design not in DESIGNS:
                raise ConfigError(f"unknown design {self.design!r}; choose from {DESIGNS}")
            if self.n is None or self.t is None:
                raise ConfigError("--n and --t are required")
            table1_design(int(self.n), int(self.t))  # raises on an invalid size
        if self.command == "montecarlo" and self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if self.command == "estimate":
            if self.model:
                if not Path(self.model).is_file():
                    raise OSError(f"{self.model}: model file not found")
            elif not self.panel:
                raise ConfigError("estimate needs --panel (and --weights) or --model")
            for p in ([self.panel] if self.panel else []) + list(self.weights):
                if not Path(p).is_file():
                    raise OSError(f"{p}: file not found")

    def worker_count(self) -> int:
        cap = os.environ.get("SPILLOVER_THREADS")
        n = int(self.threads)
        if cap:
            try:
                n = min(n, max(1, int(cap)))
            except ValueError:
                raise ConfigError("SPILLOVER_THREADS must be an integer") from None
        return n

    def pipeline_config(self) -> PipelineConfig:
        opt = OptimizerConfig(multistart_count=2, seed=int(self.seed))
        fixed = None if self.gamma is None else (float(self.gamma), float(self.gamma))
        return PipelineConfig(R_max=DEFAULT_R_MAX if self.r_max is None else int(self.r_max), zeta=float(self.zeta),
                              optimizer=opt, fixed_gamma=fixed)


def _ensure_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(cfg: RunConfig) -> list[Path]:
    design = table1_design(int(cfg.n), int(cfg.t), seed=int(cfg.seed))
    truth = simulate(design)
    out = _ensure_out(cfg)
    panel = truth.panel
    paths = [out / "panel.csv"]
    write_panel_csv(paths[0], panel, X_initial=truth.X_star_initial)
    wfiles = []
    for q, W in enumerate(design.weights.matrices):
        name = f"W{q + 1}.csv"
        write_weights_csv(out / name, W)
        wfiles.append(name)
        paths.append(out / name)
    model = {"design": cfg.design, "n": design.n, "T": design.T, "seed": int(cfg.seed),
             "layout": design.layout.to_dict(), "panel": "panel.csv", "weights": wfiles}
    write_json(out / "model.json", model)
    paths.append(out / "model.json")
    if cfg.emit_truth:
        write_json(out / "truth.json", {
            "names": design.layout.names, "theta0": design.theta0.values.tolist(), "R0": design.R0,
            "Lambda0": truth.Lambda0.tolist(), "F0": truth.F0.tolist(),
        })
        paths.append(out / "truth.json")
    return paths


def _load_estimation_inputs(cfg: RunConfig):
    layout = cfg.layout
    panel, weights = cfg.panel, list(cfg.weights)
    if cfg.model:
        model = read_json(cfg.model)
        base = Path(cfg.model).parent
        layout = layout or model.get("layout")
        panel = panel or str(base / model["panel"])
        weights = weights or [str(base / w) for w in model.get("weights", [])]
    data, _ = load_panel_data(panel, weights, layout)
    return data


def cmd_estimate(cfg: RunConfig) -> list[Path]:
    data = _load_estimation_inputs(cfg)
    pcfg = cfg.pipeline_config()
    if cfg.fix_r is not None:
        if cfg.fix_r >= min(data.n, data.T):
            raise ConfigError(f"fix_r must be below min(n, T) = {min(data.n, data.T)}")
        est = estimate_fixed_r(data, int(cfg.fix_r), pcfg)
        report = build_report(data, est)
    else:
        if pcfg.R_max >= min(data.n, data.T):
            raise ConfigError(f"r_max must be below min(n, T) = {min(data.n, data.T)}")
        report = run_pipeline(data, pcfg.R_max, pcfg).report
    out = _ensure_out(cfg)
    paths = [out / "report.json", out / "report.txt", out / "gamma_trace.csv", out / "factor_trace.csv"]
    paths[0].write_text(report.to_json() + "\n", encoding="utf-8")
    paths[1].write_text(report.coefficient_table(), encoding="utf-8")
    write_rows_csv(paths[2], report.gamma_trace,
                   ("gamma_rho", "gamma_beta", "sigma2", "support_rho", "support_beta", "ic_star"))
    write_rows_csv(paths[3], report.factor_trace, ("R", "variant", "ic"))
    return paths


def cmd_montecarlo(cfg: RunConfig) -> list[Path]:
    design = table1_design(int(cfg.n), int(cfg.t), seed=int(cfg.seed))
    pcfg = cfg.pipeline_config()
    if cfg.r_max is not None and cfg.fix_r is None:
        R_used = "pipeline"
    else:
        R_used = design.R0 if cfg.fix_r is None else int(cfg.fix_r)
    plan = ExperimentPlan(design, int(cfg.reps), R_used, int(cfg.seed), R_max=pcfg.R_max, config=pcfg,
                          oracle=bool(cfg.oracle), threads=cfg.worker_count())
    start = time.perf_counter()
    summary = run_experiment(plan, progress=lambda r: log.info("replication %d %s", r.index, "ok" if r.ok else r.error))
    out = _ensure_out(cfg)
    return write_results(plan, summary, out, time.perf_counter() - start if cfg.timing else None)


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "montecarlo": cmd_montecarlo}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spillover", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file with settings; flags override it")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--create", action="store_true", default=None, help="create the output directory")
        p.add_argument("--zeta", type=float)
        p.add_argument("--threads", type=int)

    p = sub.add_parser("simulate", help="draw a panel from a benchmark design")
    common(p)
    p.add_argument("--design")
    p.add_argument("--n", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--emit-truth", dest="emit_truth", action="store_true", default=None)

    p = sub.add_parser("estimate", help="estimate a panel")
    common(p)
    p.add_argument("--panel")
    p.add_argument("--weights", nargs="*", default=None)
    p.add_argument("--model", help="model.json as written by simulate")
    p.add_argument("--r-max", dest="r_max", type=int)
    p.add_argument("--fix-r", dest="fix_r", type=int)
    p.add_argument("--gamma", type=float, help="fixed penalty level for both blocks")

    p = sub.add_parser("montecarlo", help="run a replicated experiment")
    common(p)
    p.add_argument("--design")
    p.add_argument("--n", type=int)
    p.add_argument("--t", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--r-max", dest="r_max", type=int)
    p.add_argument("--fix-r", dest="fix_r", type=int)
    p.add_argument("--oracle", action="store_true", default=None)
    p.add_argument("--timing", action="store_true", default=None, help="record wall-clock time in the manifest")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_sources(args)
        paths = COMMANDS[cfg.command](cfg)
    except (IngestionError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (InvalidArgumentError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpilloverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
