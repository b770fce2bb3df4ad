"""Command-line front end.

``oblique-rbsde solve CONFIG [--out DIR] [--override key=value ...]``
``oblique-rbsde verify CONFIG``
``oblique-rbsde sweep CONFIG --npen a,b,c``

Exit status: 0 success, 2 config or validation error, 3 numerical
non-convergence, 4 representation-verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, apply_override, parse_config_dict
from .exceptions import (
    ConfigError,
    ContractionError,
    HypothesisError,
    InternalConsistencyError,
    OracleGuardError,
    PicardNonConvergence,
    ProjectionNonConvergence,
    RBSDEError,
    SpecStructureError,
    VerificationFailure,
)
from .io import write_json, write_surfaces, write_table
from .solvers import expected_increment_totals, q_violation, residuals, solve, solve_direct, solve_picard
from .switching import verify_representation

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

logger = logging.getLogger("oblique_rbsde")


@dataclass
class RunArtifacts:
    directory: Path
    report: dict
    report_path: Path | None = None
    surfaces: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)


def _error_entry(exc: Exception) -> dict:
    entry = {"type": type(exc).__name__, "message": str(exc)}
    rep = getattr(exc, "report", None)
    if rep is not None:
        entry["report"] = rep.to_dict()
    if isinstance(exc, PicardNonConvergence):
        entry["gaps"] = exc.gaps
    if isinstance(exc, ProjectionNonConvergence):
        entry["sweeps"] = exc.sweeps
    return entry


def _sweep_task(cfg: RunConfig, out: Path, csv_on: bool, art: RunArtifacts) -> dict:
    spec, lat = cfg.spec, cfg.lattice
    ref = solve_direct(spec, lat, cfg.options)
    rows, sols = [], []
    for n_pen in cfg.n_pen_sweep:
        sol = solve(spec, lat, cfg.sweep_backend, cfg.options, n_pen=n_pen)
        sols.append(sol)
        rows.append([n_pen, sol.sup_gap(ref)] + sol.y0.tolist())
    # penalising the upper barrier approaches from above, the oblique one from below
    sign = -1.0 if cfg.sweep_backend == "penalty_upper" else 1.0
    worst = 0.0
    for a, b in zip(sols, sols[1:]):
        for ya, yb in zip(a.Y, b.Y):
            worst = max(worst, float(np.max(sign * (ya - yb))))
    if csv_on:
        header = ["n_pen", "sup_gap"] + [f"Y0_mode{i}" for i in range(spec.mode_count)]
        art.tables["penalty_sweep"] = write_table(out / "penalty_sweep.csv", header,
                                                  [[_as_int(r[0])] + r[1:] for r in rows])
    return {
        "backend": cfg.sweep_backend,
        "rows": [{"n_pen": r[0], "sup_gap": r[1], "Y0": r[2:]} for r in rows],
        "Y0_direct": ref.y0,
        "monotone": worst <= cfg.options.monotonicity_tol,
        "worst_monotonicity_violation": worst,
    }


def _as_int(x):
    return int(x) if float(x).is_integer() else x


def run(cfg: RunConfig) -> RunArtifacts:
    """Execute the configured tasks in order and write their artifacts.

    A solver or oracle error is written into the report under ``failure``
    and then re-raised; a failed representation check raises
    :class:`VerificationFailure` after all tasks have run.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_on = "csv" in cfg.formats
    report: dict = {
        "version": __version__,
        "status": "ok",
        "config": cfg.raw,
        "validation": cfg.validation.to_dict() if cfg.validation else None,
        "tasks": {},
    }
    art = RunArtifacts(out, report)
    sol = None
    verify_failed = None
    try:
        for task in cfg.tasks:
            if task in ("solve", "residuals") and sol is None:
                sol = solve(cfg.spec, cfg.lattice, cfg.backend, cfg.options)
            if task == "solve":
                section = {"backend": sol.backend, "Y0": sol.y0,
                           "meta": {k: v for k, v in sol.meta.items() if k != "trace"}}
                if csv_on:
                    art.surfaces.append(write_surfaces(out / "surfaces.csv", sol))
                    section["surfaces"] = "surfaces.csv"
            elif task == "residuals":
                res = residuals(sol, cfg.spec)
                up, low = q_violation(sol, cfg.spec)
                kp, km = expected_increment_totals(sol)
                section = {"upper": res.upper, "lower": res.lower, "worst": res.worst(),
                           "q_violation_upper": up, "q_violation_lower": low,
                           "expected_K_plus": kp, "expected_K_minus": km}
            elif task == "verify_representation":
                vr = verify_representation(cfg.spec, cfg.lattice.steps, cfg.options, cfg.verify_tol)
                section = vr.to_dict()
                if not vr.passed:
                    verify_failed = vr
            elif task == "penalty_sweep":
                section = _sweep_task(cfg, out, csv_on, art)
            else:
                psol = solve_picard(cfg.spec, cfg.lattice, cfg.options)
                trace = psol.meta["trace"]
                section = {"iterations": psol.meta["iterations"], "trace": trace,
                           "monotone": all(r["min_increment"] >= -cfg.options.monotonicity_tol for r in trace),
                           "sup_gap_to_direct": psol.sup_gap(solve_direct(cfg.spec, cfg.lattice, cfg.options))}
                if csv_on:
                    art.tables["picard_trace"] = write_table(
                        out / "picard_trace.csv", ["iteration", "sup_delta", "min_increment"],
                        [[r["iteration"], r["sup_delta"], r["min_increment"]] for r in trace])
            report["tasks"][task] = section
    except RBSDEError as exc:
        report["status"] = "error"
        report["failure"] = _error_entry(exc)
        art.report_path = write_json(out / "report.json", report)
        raise
    if verify_failed is not None:
        report["status"] = "verification_failed"
    if "json" in cfg.formats or verify_failed is not None:
        art.report_path = write_json(out / "report.json", report)
    if verify_failed is not None:
        raise VerificationFailure(
            f"representation check failed, worst gap {verify_failed.worst_gap:.3g}", verify_failed)
    return art


def _load(path: str, overrides=()) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for o in overrides:
        apply_override(raw, o)
    return raw


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oblique-rbsde", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="run the tasks listed in a config")
    s.add_argument("config")
    s.add_argument("--out", help="output directory (overrides output.directory)")
    s.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                   help="set a dotted config key, e.g. lattice.N=64; repeatable")
    v = sub.add_parser("verify", help="check the solution against the exhaustive oracle")
    v.add_argument("config")
    v.add_argument("--out")
    w = sub.add_parser("sweep", help="penalty sweep over a list of n_pen values")
    w.add_argument("config")
    w.add_argument("--npen", required=True, help="comma-separated penalty parameters")
    w.add_argument("--out")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = _load(args.config, getattr(args, "override", ()))
        if args.command == "verify":
            raw["tasks"] = ["verify_representation"]
        elif args.command == "sweep":
            try:
                npen = [float(x) for x in args.npen.split(",") if x.strip()]
            except ValueError:
                raise ConfigError(f"--npen expects numbers, got {args.npen!r}") from None
            raw.setdefault("solver", {})["n_pen_sweep"] = npen
            raw["tasks"] = ["penalty_sweep"]
        if args.out:
            raw.setdefault("output", {})["directory"] = args.out
        cfg = parse_config_dict(raw)
        art = run(cfg)
    except (ConfigError, HypothesisError, SpecStructureError, OracleGuardError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        rep = getattr(exc, "report", None)
        if rep is not None:
            print(rep.summary(), file=sys.stderr)
        return EXIT_CONFIG
    except (ContractionError, ProjectionNonConvergence, PicardNonConvergence, InternalConsistencyError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    if art.report_path:
        print(f"wrote {art.report_path}")
    for task, section in art.report["tasks"].items():
        if "Y0" in section:
            print(f"{task}: Y0 = {list(map(float, section['Y0']))}")
        elif task == "verify_representation":
            print(f"{task}: passed={section['passed']} worst_gap={section['worst_gap']:.3g}")
        elif task == "penalty_sweep":
            print(f"{task}: {len(section['rows'])} rows, monotone={section['monotone']}")
        elif task == "picard_trace":
            print(f"{task}: {section['iterations']} iterations")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
