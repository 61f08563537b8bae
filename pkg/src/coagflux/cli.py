"""Command-line entry point.

    coagflux <command> --config run.yaml [--out DIR] [--workers N] [--seed S]

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 acceptance failure (an ``acceptance`` threshold of the config was missed).
Outputs are written only after every computation has finished, so a failing
run leaves no partial files behind.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .characteristics import flow_context, verify_characteristics
from .config import COMMANDS, ConfigErrors, RunConfig, load_config
from .coagulation import PairTable, build_source
from .diagnostics import collapse_test, diagnose, fit_exponential_tail, fit_smallz_powerlaw, write_plot_csv
from .errors import CoagfluxError, ConfigurationError, DomainError, NumericalError
from .evolution import EvolutionState, PhysicalProblem, SelfSimilarProblem, StepControl, TruncationParams, \
    evolve
from .grid import GridDensity, build_grid, read_density_csv, write_density_csv
from .steady import CascadeSchedule, check_flux_boundary, find_truncated_steady, flux_inequality_excess, \
    profile_picard, run_cascade, stage_grid

logger = logging.getLogger("coagflux")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPTANCE = 0, 2, 3, 4


def clean_json(obj, path="", bad=None):
    """Convert numpy scalars/arrays to plain data; non-finite floats become ``None``.

    Paths of replaced values are appended to ``bad``.
    """
    if isinstance(obj, dict):
        return {str(k): clean_json(v, f"{path}.{k}" if path else str(k), bad) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [clean_json(v, f"{path}[{i}]", bad) for i, v in enumerate(list(obj))]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if not math.isfinite(v):
            if bad is not None:
                bad.append(path)
            return None
        return v
    return obj


def _dump(path: Path, data: dict) -> None:
    bad: list = []
    data = clean_json(data, bad=bad)
    if bad:
        data["nonfinite_fields"] = bad
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")


# --------------------------------------------------------------------------- helpers

def _grid_from(block: dict, default_cpd: float = 24.0):
    x_min, x_max = float(block["x_min"]), float(block["x_max"])
    if "n_cells" in block:
        n = int(block["n_cells"])
    else:
        n = int(math.ceil(block.get("cells_per_decade", default_cpd) * math.log10(x_max / x_min)))
    return build_grid(x_min, x_max, n)


def _params(block: dict) -> TruncationParams:
    return TruncationParams(float(block["epsilon"]), float(block["a"]), float(block["R"]),
                            block.get("A"), block.get("sigma"), float(block.get("band", 0.1)))


def _control(integ: dict) -> StepControl:
    kw = {k: float(integ[k]) for k in ("dt_max", "safety") if k in integ}
    kw.setdefault("dt_max", 0.1)
    return StepControl(**kw)


def _checkpoints(integ: dict, t_end: float):
    cps = integ.get("checkpoints", 3)
    if isinstance(cps, list):
        return sorted(float(c) for c in cps if c < t_end)
    # n checkpoints doubling up to t_end: t_end / 2^(n-1), ..., t_end / 2
    return [t_end / 2 ** k for k in range(int(cps) - 1, 0, -1)]


def _acceptance(cfg: RunConfig, values: dict) -> dict:
    """Compare measured ``values`` with the thresholds of the ``acceptance`` block."""
    out = {}
    for key, limit in cfg.acceptance.items():
        if key not in values:
            continue
        v = values[key]
        if key == "plateau_band":
            ok = v is not None and abs(v - 1.0) <= limit
        elif key == "tail_r2":
            ok = v is not None and v >= limit
        elif key == "smallz_tol":
            ok = v is not None and abs(v) <= limit
        else:
            ok = v is not None and math.isfinite(v) and v <= limit
        out[key] = {"value": v, "limit": limit, "passed": bool(ok)}
    return out


# --------------------------------------------------------------------------- commands

def _profile_outputs(cfg: RunConfig, spec, rep, extra: dict, files: dict):
    """Shared tail of the profile commands: diagnostics, CSVs and acceptance values."""
    phi = rep.profile
    d = cfg.diagnostics
    plateau_window = d.get("plateau_window")
    report = diagnose(phi, spec, flux=rep.flux, smallz_window=d.get("smallz_window"),
                      plateau_window=plateau_window, weak=d.get("weak", True), strong=d.get("strong", True))
    files["profile.csv"] = lambda p: write_density_csv(p, phi)
    files["flux.csv"] = lambda p: rep.flux.write_csv(p)
    tail = pl = None
    try:
        tail = fit_exponential_tail(phi, spec)
    except (NumericalError, DomainError):
        pass
    if report.smallz_window is not None:
        pl = fit_smallz_powerlaw(phi, spec, report.smallz_window)
    files["plot.csv"] = lambda p: write_plot_csv(p, phi, spec, rep.flux, tail, pl)
    body = {"run": rep.summary(), "diagnostics": report.to_dict()}
    body.update(extra)
    measured = {
        "plateau_band": report.plateau_mean,
        "smallz_tol": None if report.smallz_slope is None else report.smallz_slope - (-(3 + spec.gamma) / 2),
        "tail_r2": report.tail_fit_r2,
        "weak_residual": report.weak_residual,
        "max_mass": rep.max_mass,
    }
    return body, measured


def cmd_picard(cfg: RunConfig, files: dict):
    spec = cfg.kernel_spec()
    grid = _grid_from(cfg.grid)
    p = cfg.picard
    rep = profile_picard(spec, grid, damping=float(p.get("damping", 0.3)), tol=float(p.get("tol", 1e-10)),
                         ghost_decades=float(p.get("ghost_decades", 6.0)),
                         max_sweeps=int(p.get("max_sweeps", 20_000)), workers=cfg.workers)
    return _profile_outputs(cfg, spec, rep, {}, files)


def cmd_steady(cfg: RunConfig, files: dict):
    spec = cfg.kernel_spec()
    params = _params(cfg.truncation)
    grid = _grid_from(cfg.grid) if cfg.grid else stage_grid(params)
    integ = cfg.integrator
    rep = find_truncated_steady(spec, params, tol=float(integ.get("tol", 1e-8)), grid=grid,
                                control=_control(integ), max_steps=int(integ.get("max_steps", 500_000)),
                                workers=cfg.workers)
    extra = {"plateau": check_flux_boundary(rep).as_dict(),
             "flux_inequality_excess": flux_inequality_excess(rep, spec)}
    return _profile_outputs(cfg, spec, rep, extra, files)


def cmd_cascade(cfg: RunConfig, files: dict):
    spec = cfg.kernel_spec()
    c = cfg.cascade
    stages = []
    for k in range(len(c["epsilon"])):
        stages.append(TruncationParams(float(c["epsilon"][k]), float(c["a"][k]), float(c["R"][k]),
                                       c.get("A"), c.get("sigma"), float(c.get("band", 0.1))))
    sched = CascadeSchedule(spec, stages, c.get("tol", 1e-8), cells_per_decade=float(c.get("cells_per_decade", 24)),
                            x_max_factor=float(c.get("x_max_factor", 10)))
    rep = run_cascade(sched, control=_control(cfg.integrator), workers=cfg.workers)
    extra = {"plateau": check_flux_boundary(rep, z_lo=10 * stages[-1].epsilon).as_dict()}
    return _profile_outputs(cfg, spec, rep, extra, files)


def cmd_evolve(cfg: RunConfig, files: dict):
    spec = cfg.kernel_spec()
    integ = cfg.integrator
    mode = integ.get("mode", "physical")
    t_end = float(integ["t_end"])
    if mode == "physical":
        grid = _grid_from(cfg.grid)
        source = build_source(float(cfg.truncation["epsilon"]), grid)
        problem = PhysicalProblem(spec, grid, source, workers=cfg.workers)
        params = None
    else:
        params = _params(cfg.truncation)
        grid = _grid_from(cfg.grid) if cfg.grid else stage_grid(params)
        problem = SelfSimilarProblem(spec, grid, params, workers=cfg.workers)
    state = EvolutionState(0.0, GridDensity.zeros(grid), mode, params)
    traj = evolve(problem, state, t_end, _control(integ), checkpoints=_checkpoints(integ, t_end))
    rows = [{"time": s.time, "mass": s.mass, "overflow_mass": s.overflow_mass,
             "truncated_mass": s.truncated_mass, "clipped_mass": s.clipped_mass} for s in traj.states]
    final = traj.final
    flux = PairTable(problem.kernel, grid).flux(final.density)
    files["profile.csv"] = lambda p: write_density_csv(p, final.density)
    files["flux.csv"] = lambda p: flux.write_csv(p)
    body = {"run": {"mode": mode, "t_end": t_end, "steps": traj.steps, "checkpoints": rows,
                    "grid": {"x_min": grid.x_min, "x_max": grid.x_max, "n_cells": grid.n_cells}}}
    measured = {"max_mass": max(r["mass"] for r in rows)}
    if mode == "physical":
        err = max(abs(r["mass"] + r["overflow_mass"] - r["time"]) / r["time"] for r in rows)
        body["run"]["mass_growth_error"] = err
        if len(traj.states) >= 3:
            window = tuple(cfg.diagnostics.get("collapse_window", (0.05, 5.0)))
            col = collapse_test(traj.states[-3:], spec, window=window)
            body["run"]["collapse"] = {"distance": col.distance, "times": list(col.times),
                                       "window": list(col.window)}
            measured["collapse"] = col.distance
    return body, measured


def cmd_diagnose(cfg: RunConfig, files: dict):
    spec = cfg.kernel_spec()
    d = cfg.diagnostics
    phi = read_density_csv(d["profile"])
    flux = None
    if "flux" in d:
        import csv

        from .coagulation import FluxProfile
        with open(d["flux"], newline="") as fh:
            vals = [float(r["J_value"]) for r in csv.DictReader(fh)]
        if len(vals) != phi.grid.n_cells - 1:
            raise DomainError("flux file does not match the profile grid")
        flux = FluxProfile(phi.grid, np.array(vals))
    report = diagnose(phi, spec, flux=flux, smallz_window=d.get("smallz_window"),
                      plateau_window=d.get("plateau_window"), weak=d.get("weak", True),
                      strong=d.get("strong", True))
    measured = {
        "plateau_band": report.plateau_mean,
        "smallz_tol": None if report.smallz_slope is None else report.smallz_slope + (3 + spec.gamma) / 2,
        "tail_r2": report.tail_fit_r2,
        "weak_residual": report.weak_residual,
    }
    return {"diagnostics": report.to_dict()}, measured


def cmd_characteristics(cfg: RunConfig, files: dict):
    ch = cfg.characteristics
    gamma = cfg.kernel_spec().gamma if cfg.kernel else 0.0
    ctx = flow_context(gamma, float(ch["epsilon"]))
    rng = np.random.default_rng(cfg.seed)
    res = verify_characteristics(ctx, rng, int(ch.get("samples", 64)), float(ch.get("tau_max", 3.0)))
    defaults = {"semigroup": 1e-9, "merge": 1e-10, "change_of_variables": 1e-6}
    for k, v in defaults.items():
        cfg.acceptance.setdefault(k, v)
    return {"characteristics": res, "beta": ctx.beta, "epsilon": ctx.epsilon}, dict(res)


HANDLERS = {
    "picard": cmd_picard,
    "steady": cmd_steady,
    "cascade": cmd_cascade,
    "evolve": cmd_evolve,
    "diagnose": cmd_diagnose,
    "verify-characteristics": cmd_characteristics,
}


def _preflight(cfg: RunConfig) -> None:
    """Input files must exist before anything is computed or written."""
    if cfg.command == "diagnose":
        for key in ("profile", "flux"):
            p = cfg.diagnostics.get(key)
            if p is not None and not Path(p).is_file():
                raise ConfigErrors([f"diagnostics.{key}: file {p!r} does not exist"])


def run(cfg: RunConfig, out_dir) -> int:
    """Execute ``cfg`` and write its artefacts to ``out_dir``; returns the exit status."""
    _preflight(cfg)
    t0 = time.perf_counter()
    files: dict = {}
    body, measured = HANDLERS[cfg.command](cfg, files)
    elapsed = time.perf_counter() - t0
    acc = _acceptance(cfg, measured)
    passed = all(a["passed"] for a in acc.values())
    body["command"] = cfg.command
    body["acceptance"] = acc
    body["status"] = "ok" if passed else "acceptance_failed"

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, writer in files.items():
        writer(out / name)
        written.append(name)
    _dump(out / "report.json", body)
    written.append("report.json")
    import scipy
    import yaml
    manifest = {
        "package": "coagflux", "version": __version__, "python": platform.python_version(),
        "numpy": np.__version__, "scipy": scipy.__version__, "pyyaml": yaml.__version__,
        "config": cfg.echo(), "config_file": cfg.source, "seed": cfg.seed, "workers": cfg.workers,
        "timings": {"compute_seconds": elapsed}, "status": body["status"], "outputs": sorted(written),
    }
    _dump(out / "manifest.json", manifest)
    return EXIT_OK if passed else EXIT_ACCEPTANCE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coagflux", description="Self-similar profiles of coagulation with "
                                 "constant flux from the origin.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--out", help="output directory (overrides 'output' in the config)")
    ap.add_argument("--workers", type=int, help="worker threads for pair sums")
    ap.add_argument("--seed", type=int, help="seed for sampled checks")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, command=args.command)
        if args.workers is not None:
            if args.workers < 1:
                raise ConfigErrors(["--workers must be a positive integer"])
            cfg.workers = args.workers
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigErrors(["--seed must be non-negative"])
            cfg.seed = args.seed
        out = args.out or cfg.output or "coagflux-out"
        return run(cfg, out)
    except (ConfigurationError, DomainError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, CoagfluxError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if trace:
            print(json.dumps(clean_json(trace), indent=1)[:4000], file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
