"""Command-line front end: ``colddamp <command> --config FILE``.

Exit codes: 0 success, 1 usage or configuration error, 2 physical
instability or no solution.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import collective, markov, spectral, sweep, trajectory
from .config import ConfigError, RunConfig, grid_from, load
from .errors import (ColdDampError, Degenerate, NoConvergence, NoStableDelay, NotStable,
                     QuadratureDiverged, SolveFailed, Unstable)
from .model import Regime

EXIT_OK, EXIT_USAGE, EXIT_UNSTABLE = 0, 1, 2
STEADY_METHODS = ("lyapunov-sfflc", "lyapunov-wfflc", "fourier", "closed-form")
_PHYSICS_ERRORS = (Unstable, NotStable, QuadratureDiverged, NoStableDelay, SolveFailed,
                   NoConvergence)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("artifact")
    except Exception:
        return "unknown"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_metadata(out: Path, name: str, args, cfg: RunConfig, **extra) -> None:
    meta = {
        "command": args.command,
        "config_path": str(args.config),
        "config": cfg.resolved(),
        "package_version": _version(),
    }
    meta.update(extra)
    with open(out / name, "w", newline="\n") as fh:
        json.dump(_jsonable(meta), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, int(os.environ.get("COLDDAMP_THREADS", "1") or 1))


def _quad_config(cfg: RunConfig) -> spectral.QuadratureConfig:
    rtol = cfg.get("quadrature", "rtol", 1e-3)
    if not rtol > 0:
        raise ConfigError("quadrature.rtol must be > 0")
    return spectral.QuadratureConfig(rtol=rtol)


def _markov_spec(spec):
    return spec.with_regime(Regime.WFFLC) if spec.regime is Regime.EXACT else spec


# --- commands -----------------------------------------------------------------

def cmd_steady(args, cfg: RunConfig, out: Path) -> int:
    spec = cfg.spec
    default = "fourier" if spec.regime is Regime.EXACT else f"lyapunov-{spec.regime.value}"
    method = args.method or cfg.get("steady", "method", default)
    if method not in STEADY_METHODS:
        raise UsageError(f"unknown steady method {method!r}; choose from {', '.join(STEADY_METHODS)}")
    optical = cfg.get("steady", "optical_noise")
    margin = None
    if method.startswith("lyapunov"):
        regime = Regime.parse(method.split("-", 1)[1])
        s = spec.with_regime(regime)
        drift = markov.build_drift(s)
        margin = markov.stability_margin(drift)
        occ = markov.occupancy_from_cov(markov.steady_state(s, optical_noise=optical))
    elif method == "fourier":
        model = cfg.get("quadrature", "model", "white-thermal")
        occ = spectral.occupancy_fourier(spec, config=_quad_config(cfg), model=model)
    else:
        s = _markov_spec(spec)
        margin = markov.stability_margin(markov.build_drift(s))
        if margin >= 0:
            raise NotStable(margin)
        if spec.n_modes == 1:
            occ = np.array([markov.closed_form_single(s)])
        elif spec.n_modes == 2:
            occ = np.array(markov.closed_form_two(s))
        elif spec.tau == 0:
            occ = markov.closed_form_multi_tau0(s)
        else:
            raise UsageError("closed-form occupancies for N > 2 modes need tau = 0")
    rows = [[j + 1, occ[j], method] for j in range(len(occ))]
    spectral.write_csv(out / "occupancies.csv", ["mode", "n_eff", "method"], rows)
    _write_metadata(out, "occupancies.json", args, cfg, method=method, stability_margin=margin,
                    outputs=["occupancies.csv"])
    if args.plot:
        from .plotting import plot_occupancies
        plot_occupancies(out / "occupancies.png", occ, method)
    return EXIT_OK


def cmd_spectrum(args, cfg: RunConfig, out: Path) -> int:
    spec = cfg.spec
    w_max = float(np.max(spec.omega))
    lo = cfg.get("spectrum", "omega_min", 0.0)
    hi = cfg.get("spectrum", "omega_max", 2.0 * w_max)
    n = cfg.get("spectrum", "points", 2001)
    if n < 2 or not hi > lo or lo < 0:
        raise ConfigError("spectrum grid needs 0 <= omega_min < omega_max and points >= 2")
    grid = np.linspace(lo, hi, n)
    taus = cfg.get("spectrum", "tau", [spec.tau])
    model = cfg.get("spectrum", "model", "full")
    coords = cfg.get("spectrum", "coordinates", "modes")
    if coords not in ("modes", "collective"):
        raise ConfigError("spectrum.coordinates must be 'modes' or 'collective'")
    outputs = []
    for i, tau in enumerate(taus, start=1):
        if coords == "collective":
            sg = spectral.SpectrumGrid(Omega=grid, tau=tau, prefix="S_Q",
                                       spectra=collective.collective_spectra(spec, grid, tau,
                                                                             model=model))
        else:
            sg = spectral.spectrum(spec, tau, grid, model=model)
        name = f"spectrum_{i}.csv"
        sg.to_csv(out / name)
        outputs.append({"file": name, "tau": tau})
        if args.plot:
            from .plotting import plot_spectrum
            plot_spectrum(out / f"spectrum_{i}.png", sg)
    _write_metadata(out, "spectrum.json", args, cfg, model=model, coordinates=coords,
                    outputs=outputs)
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig, out: Path) -> int:
    opts = dict(cfg.options.get("simulate", {}))
    if args.seed is not None:
        opts["seed"] = args.seed
    sim = trajectory.SimConfig(threads=_threads(args), **opts)
    try:
        sim.validate(cfg.spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    ens = trajectory.run_ensemble(cfg.spec, sim)
    trajectory.export_ensemble_csv(out / "trajectory.csv", ens)
    _write_metadata(out, "trajectory.json", args, cfg, simulation=ens.metadata,
                    diverged=ens.diverged, first_divergence_time=ens.first_divergence_time,
                    n_diverged=ens.n_diverged, steady=ens.steady,
                    steady_stderr=ens.steady_stderr, outputs=["trajectory.csv"])
    if args.plot:
        from .plotting import plot_trajectory
        plot_trajectory(out / "trajectory.png", ens)
    return EXIT_OK


def cmd_scan(args, cfg: RunConfig, out: Path) -> int:
    method = args.method or cfg.get("scan", "method", "lyapunov")
    if method not in sweep.METHODS:
        raise UsageError(f"unknown scan method {method!r}; choose from {', '.join(sweep.METHODS)}")
    taus = grid_from(cfg, "scan", "tau")
    if taus is None:
        raise ConfigError("scan needs scan.tau or scan.tau_min/scan.tau_max")
    spacing = grid_from(cfg, "scan", "spacing", default_points=21)
    optical = cfg.get("scan", "optical_noise")
    qcfg = _quad_config(cfg)
    try:
        if spacing is None:
            res = sweep.scan_tau(cfg.spec, taus, method, optical, qcfg, _threads(args))
        else:
            res = sweep.scan_2d(cfg.spec, taus, spacing, method, cfg.get("scan", "scale_nbar", True),
                                optical, qcfg, _threads(args))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    res.to_csv(out / "scan.csv")
    _write_metadata(out, "scan.json", args, cfg, method=method,
                    unstable_cells=res.unstable_count, outputs=["scan.csv"])
    if args.plot:
        from .plotting import plot_scan
        plot_scan(out / "scan.png", res)
    return EXIT_OK


def cmd_optimize(args, cfg: RunConfig, out: Path) -> int:
    method = args.method or cfg.get("optimize", "method", "lyapunov")
    if method not in sweep.METHODS:
        raise UsageError(f"unknown optimize method {method!r}; choose from {', '.join(sweep.METHODS)}")
    lo = cfg.get("optimize", "tau_min", 0.0)
    hi = cfg.get("optimize", "tau_max")
    if hi is None:
        raise ConfigError("optimize.tau_max is required")
    objective = cfg.get("optimize", "objective", "total-occupancy")
    if objective not in sweep.OBJECTIVES:
        raise ConfigError(f"optimize.objective must be one of {', '.join(sweep.OBJECTIVES)}")
    try:
        best = sweep.optimize_delay(cfg.spec, (lo, hi), objective, method,
                                    n_coarse=cfg.get("optimize", "points", 400),
                                    config=_quad_config(cfg), threads=_threads(args))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    spectral.write_csv(out / "optimize.csv", ["tau", "objective", "method", "margin"],
                       [[best.tau, best.objective, method, best.margin]])
    _write_metadata(out, "optimize.json", args, cfg, method=method, objective=objective,
                    source=best.source, outputs=["optimize.csv"])
    return EXIT_OK


COMMANDS = {
    "steady": cmd_steady,
    "spectrum": cmd_spectrum,
    "simulate": cmd_simulate,
    "scan": cmd_scan,
    "optimize": cmd_optimize,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="colddamp", description="Multimode delayed cold-damping calculator.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="dotted-key config file")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--method", default=None, help="override the configured method")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (default: COLDDAMP_THREADS or 1)")
        p.add_argument("--seed", type=int, default=None, help="override simulate.seed")
        p.add_argument("--plot", action="store_true", help="also render PNG figures")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        cfg = load(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, args.out)
    except (UsageError, ConfigError, Degenerate) as exc:
        print(f"colddamp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"colddamp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NotStable as exc:
        print(f"colddamp: unstable: drift eigenvalue with real part {exc.max_real_part:.6g}",
              file=sys.stderr)
        return EXIT_UNSTABLE
    except _PHYSICS_ERRORS as exc:
        print(f"colddamp: no steady state: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE
    except ColdDampError as exc:
        print(f"colddamp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
