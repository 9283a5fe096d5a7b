"""Command-line front end: run scenarios, export band tables and transmission scans."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .dispersion import BAND_COLUMNS, ERF, QUADRATIC, EitParams, band_table
from .errors import CflViolation, ConfigError, EitChainError, NonConverged, NumericalFailure, RootNotBracketed
from .mb import FieldState
from .scenarios import ENGINES, PRESETS, Scenario, adiabaticity_report, preset, run_scenario, window_scan

log = logging.getLogger("eitchain")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2
NUMERICAL_ERRORS = (NumericalFailure, CflViolation, NonConverged, RootNotBracketed)


def resolve_scenario(source: str) -> Scenario:
    """A preset name or the path of a YAML config."""
    if source in PRESETS:
        return preset(source)
    path = Path(source)
    if path.suffix in (".yaml", ".yml", ".json") or path.exists():
        return io.load_scenario(path)
    return preset(source)  # raises UnknownPreset with the list of names


def _apply_overrides(sc: Scenario, args) -> Scenario:
    changes = {}
    if args.scheme:
        changes["scheme"] = args.scheme
    if args.smoothing is not None:
        changes["medium"] = replace(sc.medium, interface_smoothing=args.smoothing)
    return replace(sc, **changes) if changes else sc


def _suffix(fmt: str) -> str:
    return ".txt" if fmt == "text" else ".bin"


def _write_failure(out: Path, exc: NumericalFailure, config: dict, fmt: str) -> Path | None:
    snap = getattr(exc, "snapshot", None)
    if snap is None:
        return None
    out.mkdir(parents=True, exist_ok=True)
    path = out / ("failure_snapshot" + _suffix(fmt))
    size = snap.E.size if isinstance(snap, FieldState) else snap.n_p.size
    if config.get("kind") == "grid":
        x = config["x_min"] + np.arange(size) * (config["x_max"] - config["x_min"]) / size
    else:
        x = np.arange(size, dtype=float)
    cfg = dict(config, failure_time=float(snap.t), failure=str(exc))
    if isinstance(snap, FieldState):
        io.write_table(path, io.mb_table(snap, x), io.MB_COLUMNS, cfg, fmt)
    else:
        v = np.divide(snap.I, snap.n_p, out=np.zeros_like(snap.I), where=snap.n_p > 0)
        io.write_table(path, io.effective_table(snap, x, v), io.EFFECTIVE_COLUMNS, cfg, fmt)
    return path


def write_run(run, out: Path, fmt: str, config: dict) -> list[Path]:
    """Snapshots, diagnostics series and the JSON summary of a finished run."""
    out.mkdir(parents=True, exist_ok=True)
    sc = run.scenario
    written = [out / "scenario.yaml"]
    io.dump_scenario(sc, written[0])
    if run.mb is not None:
        for i, snap in enumerate(run.mb.snapshots):
            path = out / f"mb_snapshot_{i:04d}{_suffix(fmt)}"
            written.append(io.write_table(path, io.mb_table(snap, run.x), io.MB_COLUMNS, dict(config, t=snap.t), fmt))
        diag = run.mb.diagnostics[:, :6]
        written.append(io.write_table(out / f"mb_diagnostics{_suffix(fmt)}", diag, run.mb.DIAG_COLUMNS[:6], config, fmt))
    if run.effective is not None:
        from .effective import VelocityField

        vel = VelocityField(sc.medium, run.x, sc.boundary)
        for i, snap in enumerate(run.effective.snapshots):
            path = out / f"effective_snapshot_{i:04d}{_suffix(fmt)}"
            table = io.effective_table(snap, run.x, vel.v(snap.t))
            written.append(io.write_table(path, table, io.EFFECTIVE_COLUMNS, dict(config, t=snap.t), fmt))
        diag = run.effective.diagnostics
        path = out / f"effective_diagnostics{_suffix(fmt)}"
        written.append(io.write_table(path, diag, run.effective.DIAG_COLUMNS, config, fmt))
    if run.chain is not None:
        us = sc.meta.get("per_us", 1.0)
        t = run.chain.t_out
        static = np.interp(t, run.chain_static.t_out, run.chain_static.I_out, left=0.0, right=0.0)
        source = np.interp(t, run.chain.inflow_t, run.chain.inflow, left=0.0, right=0.0)
        table = np.column_stack([t, t / us, run.chain.I_out, static, source])
        cols = ("t", "t_us", "I_out", "I_out_static", "I_in")
        written.append(io.write_table(out / f"chain_output{_suffix(fmt)}", table, cols, config, fmt))
    summary = {
        "scenario": sc.name,
        "engine": sc.engine,
        "config": config,
        "diagnostics": {k: d.as_dict() for k, d in run.diagnostics.items()},
        "comparison": run.comparison,
    }
    written.append(io.write_summary(out / "summary.json", summary))
    return written


def cmd_run(args) -> int:
    sc = _apply_overrides(resolve_scenario(args.scenario), args)
    engine = args.engine or sc.engine
    sc = sc.with_engine(engine)
    config = io.scenario_to_dict(sc)
    config.update({"dx": args.dx, "dt_override": args.dt, "snapshots": args.snapshots, "deterministic": True})
    out = Path(args.out)
    try:
        run = run_scenario(sc, engine, dx=args.dx, dt=args.dt, n_snapshots=args.snapshots)
    except NumericalFailure as exc:
        path = _write_failure(out, exc, config, args.format)
        print(f"numerical failure: {exc}", file=sys.stderr)
        if path is not None:
            print(f"last finite state written to {path}", file=sys.stderr)
        return EXIT_NUMERICAL
    for path in write_run(run, out, args.format, config):
        log.info("wrote %s", path)
    for eng, diag in run.diagnostics.items():
        for key, val in diag.as_dict().items():
            print(f"{eng}.{key} = {val}")
    for key, val in run.comparison.items():
        print(f"compare.{key} = {val}")
    return EXIT_OK


def _params(args) -> EitParams:
    return EitParams(
        coupling_D=args.D,
        omega_c_rabi=args.omega_c,
        gamma_e=args.gamma_e,
        gamma_m=args.gamma_m,
        delta_e=args.delta_e,
        delta_R=args.delta_R,
    )


def cmd_bands(args) -> int:
    p = _params(args)
    sub = ERF if args.substitute == "erf" else QUADRATIC
    ks = np.linspace(args.k_min, args.k_max, args.n_k)
    table = band_table(p, sub, ks)
    config = {"command": "bands", "params": p.__dict__, "substitute": args.substitute}
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    io.write_table(path, table, BAND_COLUMNS, config, args.format)
    print(f"wrote {len(ks)} rows to {path}")
    return EXIT_OK


def cmd_scan(args) -> int:
    p = _params(args)
    scan, width = window_scan(p, args.length, n_omega=args.n_omega, span=args.span, dx=args.dx or 0.5, dt=args.dt)
    amp, w0, fitted = scan.fit_window()
    config = {"command": "scan", "params": p.__dict__, "length": args.length, "closed_form_width": width}
    config.update({"fitted_width": fitted, "fitted_center": w0, "fitted_peak": amp})
    path = Path(args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([scan.omega, scan.transmission, scan.reflection])
    io.write_table(path, table, ("omega", "T2", "R2"), config, args.format)
    print(f"closed-form width = {width:.6g}")
    print(f"fitted width      = {fitted:.6g} (ratio {fitted / width:.4f})")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in PRESETS:
        sc = preset(name)
        print(f"{name}: engines={','.join(sc.engines)} kind={sc.kind} t_end={sc.t_end:g}")
        if args.verbose:
            lay = sc.medium.layers
            print(f"  layers: {len(lay)}  pulse: x0={sc.pulse.center_x0:g} sigma_t={sc.pulse.sigma_t:g}")
            for key, val in sc.meta.items():
                print(f"  {key}: {val}")
    return EXIT_OK


def cmd_validate(args) -> int:
    sc = resolve_scenario(args.scenario)
    if args.engine:
        sc = sc.with_engine(args.engine)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sc.check()
    if sc.kind == "grid":
        grid = sc.grid(args.dx, args.dt)
        from .mb import MBSolver

        if sc.engine in ("mb", "both"):
            MBSolver(grid, sc.medium).check_dt(grid.dt)
        print(f"grid: {grid.n_points} points, dx={grid.dx:g}, dt={grid.dt:g}")
    for row in adiabaticity_report(sc):
        if row["margin"] > 0:
            print(f"ramp {row['layer']} [{row['t_start']:g}, {row['t_end']:g}]: margin {row['margin']:.3g}")
    for w in caught:
        print(f"warning: {w.message}")
    print(f"{sc.name}: ok")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eitchain", description="1D EIT multilayer pulse simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a preset or a YAML scenario")
    run.add_argument("scenario", help="preset name or config path")
    run.add_argument("--engine", choices=ENGINES)
    run.add_argument("--out", default="out")
    run.add_argument("--dx", type=float)
    run.add_argument("--dt", type=float)
    run.add_argument("--snapshots", type=int, help="extra evenly spaced snapshots")
    run.add_argument("--format", choices=io.FORMATS, default="text")
    run.add_argument("--scheme", choices=("upwind", "muscl"))
    run.add_argument("--smoothing", type=float, help="interface smoothing length")
    run.set_defaults(func=cmd_run)

    def material(p):
        p.add_argument("--D", type=float, default=0.01)
        p.add_argument("--omega-c", type=float, default=0.07)
        p.add_argument("--gamma-e", type=float, default=1e-3)
        p.add_argument("--gamma-m", type=float, default=0.0)
        p.add_argument("--delta-e", type=float, default=0.0)
        p.add_argument("--delta-R", type=float, default=0.0)
        p.add_argument("--format", choices=io.FORMATS, default="text")

    bands = sub.add_parser("bands", help="polariton band table")
    material(bands)
    bands.add_argument("--k-min", type=float, default=0.8)
    bands.add_argument("--k-max", type=float, default=1.2)
    bands.add_argument("--n-k", type=int, default=401)
    bands.add_argument("--substitute", choices=("erf", "quadratic"), default="erf")
    bands.add_argument("--out", default="bands.txt")
    bands.set_defaults(func=cmd_bands)

    scan = sub.add_parser("scan", help="MB transmission scan of a single slab")
    material(scan)
    scan.add_argument("--length", type=float, default=100.0)
    scan.add_argument("--n-omega", type=int, default=41)
    scan.add_argument("--span", type=float, default=3.0, help="half range in closed-form widths")
    scan.add_argument("--dx", type=float)
    scan.add_argument("--dt", type=float)
    scan.add_argument("--out", default="scan.txt")
    scan.set_defaults(func=cmd_scan)

    pre = sub.add_parser("presets", help="list presets (with -v: parameters and assumptions)")
    pre.set_defaults(func=cmd_presets)

    val = sub.add_parser("validate", help="check a scenario without running it")
    val.add_argument("scenario")
    val.add_argument("--engine", choices=ENGINES)
    val.add_argument("--dx", type=float)
    val.add_argument("--dt", type=float)
    val.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EitChainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
