"""Scenario configs (YAML) and run outputs (delimited text, packed binary, JSON summary).

Config schema (all quantities in normalized units, ``omega_p = k_p = c = 1``)::

    name: my_run
    preset: vacuum_defect        # optional; keys below override the preset
    t_end: 8800
    x_min: -2800
    x_max: 5392
    n_points: 8192
    dt: 0.5                      # optional
    sponge_width: 0
    launch: vacuum               # vacuum | steady
    boundary: open               # open | periodic (effective engine)
    engine: mb                   # mb | effective | both
    scheme: muscl                # upwind | muscl
    snapshot_times: [2000, 4300]
    diagnostics: [compression, delay]
    pulse: {center_x0: -2000, sigma_t: 400, amplitude: 1, detuning: 0, direction: 1}
    layers:
      - {x_start: 0, x_end: 500, coupling_D: 0.01, gamma_e: 0.001, control: default}
    protocols:
      default: {constant: 0.07}
      # or {levels: [0.07, 0.0, 0.07], times: [2650, 4100], ramp_time: 100,
      #     shape: raised_cosine, quantity: rabi}
      # or {quantity: rabi, segments: [[t0, t1, start, end, shape], ...]}
    meta: {x_detector: 1500}
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .medium import Layer, MediumProfile, ModulationProtocol, PulseSpec, Segment

MAGIC = b"EITCHAIN"
FORMAT_VERSION = 1
FORMATS = ("text", "binary")

MB_COLUMNS = ("x", "re_E", "im_E", "abs_E2", "re_rho_eg", "im_rho_eg", "re_rho_mg", "im_rho_mg")
EFFECTIVE_COLUMNS = ("x", "I", "v_gr", "n_p")

_SCENARIO_SCALARS = (
    "name",
    "t_end",
    "x_min",
    "x_max",
    "n_points",
    "dt",
    "sponge_width",
    "launch",
    "boundary",
    "engine",
    "kind",
    "t_start",
    "scheme",
    "diag_interval",
    "lossless",
    "units",
)


def _plain(value):
    """Convert numpy scalars and tuples into YAML/JSON friendly values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def protocol_to_dict(prot: ModulationProtocol) -> dict:
    return {
        "quantity": prot.quantity,
        "segments": [[s.t_start, s.t_end, s.start, s.end, s.shape] for s in prot.segments],
    }


def protocol_from_dict(d) -> ModulationProtocol:
    if isinstance(d, (int, float)):
        return ModulationProtocol.constant(float(d))
    if not isinstance(d, dict):
        raise ConfigError(f"protocol must be a number or a mapping, got {d!r}")
    quantity = d.get("quantity", "rabi")
    if "constant" in d:
        return ModulationProtocol.constant(float(d["constant"]), quantity)
    if "levels" in d:
        try:
            return ModulationProtocol.ramps(
                [float(v) for v in d["levels"]],
                [float(t) for t in d["times"]],
                float(d["ramp_time"]),
                d.get("shape", "raised_cosine"),
                quantity,
            )
        except KeyError as exc:
            raise ConfigError(f"ramp protocol needs {exc.args[0]!r}") from None
    if "segments" in d:
        segs = []
        for row in d["segments"]:
            if len(row) not in (4, 5):
                raise ConfigError("segment rows are [t_start, t_end, start, end, shape]")
            segs.append(Segment(*[float(v) for v in row[:4]], *row[4:]))
        return ModulationProtocol(tuple(segs), quantity)
    raise ConfigError("protocol needs one of: constant, levels, segments")


def _build(cls, d: dict, what: str):
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(sorted(unknown))}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from None


def scenario_to_dict(sc) -> dict:
    out = {k: getattr(sc, k) for k in _SCENARIO_SCALARS}
    out["engines"] = list(sc.engines)
    out["snapshot_times"] = list(sc.snapshot_times)
    out["diagnostics"] = list(sc.diagnostics)
    out["pulse"] = asdict(sc.pulse)
    out["layers"] = [asdict(lay) for lay in sc.medium.layers]
    out["protocols"] = {k: protocol_to_dict(p) for k, p in sc.medium.protocols.items()}
    out["interface_smoothing"] = sc.medium.interface_smoothing
    out["meta"] = dict(sc.meta)
    return _plain(out)


def scenario_from_dict(d: dict):
    """Build a scenario from a mapping; a ``preset`` key supplies defaults."""
    from .scenarios import Scenario, preset

    d = dict(d)
    base = None
    if "preset" in d:
        opts = d.pop("preset_options", {}) or {}
        base = scenario_to_dict(preset(d.pop("preset"), **opts))
        meta = dict(base.get("meta", {}))
        meta.update(d.pop("meta", {}) or {})
        base.update(d)
        base["meta"] = meta
        d = base
    try:
        pulse = _build(PulseSpec, d.pop("pulse"), "pulse")
        layers = tuple(_build(Layer, dict(lay), "layer") for lay in d.pop("layers", []))
        protocols = {k: protocol_from_dict(v) for k, v in (d.pop("protocols", {}) or {}).items()}
    except KeyError as exc:
        raise ConfigError(f"config is missing {exc.args[0]!r}") from None
    if layers and not protocols:
        protocols = {"default": ModulationProtocol.constant(0.0)}
    medium = MediumProfile(layers, protocols, float(d.pop("interface_smoothing", 0.0)))
    for key in ("snapshot_times", "diagnostics", "engines"):
        if key in d:
            d[key] = tuple(d[key])
    unknown = set(d) - {f.name for f in fields(Scenario)}
    if unknown:
        raise ConfigError(f"unknown scenario keys: {', '.join(sorted(unknown))}")
    if "t_end" not in d:
        raise ConfigError("config is missing 't_end'")
    d.setdefault("name", "custom")
    try:
        return Scenario(medium=medium, pulse=pulse, **d)
    except TypeError as exc:
        raise ConfigError(f"bad scenario: {exc}") from None


def load_scenario(path) -> object:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping")
    return scenario_from_dict(data)


def dump_scenario(sc, path) -> None:
    Path(path).write_text(yaml.safe_dump(scenario_to_dict(sc), sort_keys=False))


# --- run outputs -----------------------------------------------------------------------


def header_lines(config: dict, columns) -> list[str]:
    """Comment block holding the resolved configuration, one YAML line per row."""
    lines = ["eitchain output; units normalized: omega_p = k_p = c = 1"]
    lines += yaml.safe_dump(_plain(config), sort_keys=False).splitlines()
    lines.append("columns: " + " ".join(columns))
    return lines


def read_header(path) -> dict:
    """Recover the configuration block from a text output file."""
    rows = []
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            rows.append(line[2:].rstrip("\n"))
    body = [r for r in rows[1:] if not r.startswith("columns: ")]
    return yaml.safe_load("\n".join(body)) or {}


def write_table(path, data: np.ndarray, columns, config: dict, fmt: str = "text") -> Path:
    """Write a 2-D float table as delimited text or as a packed binary record."""
    data = np.asarray(data, dtype=float)
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ConfigError("table shape does not match its columns")
    path = Path(path)
    if fmt == "text":
        np.savetxt(path, data, header="\n".join(header_lines(config, columns)), comments="# ", fmt="%.17g")
    elif fmt == "binary":
        meta = json.dumps({"config": _plain(config), "columns": list(columns)}).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IIQQ", FORMAT_VERSION, len(meta), data.shape[0], data.shape[1]))
            fh.write(meta)
            fh.write(data.astype("<f8").tobytes())
    else:
        raise ConfigError(f"unknown format {fmt!r}")
    return path


def read_binary(path) -> tuple[np.ndarray, dict]:
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ConfigError(f"{path} is not an eitchain binary file")
        version, n_meta, rows, cols = struct.unpack("<IIQQ", fh.read(24))
        if version != FORMAT_VERSION:
            raise ConfigError(f"unsupported binary version {version}")
        meta = json.loads(fh.read(n_meta))
        data = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
    return data, meta


def mb_table(state, x) -> np.ndarray:
    E, r1, r2 = state.E, state.rho_eg, state.rho_mg
    return np.column_stack([x, E.real, E.imag, np.abs(E) ** 2, r1.real, r1.imag, r2.real, r2.imag])


def effective_table(state, x, v) -> np.ndarray:
    return np.column_stack([x, state.I, v, state.n_p])


def write_summary(path, summary: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(summary), indent=2, sort_keys=True))
    return path
