"""Preset EIT-chain experiments, engine drivers and observable extraction."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import constants
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks

from .dispersion import C_LIGHT, EitParams, adiabaticity_margin, control_for_velocity, transmission_window
from .effective import (
    ChainResult,
    DefectGeometry,
    EffectiveResult,
    VelocityField,
    absorption_length,
    analytic_defect,
    run_effective,
    run_layer_chain,
)
from .errors import ConfigError, PeakAmbiguousWarning, ScenarioWarning, UnknownPreset
from .mb import (
    SUPPORT_SIGMAS,
    Grid,
    MBSolver,
    RunResult,
    TransmissionScan,
    default_dt,
    init_state,
    init_steady_state,
    peak_position,
    transmission_scan,
)
from .medium import Layer, MediumProfile, ModulationProtocol, PulseSpec

log = logging.getLogger(__name__)

ENGINES = ("mb", "effective", "both")
LAUNCHES = ("vacuum", "steady")
KINDS = ("grid", "chain")

# Sodium D2 line: conversion of lab units to normalized ones (omega_p = k_p = c = 1).
SODIUM_OMEGA_P = 2 * math.pi * 508e12
SODIUM_PER_US = SODIUM_OMEGA_P * 1e-6
SODIUM_PER_UM = SODIUM_OMEGA_P / constants.c * 1e-6
SODIUM_D = 3e-9
SODIUM_GAMMA_E = 2 * math.pi * 10e6 / SODIUM_OMEGA_P
SODIUM_RABI = 2 * math.pi * 17e6 / SODIUM_OMEGA_P

FIG2 = {"coupling_D": 0.01, "gamma_e": 1e-3, "omega_c": 0.07}


@dataclass
class Scenario:
    """A fully declared run: medium, schedules, pulse, domain and observables.

    Grid scenarios are simulated on ``[x_min, x_max)`` with ``n_points``
    cells. Chain scenarios grid only the layers; ``pulse.center_x0`` is then
    the entrance of the first layer, reached by the pulse centre at ``t = 0``.
    """

    name: str
    medium: MediumProfile
    pulse: PulseSpec
    t_end: float
    x_min: float = 0.0
    x_max: float = 0.0
    n_points: int = 0
    dt: float | None = None
    sponge_width: float = 0.0
    launch: str = "vacuum"
    boundary: str = "open"
    engine: str = "mb"
    engines: tuple = ("mb", "effective")
    snapshot_times: tuple = ()
    diagnostics: tuple = ()
    kind: str = "grid"
    t_start: float = 0.0
    scheme: str = "muscl"
    diag_interval: float | None = None
    lossless: bool = True
    units: str = "normalized"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"unknown engine {self.engine!r}")
        if self.launch not in LAUNCHES:
            raise ConfigError(f"unknown launch {self.launch!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.t_end <= self.t_start:
            raise ConfigError("t_end must exceed t_start")
        if self.kind == "grid":
            self.grid()  # validates domain parameters

    def grid(self, dx: float | None = None, dt: float | None = None) -> Grid:
        n = self.n_points
        if dx is not None:
            n = 1 << max(3, math.ceil(math.log2((self.x_max - self.x_min) / dx)))
        step = dt or self.dt or default_dt(self.medium, (self.t_start, self.t_end))
        return Grid(self.x_min, self.x_max, n, step, self.sponge_width)

    def check(self) -> list[str]:
        """Consistency warnings (also emitted as ``ScenarioWarning``)."""
        notes = []
        if self.lossless:
            bw = self.pulse.bandwidth()
            for lay in self.medium.layers:
                p = self.medium.params(lay, self.t_start)
                if p.gamma_e <= 0 or p.omega_c_rabi <= 0:
                    continue
                length = lay.thickness
                if self.kind == "grid":
                    length = min(lay.x_end, self.x_max) - max(lay.x_start, self.x_min)
                window = transmission_window(p, length)
                if bw > window:
                    notes.append(
                        f"pulse bandwidth {bw:.3g} exceeds the EIT window {window:.3g} of layer {lay.label}"
                    )
        for note in notes:
            warnings.warn(note, ScenarioWarning, stacklevel=2)
        return notes

    def with_engine(self, engine: str) -> "Scenario":
        if engine not in ENGINES:
            raise ConfigError(f"unknown engine {engine!r}")
        wanted = ("mb", "effective") if engine == "both" else (engine,)
        for e in wanted:
            if e not in self.engines:
                raise ConfigError(f"preset {self.name} does not support the {e} engine")
        return replace(self, engine=engine)


@dataclass
class Diagnostics:
    """Observables of one engine run; unset fields are ``None``."""

    delay: float | None = None
    compression: float | None = None
    peak_ratio: float | None = None
    length_ratio: float | None = None
    retrieval_efficiency: float | None = None
    hole_width: float | None = None
    peak_width: float | None = None
    shape_error: float | None = None
    amplitude_error: float | None = None
    reflected_energy: float | None = None
    extra: dict = field(default_factory=dict)
    candidates: list = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k not in ("extra", "candidates") and v is not None}
        out.update(self.extra)
        if self.candidates:
            out["peak_candidates"] = list(self.candidates)
        return out


@dataclass
class ScenarioRun:
    scenario: Scenario
    x: np.ndarray | None = None
    mb: RunResult | None = None
    effective: EffectiveResult | None = None
    chain: ChainResult | None = None
    chain_static: ChainResult | None = None
    controls: dict = field(default_factory=dict)
    initial_intensity: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)
    comparison: dict = field(default_factory=dict)


# --- presets ---------------------------------------------------------------------------


def _fig2_layer(x0: float, x1: float, control: str = "default", gamma_e: float = FIG2["gamma_e"], name: str = "") -> Layer:
    return Layer(x0, x1, FIG2["coupling_D"], control, gamma_e=gamma_e, name=name)


def _static_interface() -> Scenario:
    L = 500.0
    med = MediumProfile((_fig2_layer(0.0, L, name="slab"),), {"default": ModulationProtocol.constant(FIG2["omega_c"])})
    pulse = PulseSpec(-2000.0, 400.0)
    return Scenario(
        "static_interface",
        med,
        pulse,
        t_end=8800.0,
        x_min=-2800.0,
        x_max=5392.0,
        n_points=8192,
        snapshot_times=(2000.0, 4300.0, 8800.0),
        diagnostics=("compression", "delay", "restoration"),
        diag_interval=10.0,
        meta={
            "source": "static interface, v_gr = 0.11 c",
            "t_inside": 4300.0,
            "x_detector": 1500.0,
            "assumed": "slab thickness 500/k_p chosen to hold the compressed pulse",
        },
    )


def _homogeneous_ramp(variant: str = "slow_down", ramp_shape: str = "raised_cosine", ramp_time: float = 100.0) -> Scenario:
    factors = {"slow_down": 0.5, "speed_up": 1.8}
    if variant not in factors:
        raise ConfigError(f"unknown homogeneous_ramp variant {variant!r}")
    D, om = FIG2["coupling_D"], FIG2["omega_c"]
    v_i = 1.0 / (1.0 + D / (om / 2) ** 2)
    om_f = float(control_for_velocity(factors[variant] * v_i, D))
    prot = ModulationProtocol.ramps([om, om_f], [200.0], ramp_time, ramp_shape)
    x_min, x_max = -512.0, 512.0
    med = MediumProfile((_fig2_layer(x_min, x_max, name="bulk"),), {"default": prot})
    return Scenario(
        "homogeneous_ramp",
        med,
        PulseSpec(-100.0, 400.0),
        t_end=1000.0,
        x_min=x_min,
        x_max=x_max,
        n_points=2048,
        launch="steady",
        boundary="periodic",
        snapshot_times=(0.0, 1000.0),
        diagnostics=("peak_ratio", "length_ratio"),
        meta={
            "variant": variant,
            "v_ratio": factors[variant],
            "ramp_shape": ramp_shape,
            "ramp_time": ramp_time,
            "assumed": "peak read 700/omega_p after the ramp, once the bright-polariton beat has dephased",
        },
    )


def _exit_ramp() -> Scenario:
    D, om = FIG2["coupling_D"], FIG2["omega_c"]
    v_i = 1.0 / (1.0 + D / (om / 2) ** 2)
    om_f = float(control_for_velocity(0.5 * v_i, D))
    prot = ModulationProtocol.ramps([om, om_f], [2700.0], 100.0)
    x_min = -1024.0
    med = MediumProfile((_fig2_layer(x_min, 0.0, name="exit"),), {"default": prot})
    return Scenario(
        "exit_ramp",
        med,
        PulseSpec(-300.0, 400.0),
        t_end=7000.0,
        x_min=x_min,
        x_max=7168.0,
        n_points=8192,
        launch="steady",
        snapshot_times=(0.0, 2700.0, 7000.0),
        diagnostics=("peak_ratio", "asymmetry"),
        meta={"assumed": "slow-down ramp starts as the pulse centre reaches the exit face"},
    )


def _vacuum_defect() -> Scenario:
    v_hi, v_lo, L_d = 0.11, 0.02, 6400.0
    tau, tau_s = 100.0, 60000.0
    prot = ModulationProtocol.ramps([v_hi, v_lo, v_hi], [0.0, tau + tau_s], tau, quantity="group_velocity")
    x_min, n, dx = -8500.0, 32768, 0.78125
    x_max = x_min + n * dx
    med = MediumProfile((_fig2_layer(x_min, 0.0, name="left"), _fig2_layer(L_d, x_max, name="right")), {"default": prot})
    sigma_bar = 1600.0
    return Scenario(
        "vacuum_defect",
        med,
        PulseSpec(-330.0, sigma_bar / v_hi),
        t_end=67600.0,
        x_min=x_min,
        x_max=x_max,
        n_points=n,
        launch="steady",
        snapshot_times=(100.0, 30000.0, 60200.0, 67600.0),
        diagnostics=("hole_width", "peak_width"),
        meta={
            "L_d": L_d,
            "v_plus": v_hi,
            "v_minus": v_lo,
            "tau": tau,
            "tau_s": tau_s,
            "sigma_bar_x": sigma_bar,
            "expected_hole": L_d * v_hi / C_LIGHT,
            "expected_peak": L_d * v_lo / C_LIGHT,
            "assumed": "D = 0.01 (shared default for the stopped-light scenarios); pulse centre at x = -330 when the slow-down ramp starts",
        },
    )


def _storage(gamma_e: float = 0.0) -> Scenario:
    tau, tau_s = 100.0, 1350.0
    t_stop = 2650.0
    prot = ModulationProtocol.ramps([0.07, 0.0, 0.07], [t_stop, t_stop + tau + tau_s], tau)
    med = MediumProfile((_fig2_layer(0.0, 10.0, gamma_e=gamma_e, name="slab"),), {"default": prot})
    return Scenario(
        "storage_single_layer",
        med,
        PulseSpec(-2700.0, 540.0),
        t_end=4900.0,
        x_min=-6000.0,
        x_max=6000.0,
        n_points=32768,
        sponge_width=600.0,
        engines=("mb",),
        snapshot_times=(0.0, 2750.0, 3400.0, 4900.0),
        diagnostics=("retrieval_efficiency", "reflected_energy"),
        lossless=False,
        meta={
            "gamma_e": gamma_e,
            "t_stop_end": t_stop + tau,
            "t_retrieve_start": t_stop + tau + tau_s,
            "assumed": "D = 0.01 (shared default for the stopped-light scenarios); stopping ramp centred on the pulse-centre arrival",
        },
    )


def _sodium_chain(name: str) -> Scenario:
    um, us = SODIUM_PER_UM, SODIUM_PER_US
    gamma = SODIUM_GAMMA_E
    if name == "sodium_single_layer":
        v, ratio, tau, tau_s, sigma_t = 1e-7, 10.0, 3.5 * us, 8.0 * us, 10.0 * us
        L = 200.0 * um
        t_r = -(tau + 0.5 * tau_s)
        prot = ModulationProtocol.ramps([v, v / ratio, v], [t_r, t_r + tau + tau_s], tau, quantity="group_velocity")
        layers = (Layer(0.0, L, SODIUM_D, gamma_e=gamma, name="L1"),)
        meta = {"ratio": ratio, "tau_us": 3.5, "tau_s_us": 8.0, "L_um": 200.0, "v_gr": v, "signature": "trailing_peak"}
    else:
        v, tau, sigma_t = 5e-7, 0.05 * us, 1.0 * us
        L = 30.0 * um
        if name == "sodium_double_layer":
            count, gap_um, dv = 2, 3e7, -0.5
        else:
            count, gap_um, dv = 4, 6e7, -0.7
        gap = gap_um * um
        layers = tuple(
            Layer(i * (L + gap), i * (L + gap) + L, SODIUM_D, gamma_e=gamma, name=f"L{i + 1}") for i in range(count)
        )
        chain = count * L / v + (count - 1) * gap / C_LIGHT
        t_r = 0.5 * chain
        prot = ModulationProtocol.ramps([v, v * (1 + dv)], [t_r], tau, quantity="group_velocity")
        meta = {
            "layers": count,
            "gap_um": gap_um,
            "dv_over_v": dv,
            "tau_ns": 50.0,
            "L_um": 30.0,
            "v_gr": v,
            "signature": f"{count}_notches",
            # layers are far thinner than the pulse; the step is diffusion-limited (dt ~ dx^2)
            "cells_per_layer": 64,
            "assumed": "uniform spacing; ramp starts when the pulse centre reaches the middle of the chain",
        }
    med = MediumProfile(layers, {"default": prot})
    p = EitParams(coupling_D=SODIUM_D, omega_c_rabi=float(control_for_velocity(v, SODIUM_D)), gamma_e=gamma)
    meta.update(
        {
            "sigma_t_us": sigma_t / us,
            "ramp_start_us": t_r / us,
            "l_abs_over_sigma_bar": absorption_length(p, sigma_t) / (sigma_t * v),
            "diffusion": v * C_LIGHT * gamma / SODIUM_D,
            "per_um": um,
            "per_us": us,
            "assumed_units": "gamma_e and D from the sodium D2 line; group velocity set directly by the preset",
        }
    )
    return Scenario(
        name,
        med,
        PulseSpec(0.0, sigma_t),
        t_start=-6.0 * sigma_t,
        t_end=6.0 * sigma_t,
        kind="chain",
        engine="effective",
        engines=("effective",),
        diagnostics=("signature",),
        units="sodium",
        meta=meta,
    )


PRESETS = {
    "static_interface": _static_interface,
    "homogeneous_ramp": _homogeneous_ramp,
    "exit_ramp": _exit_ramp,
    "vacuum_defect": _vacuum_defect,
    "storage_single_layer": _storage,
    "sodium_single_layer": lambda: _sodium_chain("sodium_single_layer"),
    "sodium_double_layer": lambda: _sodium_chain("sodium_double_layer"),
    "sodium_four_layer": lambda: _sodium_chain("sodium_four_layer"),
}


def preset(name: str, **options) -> Scenario:
    """Scenario for one of the named reference configurations.

    ``homogeneous_ramp`` accepts ``variant`` (``slow_down``/``speed_up``),
    ``ramp_shape`` and ``ramp_time``; ``storage_single_layer`` accepts
    ``gamma_e``.
    """
    try:
        factory = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}") from None
    return factory(**options)


# --- profile measurements --------------------------------------------------------------


def second_moment_width(x: np.ndarray, y: np.ndarray) -> float:
    w = np.sum(y)
    if w <= 0:
        return 0.0
    mu = np.sum(x * y) / w
    return float(np.sqrt(np.sum((x - mu) ** 2 * y) / w))


def fwhm(x: np.ndarray, y: np.ndarray) -> float:
    """Full width at half maximum with linear interpolation of the crossings."""
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    left = i
    while left > 0 and y[left] > half:
        left -= 1
    right = i
    while right < y.size - 1 and y[right] > half:
        right += 1

    def cross(a, b):
        if y[b] == y[a]:
            return x[a]
        return x[a] + (half - y[a]) * (x[b] - x[a]) / (y[b] - y[a])

    return float(cross(right - 1, right) - cross(left, left + 1))


def tracked_peak(x: np.ndarray, y: np.ndarray, rel: float = 0.1) -> tuple[float, float, list]:
    """Peak by parabolic interpolation; warns if other maxima come within ``rel`` of it."""
    x_pk, y_pk = peak_position(x, y)
    idx, _ = find_peaks(y, height=(1 - rel) * y.max(), prominence=rel * y.max())
    cands = [float(x[i]) for i in idx]
    if len(cands) > 1:
        warnings.warn(f"{len(cands)} peaks within {rel:.0%} of the maximum", PeakAmbiguousWarning, stacklevel=2)
    return x_pk, y_pk, cands if len(cands) > 1 else []


def feature_width(x: np.ndarray, y: np.ndarray, lo: float, hi: float, kind: str) -> float:
    """Distance between the steepest rising and falling edges inside ``[lo, hi]``.

    ``kind="peak"`` expects a rise followed by a fall, ``kind="hole"`` a
    fall followed by a rise.
    """
    m = (x >= lo) & (x <= hi)
    xs, ys = x[m], y[m]
    if xs.size < 5:
        raise ConfigError("feature window too small")
    g = np.gradient(ys, xs)
    first = np.argmax(g) if kind == "peak" else np.argmin(g)
    rest = g[first + 1 :]
    if rest.size == 0:
        return 0.0
    second = first + 1 + (np.argmin(rest) if kind == "peak" else np.argmax(rest))

    def refine(i):
        if 0 < i < g.size - 1:
            gm, g0, gp = g[i - 1], g[i], g[i + 1]
            den = gm - 2 * g0 + gp
            if den != 0:
                return xs[i] + 0.5 * (gm - gp) / den * (xs[1] - xs[0])
        return xs[i]

    return float(refine(second) - refine(first))


def crossing_time(t: np.ndarray, xp: np.ndarray, x_det: float) -> float:
    """First time the tracked peak passes ``x_det`` (linear interpolation)."""
    above = np.flatnonzero(xp >= x_det)
    if above.size == 0:
        raise ConfigError(f"peak never reaches x = {x_det:g}")
    j = int(above[0])
    if j == 0:
        return float(t[0])
    return float(t[j - 1] + (x_det - xp[j - 1]) * (t[j] - t[j - 1]) / (xp[j] - xp[j - 1]))


def backward_energy(E: np.ndarray, dx: float) -> float:
    """Energy in left-moving components (lab wave vector < 0, i.e. ``k - k_p < -1``)."""
    spec = np.fft.fft(E)
    k = 2 * np.pi * np.fft.fftfreq(E.size, dx)
    back = np.where(k < -1.0, spec, 0.0)
    return float(np.sum(np.abs(np.fft.ifft(back)) ** 2) * dx)


def forward_part(E: np.ndarray, dx: float) -> np.ndarray:
    spec = np.fft.fft(E)
    k = 2 * np.pi * np.fft.fftfreq(E.size, dx)
    return np.fft.ifft(np.where(k >= -1.0, spec, 0.0))


def rel_l2(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


# --- engine drivers --------------------------------------------------------------------


def initial_field(sc: Scenario, grid: Grid):
    if sc.launch == "steady":
        return init_steady_state(grid, sc.medium, sc.pulse, sc.t_start)
    return init_state(grid, sc.pulse, sc.medium, t0=sc.t_start)


def _snapshot_schedule(sc: Scenario, n_snap: int | None) -> tuple:
    times = set(sc.snapshot_times)
    if "t_inside" in sc.meta:
        times.add(sc.meta["t_inside"])
    if n_snap:
        times |= set(np.linspace(sc.t_start, sc.t_end, n_snap).tolist())
    return tuple(sorted(times))


def _run_mb(sc: Scenario, grid: Grid, snaps, medium: MediumProfile | None = None) -> RunResult:
    med = sc.medium if medium is None else medium
    solver = MBSolver(grid, med)
    state = initial_field(replace(sc, medium=med), grid) if medium is not None else initial_field(sc, grid)
    log.info("MB run %s: %d points, dt=%g, t=%g..%g", sc.name, grid.n_points, grid.dt, sc.t_start, sc.t_end)
    return solver.run(state, sc.t_end, snaps, sc.diag_interval)


def _run_eff(sc: Scenario, x: np.ndarray, I0: np.ndarray, snaps, medium: MediumProfile | None = None) -> EffectiveResult:
    vel = VelocityField(sc.medium if medium is None else medium, x, sc.boundary)
    log.info("effective run %s: %d cells", sc.name, x.size)
    return run_effective(vel, I0, sc.t_start, sc.t_end, scheme=sc.scheme, snapshot_times=snaps)


def _static_copy(medium: MediumProfile, t: float) -> MediumProfile:
    prot = {
        k: ModulationProtocol.constant(float(p.value(t)), p.quantity) for k, p in medium.protocols.items()
    }
    return MediumProfile(medium.layers, prot, medium.interface_smoothing)


def _chain_source(sc: Scenario):
    amp2 = sc.pulse.amplitude**2
    sig = sc.pulse.sigma_t

    def source(t):
        return amp2 * np.exp(-((np.asarray(t) / sig) ** 2))

    return source


def run_scenario(
    sc: Scenario,
    engine: str | None = None,
    dx: float | None = None,
    dt: float | None = None,
    n_snapshots: int | None = None,
    controls: bool = True,
) -> ScenarioRun:
    """Run a scenario on the requested engine(s) and measure its observables."""
    if engine is not None:
        sc = sc.with_engine(engine)
    else:
        sc = sc.with_engine(sc.engine)
    sc.check()
    run = ScenarioRun(sc)
    if sc.kind == "chain":
        if dx is not None:
            raise ConfigError("chain scenarios grid each layer with a fixed cell count; --dx does not apply")
        src = _chain_source(sc)
        cells = int(sc.meta.get("cells_per_layer", 200))
        run.chain = run_layer_chain(sc.medium, src, (sc.t_start, sc.t_end), cells)
        run.chain_static = run_layer_chain(_static_copy(sc.medium, sc.t_start), src, (sc.t_start, sc.t_end), cells)
        run.diagnostics["effective"] = measure(run, "effective")
        return run

    grid = sc.grid(dx, dt)
    run.x = grid.x
    snaps = _snapshot_schedule(sc, n_snapshots)
    state0 = initial_field(sc, grid)
    run.initial_intensity = np.abs(state0.E) ** 2
    if sc.engine in ("mb", "both"):
        run.mb = _run_mb(sc, grid, snaps)
        if controls and "delay" in sc.diagnostics:
            run.controls["mb"] = _run_mb(sc, grid, (), MediumProfile.vacuum())
        run.diagnostics["mb"] = measure(run, "mb")
    if sc.engine in ("effective", "both"):
        run.effective = _run_eff(sc, run.x, run.initial_intensity, snaps)
        if controls and "delay" in sc.diagnostics:
            run.controls["effective"] = _run_eff(sc, run.x, run.initial_intensity, (), MediumProfile.vacuum())
        run.diagnostics["effective"] = measure(run, "effective")
    if sc.engine == "both":
        run.comparison = compare_engines(run)
    return run


def _profiles(run: ScenarioRun, engine: str):
    """(times, intensity profiles, final complex field or None) for one engine."""
    if engine == "mb":
        snaps = run.mb.snapshots
        return [s.t for s in snaps], [s.intensity for s in snaps], run.mb.final
    snaps = run.effective.snapshots
    return [s.t for s in snaps], [np.array(s.I) for s in snaps], None


def _profile_at(run: ScenarioRun, engine: str, t: float) -> np.ndarray:
    times, profiles, _ = _profiles(run, engine)
    if not times:
        raise ConfigError("no snapshots recorded")
    i = int(np.argmin(np.abs(np.array(times) - t)))
    if abs(times[i] - t) > 1.0 + 1e-9 * abs(t):
        raise ConfigError(f"no snapshot near t={t:g}")
    return profiles[i]


def _final_intensity(run: ScenarioRun, engine: str) -> np.ndarray:
    if engine == "mb":
        return run.mb.final.intensity
    return np.array(run.effective.final.I)


def _series(run: ScenarioRun, engine: str, name: str, control: bool = False):
    res = (run.controls if control else {"mb": run.mb, "effective": run.effective})[engine]
    return res.series("t"), res.series(name)


def measure(run: ScenarioRun, engine: str) -> Diagnostics:
    """Reduce one engine's output to the scenario's observables."""
    sc = run.scenario
    d = Diagnostics()
    if sc.kind == "chain":
        _measure_chain(run, d)
        return d
    x = run.x
    I_init = run.initial_intensity
    I_fin = _final_intensity(run, engine)
    want = set(sc.diagnostics)
    if "compression" in want:
        lay = sc.medium.layers[0]
        inside = (x >= lay.x_start) & (x < lay.x_end)
        prof = _profile_at(run, engine, sc.meta["t_inside"])
        d.compression = second_moment_width(x[inside], prof[inside]) / second_moment_width(x, I_init)
        d.extra["compression_fwhm"] = fwhm(x[inside], prof[inside]) / fwhm(x, I_init)
    if "delay" in want and engine in run.controls:
        x_det = sc.meta["x_detector"]
        t_m = crossing_time(*_series(run, engine, "x_peak"), x_det)
        t_c = crossing_time(*_series(run, engine, "x_peak", control=True), x_det)
        d.delay = t_m - t_c
        lay = sc.medium.layers[0]
        d.extra["delay_expected"] = lay.thickness / float(sc.medium.velocity(lay, sc.t_start)) - lay.thickness / C_LIGHT
    if "restoration" in want:
        end = sc.medium.layers[-1].x_end
        out = x > end
        amp_f = np.sqrt(I_fin)
        # align centroids: the comparison is of shape, not of arrival time
        shift = np.sum(x[out] * I_fin[out]) / np.sum(I_fin[out]) - np.sum(x * I_init) / np.sum(I_init)
        ref = np.sqrt(np.interp(x - shift, x, I_init, left=0.0, right=0.0))
        d.amplitude_error = rel_l2(amp_f[out], ref[out])
        a = amp_f[out] / np.linalg.norm(amp_f[out])
        b = ref[out] / np.linalg.norm(ref[out])
        d.shape_error = rel_l2(a, b)
        d.extra["transmitted_fraction"] = float(I_fin[out].sum() / I_init.sum())
    if "peak_ratio" in want or "length_ratio" in want:
        _, p0, _ = tracked_peak(x, I_init)
        _, p1, cands = tracked_peak(x, I_fin)
        d.peak_ratio = p1 / p0
        d.candidates = cands
        d.length_ratio = second_moment_width(x, I_fin) / second_moment_width(x, I_init)
    if "asymmetry" in want:
        out = x > 0
        w = I_fin[out] / I_fin[out].sum()
        mu = np.sum(x[out] * w)
        sd = np.sqrt(np.sum((x[out] - mu) ** 2 * w))
        d.extra["skewness"] = float(np.sum(((x[out] - mu) / sd) ** 3 * w))
    if "hole_width" in want or "peak_width" in want:
        L_d = sc.meta["L_d"]
        if engine == "mb":
            # average out the bright-polariton beat; its length is at most 1/sqrt(D)
            beat = 1.0 / math.sqrt(max(lay.coupling_D for lay in sc.medium.layers))
            I_fin = gaussian_filter1d(I_fin, beat / (x[1] - x[0]))
        right = x > L_d + 1.0
        x_pk = float(x[right][np.argmax(I_fin[right])])
        d.peak_width = feature_width(x, I_fin, x_pk - 0.5 * sc.meta["expected_hole"], x_pk + 0.5 * sc.meta["expected_hole"], "peak")
        d.hole_width = feature_width(x, I_fin, L_d + 1.0, x_pk - 0.2 * sc.meta["expected_hole"], "hole")
        d.extra["peak_position"] = x_pk
    if "retrieval_efficiency" in want and engine == "mb":
        dx = x[1] - x[0]
        lay = sc.medium.layers[-1]
        t_mid = 0.5 * (sc.meta["t_stop_end"] + sc.meta["t_retrieve_start"])
        E_fwd = forward_part(run.mb.final.E, dx)
        window = (x > lay.x_end) & (x < lay.x_end + C_LIGHT * (sc.t_end - t_mid))
        d.retrieval_efficiency = float(np.sum(np.abs(E_fwd[window]) ** 2) / np.sum(I_init))
    if "reflected_energy" in want and engine == "mb":
        dx = x[1] - x[0]
        d.reflected_energy = backward_energy(run.mb.final.E, dx) / float(np.sum(I_init) * dx)
    return d


def _extrema(t: np.ndarray, y: np.ndarray, scale: float, min_width: float, prominence: float = 0.05):
    """Times of dips and of peaks; features narrower than ``min_width`` are ignored."""
    w = max(3.0, min_width / float(np.median(np.diff(t))))
    dips, _ = find_peaks(-y, prominence=prominence * scale, width=w)
    tops, _ = find_peaks(y, prominence=prominence * scale, width=w)
    return t[dips], t[tops]


def _measure_chain(run: ScenarioRun, d: Diagnostics) -> None:
    sc = run.scenario
    us = sc.meta["per_us"]
    t, y = run.chain.t_out, run.chain.I_out
    ts, ys = run.chain_static.t_out, run.chain_static.I_out
    # prominence is relative to the unmodulated output so weak dips count
    dips, tops = _extrema(t, y, ys.max(), 0.02 * sc.pulse.sigma_t)
    d.extra["notch_times_us"] = (dips / us).tolist()
    d.extra["peak_times_us"] = (tops / us).tolist()
    d.extra["notch_count"] = int(dips.size)
    d.extra["max_ratio_vs_static"] = float(y.max() / ys.max())
    d.extra["transmitted_fraction"] = float(np.trapezoid(y, t) / np.trapezoid(run.chain.inflow, run.chain.inflow_t))
    d.extra["static_delay_us"] = float(
        (np.sum(ts * ys) / np.sum(ys) - np.sum(run.chain.inflow_t * run.chain.inflow) / np.sum(run.chain.inflow)) / us
    )
    d.extra["l_abs_over_sigma_bar"] = sc.meta["l_abs_over_sigma_bar"]
    if sc.meta["signature"] == "trailing_peak":
        i_max = int(np.argmax(y))
        d.extra["trailing_peak"] = bool(dips.size > 0 and t[i_max] > dips.min() and y.max() > ys.max())
        d.peak_ratio = float(y.max() / ys.max())


def compare_engines(run: ScenarioRun) -> dict:
    """Relative L2 distance of the final MB and effective intensity profiles plus scalar gaps."""
    I_mb = run.mb.final.intensity
    I_eff = np.array(run.effective.final.I)
    out = {"final_profile_rel_l2": rel_l2(I_eff, I_mb)}
    a, b = run.diagnostics["mb"].as_dict(), run.diagnostics["effective"].as_dict()
    for k in a:
        if k in b and isinstance(a[k], float) and isinstance(b[k], float) and a[k] != 0:
            out[f"{k}_rel_diff"] = abs(b[k] - a[k]) / abs(a[k])
    return out


def defect_analytic_profile(run: ScenarioRun) -> np.ndarray:
    """Closed-form diffusionless intensity at ``t_end`` for a vacuum-defect scenario."""
    sc = run.scenario
    prot = sc.medium.protocols[sc.medium.layers[0].control]
    geom = DefectGeometry(sc.meta["L_d"], prot, sc.medium.layers[0].coupling_D, sigma_x=sc.pulse.sigma_x)
    x0 = sc.pulse.center_x0
    med, pulse = sc.medium, sc.pulse

    def I0(xx):
        return pulse.temporal_envelope(med.transit_times(x0, xx, sc.t_start)) ** 2

    return analytic_defect(I0, geom, run.x, sc.t_end)


# --- adiabaticity ----------------------------------------------------------------------


def adiabaticity_report(sc: Scenario, leakage: bool = False, dx: float | None = None) -> list[dict]:
    """Per-ramp margin ``max|dOmega/dt| / (D omega_p^2)``; optionally MB-measured leakage.

    Leakage is the growth of the share of in-medium excitation outside the
    instantaneous dark state between the start and the end of the ramp.
    """
    rows = []
    for lay in sc.medium.layers:
        prot = sc.medium.protocols[lay.control]
        p = sc.medium.params(lay, sc.t_start)
        for seg in prot.segments:
            ts = np.linspace(seg.t_start, seg.t_end, 201) if seg.t_end > seg.t_start else np.array([seg.t_start])
            rate = float(np.max(np.abs(sc.medium.rabi_rate(lay, ts))))
            rows.append(
                {
                    "layer": lay.label,
                    "t_start": seg.t_start,
                    "t_end": seg.t_end,
                    "shape": seg.shape,
                    "margin": adiabaticity_margin(rate, p),
                }
            )
    if leakage:
        if sc.kind != "grid":
            raise ConfigError("leakage needs a gridded MB scenario")
        grid = sc.grid(dx)
        solver = MBSolver(grid, sc.medium)
        state = initial_field(sc, grid)
        for row in rows:
            if row["t_end"] <= row["t_start"] or row["t_end"] > sc.t_end:
                row["leakage"] = 0.0
                continue
            if row["t_start"] > state.t:
                state = solver.run(state, row["t_start"], diag_interval=row["t_start"] - state.t).final
            before = solver.bright_fraction(state)
            state = solver.run(state, row["t_end"], diag_interval=row["t_end"] - state.t).final
            row["leakage"] = max(0.0, solver.bright_fraction(state) - before)
    return rows


def rescale(sc: Scenario, s: float) -> Scenario:
    """Scale all rates by ``s`` and all lengths and times by ``1/s``.

    ``D`` scales as ``s^2`` so that ``sqrt(D)`` is a rate. The normalized
    equations are invariant up to the dispersion of the free-photon term,
    so dimensionless observables should not change.
    """
    layers = tuple(
        replace(
            lay,
            x_start=lay.x_start / s,
            x_end=lay.x_end / s,
            coupling_D=lay.coupling_D * s**2,
            gamma_e=lay.gamma_e * s,
            gamma_m=lay.gamma_m * s,
            delta_e=lay.delta_e * s,
            delta_R=lay.delta_R * s,
        )
        for lay in sc.medium.layers
    )
    prots = {}
    for key, prot in sc.medium.protocols.items():
        k = s if prot.quantity == "rabi" else 1.0
        segs = tuple(replace(g, t_start=g.t_start / s, t_end=g.t_end / s, start=g.start * k, end=g.end * k) for g in prot.segments)
        prots[key] = ModulationProtocol(segs, prot.quantity)
    med = MediumProfile(layers, prots, sc.medium.interface_smoothing / s)
    meta = dict(sc.meta)
    for key in ("t_inside", "x_detector", "L_d", "tau", "tau_s", "sigma_bar_x", "expected_hole", "expected_peak", "t_stop_end", "t_retrieve_start"):
        if key in meta:
            meta[key] = meta[key] / s
    return replace(
        sc,
        medium=med,
        pulse=replace(sc.pulse, center_x0=sc.pulse.center_x0 / s, sigma_t=sc.pulse.sigma_t / s),
        t_start=sc.t_start / s,
        t_end=sc.t_end / s,
        x_min=sc.x_min / s,
        x_max=sc.x_max / s,
        dt=None if sc.dt is None else sc.dt / s,
        sponge_width=sc.sponge_width / s,
        snapshot_times=tuple(t / s for t in sc.snapshot_times),
        diag_interval=None if sc.diag_interval is None else sc.diag_interval / s,
        meta=meta,
    )


# --- transmission window ---------------------------------------------------------------


def window_scan(
    p: EitParams,
    length: float,
    n_omega: int = 41,
    span: float = 3.0,
    dx: float = 0.5,
    dt: float | None = None,
    tol: float = 1e-2,
) -> tuple[TransmissionScan, float]:
    """MB-scanned ``|T(omega)|^2`` of a slab and the closed-form window width.

    Frequencies cover ``+-span`` closed-form widths around resonance. The
    grid is sized for the scan pulse, both probes and two sponges. Spin
    coherence left behind off resonance drains slowly when ``gamma_m = 0``,
    so the residual-energy tolerance is looser than the scan default.
    """
    width = transmission_window(p, length)
    omega = p.omega_p + np.linspace(-span * width, span * width, n_omega)
    sigma_t = 2.0 / (span * width)
    sponge = 4.0 * sigma_t
    left = (2.0 * SUPPORT_SIGMAS + 2.0) * sigma_t + sponge
    right = length + SUPPORT_SIGMAS * sigma_t + sponge
    n = 1 << math.ceil(math.log2((left + right) / dx))
    x_min = -left
    grid = Grid(x_min, x_min + n * dx, n, dt or min(0.5, 0.05 / math.sqrt(p.coupling_D)), sponge)
    lay = Layer(0.0, length, p.coupling_D, gamma_e=p.gamma_e, gamma_m=p.gamma_m, delta_e=p.delta_e, delta_R=p.delta_R)
    med = MediumProfile((lay,), {"default": ModulationProtocol.constant(p.omega_c_rabi)})
    return transmission_scan(grid, med, omega, tol=tol), width
