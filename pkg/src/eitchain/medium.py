"""Layered media, control-field schedules and probe pulses.

Shared by the Maxwell-Bloch and effective-flow engines. Positions are in
units of ``1/k_p``, times in ``1/omega_p``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dispersion import C_LIGHT, EitParams, control_for_velocity, group_velocity_resonance
from .errors import ConfigError

SHAPES = ("hold", "linear", "raised_cosine")
QUANTITIES = ("rabi", "group_velocity")


@dataclass(frozen=True)
class Segment:
    """One piece of a schedule: ``start -> end`` between ``t_start`` and ``t_end``."""

    t_start: float
    t_end: float
    start: float
    end: float
    shape: str = "raised_cosine"

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown ramp shape {self.shape!r}")
        if self.t_end < self.t_start:
            raise ConfigError(f"segment ends before it starts ({self.t_start} > {self.t_end})")
        if self.shape == "hold" and self.start != self.end:
            raise ConfigError("a hold segment must keep a constant value")

    def _u(self, t):
        span = self.t_end - self.t_start
        return np.clip((t - self.t_start) / span, 0.0, 1.0) if span > 0 else np.ones_like(t)

    def value(self, t):
        if self.shape == "hold":
            return np.full_like(t, self.start, dtype=float)
        u = self._u(t)
        if self.shape == "raised_cosine":
            u = 0.5 * (1.0 - np.cos(np.pi * u))
        return self.start + (self.end - self.start) * u

    def rate(self, t):
        span = self.t_end - self.t_start
        if self.shape == "hold" or span == 0:
            return np.zeros_like(t, dtype=float)
        inside = (t >= self.t_start) & (t <= self.t_end)
        if self.shape == "linear":
            r = np.full_like(t, (self.end - self.start) / span, dtype=float)
        else:
            r = (self.end - self.start) * 0.5 * np.pi / span * np.sin(np.pi * self._u(t))
        return np.where(inside, r, 0.0)

    def max_rate(self) -> float:
        span = self.t_end - self.t_start
        if self.shape == "hold" or span == 0:
            return 0.0
        scale = np.pi / 2 if self.shape == "raised_cosine" else 1.0
        return scale * abs(self.end - self.start) / span


@dataclass(frozen=True)
class ModulationProtocol:
    """Piecewise schedule of the control Rabi frequency or of the group velocity.

    Before the first segment the value is the first start value; after the
    last segment it is the last end value.
    """

    segments: tuple[Segment, ...]
    quantity: str = "rabi"

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.quantity not in QUANTITIES:
            raise ConfigError(f"unknown protocol quantity {self.quantity!r}")
        if not self.segments:
            raise ConfigError("a protocol needs at least one segment")
        for a, b in zip(self.segments, self.segments[1:]):
            if not np.isclose(a.t_end, b.t_start, rtol=0, atol=1e-9 * max(1.0, abs(a.t_end))):
                raise ConfigError(f"segments not contiguous: {a.t_end} != {b.t_start}")
            if not np.isclose(a.end, b.start, rtol=1e-12, atol=0):
                raise ConfigError(f"schedule jumps at t={a.t_end}: {a.end} -> {b.start}")
        for s in self.segments:
            if s.start < 0 or s.end < 0:
                raise ConfigError("schedule values must be >= 0")
            if self.quantity == "group_velocity" and max(s.start, s.end) > C_LIGHT:
                raise ConfigError("group velocity above c")

    @classmethod
    def constant(cls, value: float, quantity: str = "rabi") -> "ModulationProtocol":
        return cls((Segment(0.0, 0.0, value, value, "hold"),), quantity)

    @classmethod
    def ramps(
        cls,
        levels: list[float],
        times: list[float],
        ramp_time: float,
        shape: str = "raised_cosine",
        quantity: str = "rabi",
    ) -> "ModulationProtocol":
        """Holds joined by ramps: ramp ``i`` goes ``levels[i] -> levels[i+1]`` starting at ``times[i]``."""
        if len(times) != len(levels) - 1:
            raise ConfigError("need one ramp start time per level change")
        segs: list[Segment] = []
        t = times[0]
        for i, t0 in enumerate(times):
            if t0 < t:
                raise ConfigError("ramps overlap")
            if t0 > t:
                segs.append(Segment(t, t0, levels[i], levels[i], "hold"))
            segs.append(Segment(t0, t0 + ramp_time, levels[i], levels[i + 1], shape))
            t = t0 + ramp_time
        return cls(tuple(segs), quantity)

    @property
    def is_static(self) -> bool:
        return all(s.shape == "hold" or s.start == s.end for s in self.segments)

    def _scalar_segment(self, t: float) -> Segment | None:
        seg = None
        for s in self.segments:
            if t >= s.t_start:
                seg = s
            else:
                break
        return seg

    def value(self, t):
        if isinstance(t, (float, int)):
            seg = self._scalar_segment(t)
            if seg is None:
                return float(self.segments[0].start)
            if seg.shape == "hold" or t >= seg.t_end:
                return float(seg.end)
            return float(seg.value(np.float64(t)))
        t_arr = np.asarray(t, dtype=float)
        out = np.full(t_arr.shape, self.segments[0].start, dtype=float)
        for s in self.segments:
            out = np.where(t_arr >= s.t_start, s.value(t_arr), out)
        return float(out) if out.ndim == 0 else out

    def rate(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = np.zeros(t_arr.shape)
        for s in self.segments:
            out = out + np.where((t_arr >= s.t_start) & (t_arr < s.t_end), s.rate(t_arr), 0.0)
        return float(out) if out.ndim == 0 else out

    def breakpoints(self) -> list[float]:
        pts = sorted({s.t_start for s in self.segments} | {s.t_end for s in self.segments})
        return pts

    def ramp_segments(self) -> list[Segment]:
        return [s for s in self.segments if s.shape != "hold" and s.start != s.end]

    def min_ramp_time(self) -> float:
        spans = [s.t_end - s.t_start for s in self.ramp_segments() if s.t_end > s.t_start]
        return min(spans) if spans else float("inf")


@dataclass(frozen=True)
class Layer:
    """A homogeneous EIT slab ``[x_start, x_end)`` driven by the named control schedule."""

    x_start: float
    x_end: float
    coupling_D: float
    control: str = "default"
    gamma_e: float = 0.0
    gamma_m: float = 0.0
    delta_e: float = 0.0
    delta_R: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.x_end <= self.x_start:
            raise ConfigError(f"layer {self.label} has non-positive thickness")
        if self.coupling_D < 0:
            raise ConfigError(f"layer {self.label} has negative coupling D")

    @property
    def label(self) -> str:
        return self.name or f"[{self.x_start:g}, {self.x_end:g})"

    @property
    def thickness(self) -> float:
        return self.x_end - self.x_start


@dataclass(frozen=True)
class MediumProfile:
    """Ordered, non-overlapping EIT layers in vacuum plus their control schedules."""

    layers: tuple[Layer, ...]
    protocols: dict = field(default_factory=dict)
    interface_smoothing: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        for a, b in zip(self.layers, self.layers[1:]):
            if b.x_start < a.x_end:
                raise ConfigError(f"layers {a.label} and {b.label} overlap or are out of order")
        for lay in self.layers:
            if lay.control not in self.protocols:
                raise ConfigError(f"layer {lay.label} refers to unknown control schedule {lay.control!r}")
        if self.interface_smoothing < 0:
            raise ConfigError("interface_smoothing must be >= 0")

    @classmethod
    def vacuum(cls) -> "MediumProfile":
        return cls((), {})

    # per-layer schedules

    def rabi(self, layer: Layer, t):
        prot = self.protocols[layer.control]
        val = prot.value(t)
        if prot.quantity == "rabi":
            return val
        return control_for_velocity(np.minimum(val, C_LIGHT * (1 - 1e-15)), layer.coupling_D)

    def rabi_rate(self, layer: Layer, t):
        prot = self.protocols[layer.control]
        rate = prot.rate(t)
        if prot.quantity == "rabi":
            return rate
        v = np.asarray(prot.value(t), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            dOm_dv = np.sqrt(layer.coupling_D) / ((1.0 - v) ** 1.5 * np.sqrt(v))
        return np.where(rate == 0, 0.0, rate * dOm_dv)

    def velocity(self, layer: Layer, t):
        prot = self.protocols[layer.control]
        if prot.quantity == "group_velocity":
            return prot.value(t)
        om = np.asarray(prot.value(t), dtype=float)
        with np.errstate(divide="ignore"):
            v = C_LIGHT / (1.0 + layer.coupling_D / (om / 2) ** 2)
        v = np.where(om == 0, 0.0 if layer.coupling_D > 0 else C_LIGHT, v)
        return float(v) if v.ndim == 0 else v

    def params(self, layer: Layer, t: float) -> EitParams:
        return EitParams(
            coupling_D=layer.coupling_D,
            omega_c_rabi=float(self.rabi(layer, t)),
            gamma_e=layer.gamma_e,
            gamma_m=layer.gamma_m,
            delta_e=layer.delta_e,
            delta_R=layer.delta_R,
        )

    # spatial maps

    def layer_index(self, x) -> np.ndarray:
        """Index of the layer containing each ``x`` (``-1`` in vacuum)."""
        x = np.asarray(x, dtype=float)
        idx = np.full(x.shape, -1, dtype=int)
        for i, lay in enumerate(self.layers):
            idx[(x >= lay.x_start) & (x < lay.x_end)] = i
        return idx

    def weight(self, x) -> np.ndarray:
        """Fractional filling in ``[0, 1]`` of each point by its layer (smoothed edges)."""
        x = np.asarray(x, dtype=float)
        w = np.zeros(x.shape)
        s = self.interface_smoothing
        for lay in self.layers:
            if s == 0:
                w = np.maximum(w, ((x >= lay.x_start) & (x < lay.x_end)).astype(float))
                continue
            rise = np.clip((x - lay.x_start) / s + 0.5, 0.0, 1.0)
            fall = np.clip((lay.x_end - x) / s + 0.5, 0.0, 1.0)
            w = np.maximum(w, 0.5 * (1 - np.cos(np.pi * rise)) * 0.5 * (1 - np.cos(np.pi * fall)))
        return w

    def nearest_layer(self, x) -> np.ndarray:
        """Layer index for each point, extending layers over their smoothing margins."""
        x = np.asarray(x, dtype=float)
        idx = self.layer_index(x)
        if self.interface_smoothing > 0:
            half = self.interface_smoothing / 2
            for i, lay in enumerate(self.layers):
                idx[(idx < 0) & (x >= lay.x_start - half) & (x < lay.x_end + half)] = i
        return idx

    def coupling_profile(self, x) -> np.ndarray:
        idx = self.nearest_layer(x)
        D = np.array([lay.coupling_D for lay in self.layers] + [0.0])[idx]
        return D * self.weight(x)

    def velocity_profile(self, x, t: float) -> np.ndarray:
        """Resonant group velocity at each point; ``c`` in vacuum."""
        idx = self.layer_index(x)
        v = np.full(np.shape(x), C_LIGHT)
        for i, lay in enumerate(self.layers):
            v[idx == i] = self.velocity(lay, t)
        return v

    def transit_time(self, a: float, b: float, t: float = 0.0) -> float:
        """Static travel time from ``a`` to ``b`` (``b > a``) with velocities frozen at ``t``."""
        sign = 1.0
        if b < a:
            a, b, sign = b, a, -1.0
        total = b - a
        tt = 0.0
        for lay in self.layers:
            lo, hi = max(a, lay.x_start), min(b, lay.x_end)
            if hi > lo:
                v = float(self.velocity(lay, t))
                if v <= 0:
                    return sign * float("inf")
                tt += (hi - lo) / v
                total -= hi - lo
        return sign * (tt + total / C_LIGHT)

    def transit_times(self, a: float, xs, t: float = 0.0) -> np.ndarray:
        """Vectorized signed static travel time from ``a`` to each point of ``xs``."""
        xs = np.asarray(xs, dtype=float)
        lo, hi = np.minimum(a, xs), np.maximum(a, xs)
        tt = (hi - lo) / C_LIGHT
        for lay in self.layers:
            overlap = np.clip(np.minimum(hi, lay.x_end) - np.maximum(lo, lay.x_start), 0.0, None)
            if not np.any(overlap > 0):
                continue
            v = float(self.velocity(lay, t))
            slow = np.inf if v <= 0 else 1.0 / v
            tt = tt + np.where(overlap > 0, overlap * (slow - 1.0 / C_LIGHT), 0.0)
        return np.sign(xs - a) * tt

    def is_static(self) -> bool:
        return all(self.protocols[lay.control].is_static for lay in self.layers)

    def overlaps(self, a: float, b: float) -> list[Layer]:
        return [lay for lay in self.layers if lay.x_start < b and lay.x_end > a]


@dataclass(frozen=True)
class PulseSpec:
    """Gaussian probe pulse.

    ``sigma_t`` is the temporal width; in vacuum the field envelope is
    ``amplitude * exp(-(x - center_x0)^2 / (2 sigma_x^2))`` with
    ``sigma_x = c sigma_t``. ``detuning`` is the carrier offset from
    ``omega_p`` (units of ``omega_p``).
    """

    center_x0: float
    sigma_t: float
    amplitude: float = 1.0
    detuning: float = 0.0
    direction: int = 1

    def __post_init__(self):
        if self.sigma_t <= 0:
            raise ConfigError("sigma_t must be positive")
        if self.direction not in (1, -1):
            raise ConfigError("direction must be +1 or -1")

    @property
    def sigma_x(self) -> float:
        return C_LIGHT * self.sigma_t

    def temporal_envelope(self, s):
        """Field amplitude as a function of the pulse-local time ``s``."""
        return self.amplitude * np.exp(-np.asarray(s) ** 2 / (2.0 * self.sigma_t**2))

    def bandwidth(self) -> float:
        """Standard deviation of the pulse power spectrum (units of omega_p)."""
        return 1.0 / (np.sqrt(2.0) * self.sigma_t)
