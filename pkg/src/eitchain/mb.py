"""Split-step spectral integrator for the normalized MSVEA Maxwell-Bloch system.

The field envelope is stored with the resonant spatial carrier ``exp(i k_p x)``
factored out, so an on-resonance forward pulse is a real positive Gaussian.
The photonic kinetic term then becomes the multiplier
``exp(-i nu(k) dt)`` with ``nu(k) = (f(k + k_p) - omega_p^2) / (2 omega_p)``
applied in Fourier space; backward waves live near ``k = -2 k_p``.

Each step is Strang-split: half kinetic, exact 3x3 local propagator per cell
(control field sampled at the midpoint time), half kinetic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.linalg import expm
from scipy.optimize import curve_fit

from .dispersion import C_LIGHT, ERF, DispersionSubstitute, f_of_k, vacuum_wavevector
from .errors import CflViolation, ConfigError, NonConverged, NumericalFailure, PulseOverlapsMedium
from .medium import MediumProfile, PulseSpec

log = logging.getLogger(__name__)

K_P = 1.0
SUPPORT_SIGMAS = 4.0


@dataclass(frozen=True)
class Grid:
    """Periodic 1D grid with optional absorbing sponges at both ends."""

    x_min: float
    x_max: float
    n_points: int
    dt: float
    sponge_width: float = 0.0
    sponge_strength: float = 0.05

    def __post_init__(self):
        if self.x_max <= self.x_min:
            raise ConfigError("x_max must exceed x_min")
        if self.n_points < 8 or self.n_points & (self.n_points - 1):
            raise ConfigError(f"n_points must be a power of two, got {self.n_points}")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.sponge_width < 0 or 2 * self.sponge_width >= self.x_max - self.x_min:
            raise ConfigError("sponge_width must be >= 0 and fit twice in the domain")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n_points)

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * sfft.fftfreq(self.n_points, self.dx)

    def resolves(self, k_max: float) -> bool:
        """True if ``dx <= 2 pi / (8 k_max)``."""
        return self.dx <= 2.0 * np.pi / (8.0 * k_max)

    def sponge(self) -> np.ndarray:
        """Absorption rate profile: ``sin^2`` ramps over ``sponge_width`` at both ends."""
        s = np.zeros(self.n_points)
        if self.sponge_width == 0:
            return s
        x = self.x
        left = (self.x_min + self.sponge_width - x) / self.sponge_width
        right = (x - (self.x_max - self.sponge_width)) / self.sponge_width
        ramp = np.clip(np.maximum(left, right), 0.0, 1.0)
        return self.sponge_strength * np.sin(0.5 * np.pi * ramp) ** 2

    def index(self, x: float) -> int:
        return int(round((x - self.x_min) / self.dx)) % self.n_points


@dataclass(frozen=True)
class FieldState:
    """Immutable snapshot of the three envelopes at time ``t``."""

    E: np.ndarray
    rho_eg: np.ndarray
    rho_mg: np.ndarray
    t: float
    dx: float

    def __post_init__(self):
        for name in ("E", "rho_eg", "rho_mg"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.E.shape == self.rho_eg.shape == self.rho_mg.shape):
            raise ConfigError("field arrays must have equal length")

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.E) ** 2

    @property
    def w_em(self) -> float:
        return float(np.sum(np.abs(self.E) ** 2) * self.dx)

    @property
    def w_at(self) -> float:
        return float(np.sum(np.abs(self.rho_eg) ** 2) * self.dx)

    @property
    def w_spin(self) -> float:
        return float(np.sum(np.abs(self.rho_mg) ** 2) * self.dx)

    @property
    def n_pol(self) -> float:
        """Total polariton number ``int (|E|^2 + |rho_eg|^2 + |rho_mg|^2) dx``."""
        return self.w_em + self.w_at + self.w_spin


def _carrier_offset(pulse: PulseSpec, sub: DispersionSubstitute) -> float:
    k0 = vacuum_wavevector(sub, 1.0 + pulse.detuning)
    return pulse.direction * k0 - K_P


def init_state(
    grid: Grid,
    pulse: PulseSpec,
    medium: MediumProfile | None = None,
    sub: DispersionSubstitute = ERF,
    t0: float = 0.0,
) -> FieldState:
    """Launch a Gaussian pulse in vacuum; coherences start at zero.

    Raises ``PulseOverlapsMedium`` if any layer lies within four vacuum
    widths of the pulse centre.
    """
    if medium is not None:
        a = pulse.center_x0 - SUPPORT_SIGMAS * pulse.sigma_x
        b = pulse.center_x0 + SUPPORT_SIGMAS * pulse.sigma_x
        hit = medium.overlaps(a, b)
        if hit:
            names = ", ".join(lay.label for lay in hit)
            raise PulseOverlapsMedium(f"pulse support [{a:g}, {b:g}] overlaps layer(s) {names}")
    x = grid.x
    env = pulse.temporal_envelope((x - pulse.center_x0) / C_LIGHT)
    E = env * np.exp(1j * _carrier_offset(pulse, sub) * x)
    zeros = np.zeros(grid.n_points, dtype=complex)
    return FieldState(E, zeros, zeros, t0, grid.dx)


def init_steady_state(grid: Grid, medium: MediumProfile, pulse: PulseSpec, t0: float = 0.0) -> FieldState:
    """Load a resonant pulse already spread over a static chain.

    The field at ``x`` is the temporal envelope evaluated at the static
    transit time from ``pulse.center_x0`` to ``x``; inside layers the atoms
    carry the matching dark-state spin coherence ``rho_mg = 2 sqrt(D) E / Omega_c``
    and the first-order optical coherence ``rho_eg = (2i/Omega_c) d(rho_mg)/dt``
    of a packet drifting at the local group velocity.
    This is the state a vacuum launch relaxes to once the pulse has entered
    the chain, without paying for the vacuum approach.
    """
    if pulse.detuning != 0 or pulse.direction != 1:
        raise ConfigError("steady-state launch supports forward resonant pulses only")
    x = grid.x
    v = medium.velocity_profile(x, t0)
    if np.any(v <= 0):
        raise ConfigError("steady-state launch needs a nonzero control field in every layer")
    tau = medium.transit_times(pulse.center_x0, x, t0)
    E = pulse.temporal_envelope(tau).astype(complex)
    D = medium.coupling_profile(x)
    idx = medium.nearest_layer(x)
    rho_mg = np.zeros_like(E)
    om = np.zeros(grid.n_points)
    for i, lay in enumerate(medium.layers):
        cells = idx == i
        om[cells] = float(medium.rabi(lay, t0))
        rho_mg[cells] = 2.0 * np.sqrt(D[cells]) * E[cells] / om[cells]
    drift = -v * np.gradient(rho_mg, grid.dx)
    rho_eg = np.where(D > 0, 2j * drift / np.where(om > 0, om, 1.0), 0.0)
    return FieldState(E, rho_eg, rho_mg, t0, grid.dx)


def time_reverse(state: FieldState) -> FieldState:
    """Complex conjugation in the lab frame, re-expressed in the carrier frame."""
    x = np.arange(state.E.size) * state.dx
    phase = np.exp(-2j * K_P * x)
    return FieldState(
        np.conj(state.E) * phase,
        np.conj(state.rho_eg) * phase,
        np.conj(state.rho_mg) * phase,
        state.t,
        state.dx,
    )


def default_dt(medium: MediumProfile, t_span: tuple[float, float] | None = None) -> float:
    """``min(0.1/Omega_max, 0.05/sqrt(D_max), tau_min/50)`` in normalized units."""
    cands = [0.5]
    for lay in medium.layers:
        prot = medium.protocols[lay.control]
        ts = np.array(prot.breakpoints() + ([] if t_span is None else list(t_span)))
        om_max = float(np.max(medium.rabi(lay, ts)))
        if om_max > 0:
            cands.append(0.1 / om_max)
        if lay.coupling_D > 0:
            cands.append(0.05 / np.sqrt(lay.coupling_D))
        cands.append(prot.min_ramp_time() / 50.0)
    return float(min(cands))


@dataclass
class RunResult:
    """Snapshots plus scalar diagnostics time series of one MB run."""

    snapshots: list[FieldState]
    diagnostics: np.ndarray
    final: FieldState
    probes: np.ndarray | None = None
    probe_times: np.ndarray | None = None

    DIAG_COLUMNS = ("t", "N_pol", "x_peak", "I_peak", "W_em", "W_at", "W_spin")

    def series(self, name: str) -> np.ndarray:
        return self.diagnostics[:, self.DIAG_COLUMNS.index(name)]


def peak_position(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Location and height of the maximum of ``y`` by parabolic interpolation."""
    i = int(np.argmax(y))
    if 0 < i < y.size - 1:
        ym, y0, yp = y[i - 1], y[i], y[i + 1]
        denom = ym - 2 * y0 + yp
        if denom < 0:
            off = 0.5 * (ym - yp) / denom
            dx = x[1] - x[0]
            return float(x[i] + off * dx), float(y0 - 0.25 * (ym - yp) * off)
    return float(x[i]), float(y[i])


class MBSolver:
    """Time stepper for one grid, medium and dispersion substitute."""

    def __init__(
        self,
        grid: Grid,
        medium: MediumProfile,
        sub: DispersionSubstitute = ERF,
        check_nan_every: int = 256,
    ):
        self.grid = grid
        self.medium = medium
        self.sub = sub
        self.check_nan_every = check_nan_every
        x = grid.x
        self.nu = (f_of_k(sub, grid.k + K_P) - 1.0) / 2.0
        self._phase_cache: dict[float, np.ndarray] = {}

        D = medium.coupling_profile(x)
        idx = medium.nearest_layer(x)
        self.med = np.flatnonzero(D > 0)
        self.sponge = grid.sponge()
        if np.any(self.sponge[self.med] > 0):
            raise ConfigError("absorbing sponge overlaps an EIT layer")
        self._sponge_cells = np.flatnonzero(self.sponge > 0)
        # cells sharing a layer and a coupling value share a propagator
        keys = np.stack([idx[self.med].astype(float), D[self.med]], axis=1)
        uniq, self._group_of_cell = np.unique(keys, axis=0, return_inverse=True)
        self._group_of_cell = self._group_of_cell.reshape(-1)
        self._groups = [(int(layer), float(d)) for layer, d in uniq]
        self._U_key = None
        self._U_cells = None
        self._tmp = np.empty(self.med.size, dtype=complex)
        self._med_slice = None
        if self.med.size and self.med[-1] - self.med[0] + 1 == self.med.size:
            self._med_slice = slice(int(self.med[0]), int(self.med[-1]) + 1)

    # --- stability -------------------------------------------------------------------

    def max_local_frequency(self, t: float = 0.0) -> float:
        best = 0.0
        for lay in self.medium.layers:
            prot = self.medium.protocols[lay.control]
            ts = np.array(prot.breakpoints() + [t])
            om = float(np.max(self.medium.rabi(lay, ts)))
            best = max(best, np.sqrt(lay.coupling_D + (om / 2) ** 2) + lay.gamma_e / 2 + abs(lay.delta_e))
        return best

    def check_dt(self, dt: float) -> None:
        """Require at most one radian of phase per step from either split operator."""
        nu_max = float(np.max(np.abs(self.nu)))
        bound = 1.0 / max(nu_max, self.max_local_frequency(), 1e-300)
        if dt > bound:
            raise CflViolation(
                f"dt={dt:g} exceeds the splitting bound {bound:g} "
                f"(max kinetic frequency {nu_max:g})"
            )

    # --- operators -------------------------------------------------------------------

    def _phase(self, tau: float) -> np.ndarray:
        ph = self._phase_cache.get(tau)
        if ph is None:
            ph = np.exp(-1j * self.nu * tau)
            self._phase_cache[tau] = ph
        return ph

    def _kinetic(self, E: np.ndarray, tau: float) -> np.ndarray:
        spec = sfft.fft(E)
        spec *= self._phase(tau)
        return sfft.ifft(spec, overwrite_x=True)

    def local_hamiltonians(self, t: float) -> np.ndarray:
        """Stack of local 3x3 matrices (rotating frame) for each propagator group."""
        H = np.zeros((len(self._groups), 3, 3), dtype=complex)
        for n, (li, D) in enumerate(self._groups):
            lay = self.medium.layers[li]
            half = float(self.medium.rabi(lay, t)) / 2
            g = np.sqrt(D)
            H[n] = [
                [0.0, -g, 0.0],
                [-g, lay.delta_e - 0.5j * lay.gamma_e, half],
                [0.0, half, lay.delta_R - 0.5j * lay.gamma_m],
            ]
        return H

    def _local_cells(self, t: float, dt: float) -> np.ndarray:
        key = (dt,) + tuple(float(self.medium.rabi(lay, t)) for lay in self.medium.layers)
        if key != self._U_key:
            U = expm(-1j * dt * self.local_hamiltonians(t)) if self._groups else np.zeros((0, 3, 3))
            if len(self._groups) == 1:
                self._U_cells = U[0]
            else:
                self._U_cells = np.moveaxis(U[self._group_of_cell], 0, -1)
            self._U_key = key
        return self._U_cells

    def _local(self, E, a, b, t_mid: float, dt: float):
        if self.med.size:
            U = self._local_cells(t_mid, dt)
            sel = self._med_slice if self._med_slice is not None else self.med
            e, r1, r2 = E[sel].copy(), a[sel].copy(), b[sel].copy()
            tmp = self._tmp
            for row, dst in enumerate((E, a, b)):
                np.multiply(U[row, 0], e, out=tmp)
                tmp += U[row, 1] * r1
                tmp += U[row, 2] * r2
                dst[sel] = tmp
        if self._sponge_cells.size:
            E[self._sponge_cells] *= np.exp(-self.sponge[self._sponge_cells] * dt)

    # --- stepping --------------------------------------------------------------------

    def step(self, state: FieldState, dt: float | None = None) -> FieldState:
        """One Strang step: kinetic(dt/2), local(dt), kinetic(dt/2)."""
        return self.advance(state, 1, dt)

    def advance(self, state: FieldState, n_steps: int, dt: float | None = None, probes=None) -> FieldState:
        """``n_steps`` Strang steps with adjacent kinetic half steps merged.

        If ``probes`` (a list) is given, ``E`` at ``probes[0]`` (cell indices)
        is appended to ``probes[1]`` after every full step; merging is then
        disabled so recorded values are synchronized.
        """
        dt = self.grid.dt if dt is None else dt
        if n_steps <= 0:
            return state
        E = np.array(state.E)
        a = np.array(state.rho_eg)
        b = np.array(state.rho_mg)
        t = state.t
        merge = probes is None
        E = self._kinetic(E, 0.5 * dt)
        for i in range(n_steps):
            self._local(E, a, b, t + (i + 0.5) * dt, dt)
            if merge and i < n_steps - 1:
                E = self._kinetic(E, dt)
            else:
                E = self._kinetic(E, 0.5 * dt)
                if not merge:
                    probes[1].append(E[probes[0]].copy())
                    if i < n_steps - 1:
                        E = self._kinetic(E, 0.5 * dt)
            if self.check_nan_every and (i + 1) % self.check_nan_every == 0 and not np.isfinite(E).all():
                raise NumericalFailure(f"non-finite field at t={t + (i + 1) * dt:g}", snapshot=state)
        out = FieldState(E, a, b, t + n_steps * dt, state.dx)
        if not (np.isfinite(E).all() and np.isfinite(a).all() and np.isfinite(b).all()):
            raise NumericalFailure(f"non-finite field at t={out.t:g}", snapshot=state)
        return out

    def diagnostics_row(self, state: FieldState) -> list[float]:
        x_pk, i_pk = peak_position(self.grid.x, state.intensity)
        return [state.t, state.n_pol, x_pk, i_pk, state.w_em, state.w_at, state.w_spin]

    def run(
        self,
        state: FieldState,
        t_max: float,
        snapshot_times=(),
        diag_interval: float | None = None,
        probe_cells=None,
    ) -> RunResult:
        """Integrate to ``t_max``, emitting snapshots and a diagnostics series.

        Event times are rounded to the nearest multiple of ``dt`` from the
        initial time.
        """
        if t_max <= state.t:
            raise ConfigError("t_max must exceed the initial time")
        dt = self.grid.dt
        self.check_dt(dt)
        n_total = int(round((t_max - state.t) / dt))
        if diag_interval is None:
            diag_interval = max(dt, (t_max - state.t) / 400)
        diag_every = max(1, int(round(diag_interval / dt)))
        snap_steps = sorted({int(round((ts - state.t) / dt)) for ts in snapshot_times if state.t <= ts <= t_max})
        events = sorted(set(range(0, n_total + 1, diag_every)) | set(snap_steps) | {n_total})
        snapshots, rows = [], []
        probes = None if probe_cells is None else (np.asarray(probe_cells), [])
        done = 0
        for ev in events:
            state = self.advance(state, ev - done, dt, probes)
            done = ev
            if ev % diag_every == 0 or ev == n_total:
                rows.append(self.diagnostics_row(state))
            if ev in snap_steps:
                snapshots.append(state)
        result = RunResult(snapshots, np.array(rows), state)
        if probes is not None:
            result.probes = np.array(probes[1])
            result.probe_times = state.t - dt * n_total + dt * np.arange(1, len(probes[1]) + 1)
        return result

    # --- analysis --------------------------------------------------------------------

    def bright_fraction(self, state: FieldState) -> float:
        """Share of the in-medium excitation outside the local dark state."""
        if not self.med.size:
            return 0.0
        D = self.medium.coupling_profile(self.grid.x)[self.med]
        idx = self.medium.nearest_layer(self.grid.x)[self.med]
        om = np.array([float(self.medium.rabi(lay, state.t)) for lay in self.medium.layers])[idx]
        norm = np.sqrt((om / 2) ** 2 + D)
        with np.errstate(invalid="ignore", divide="ignore"):
            dE, dm = np.where(norm > 0, (om / 2) / norm, 0.0), np.where(norm > 0, np.sqrt(D) / norm, 0.0)
        e, r1, r2 = state.E[self.med], state.rho_eg[self.med], state.rho_mg[self.med]
        total = np.sum(np.abs(e) ** 2 + np.abs(r1) ** 2 + np.abs(r2) ** 2)
        dark = np.sum(np.abs(dE * e + dm * r2) ** 2)
        return float((total - dark) / total) if total > 0 else 0.0


@dataclass
class TransmissionScan:
    omega: np.ndarray
    transmission: np.ndarray
    reflection: np.ndarray
    residual: float = 0.0
    meta: dict = field(default_factory=dict)

    def fit_window(self) -> tuple[float, float, float]:
        """Least-squares Gaussian ``A exp(-(omega - omega_0)^2 / (2 w^2))`` to ``|T|^2``.

        Only the central lobe is fitted: the points between the first local
        minima on either side of the maximum. Outside the absorption lines the
        slab turns transparent again, which is not part of the window.
        Returns ``(A, omega_0, w)``; ``w`` compares with ``transmission_window``.
        """
        T = self.transmission
        i = int(np.argmax(T))
        lo = i
        while lo > 0 and T[lo - 1] < T[lo]:
            lo -= 1
        hi = i
        while hi < T.size - 1 and T[hi + 1] < T[hi]:
            hi += 1
        om, T = self.omega[lo : hi + 1], T[lo : hi + 1]
        if om.size < 4:
            raise ConfigError("central transmission lobe has fewer than four points")
        half = np.flatnonzero(T >= 0.5 * T.max())
        guess = (T.max(), self.omega[i], max(0.5 * np.ptp(om[half]), 1e-6))
        (a, w0, w), _ = curve_fit(lambda o, a, w0, w: a * np.exp(-((o - w0) ** 2) / (2.0 * w**2)), om, T, p0=guess)
        return float(a), float(w0), float(abs(w))


def transmission_scan(
    grid: Grid,
    medium: MediumProfile,
    omega_list,
    sub: DispersionSubstitute = ERF,
    t_max: float | None = None,
    tol: float = 1e-4,
) -> TransmissionScan:
    """Intensity transmission and reflection spectra of a static medium.

    A short resonant pulse whose spectrum covers ``omega_list`` is sent from
    the left; the field is recorded at one probe point on each side of the
    medium and Fourier-analysed against an identical vacuum run. The run
    continues until the energy left in the domain drops below ``tol`` of the
    launched energy; ``NonConverged`` is raised otherwise.
    """
    if not medium.is_static():
        raise ConfigError("transmission_scan needs a static medium")
    if not medium.layers:
        raise ConfigError("transmission_scan needs at least one layer")
    omega = np.atleast_1d(np.asarray(omega_list, dtype=float))
    nu = omega - 1.0
    span = max(float(np.max(np.abs(nu))), 1e-3)
    sigma_t = 2.0 / span
    first = medium.layers[0].x_start
    last = medium.layers[-1].x_end
    x_R = first - 2.0 * grid.dx - 1.0
    x_src = x_R - (SUPPORT_SIGMAS + 1.0) * sigma_t
    x_T = last + 2.0 * grid.dx + 1.0
    if x_src - SUPPORT_SIGMAS * sigma_t < grid.x_min + grid.sponge_width or x_T > grid.x_max - grid.sponge_width:
        raise ConfigError("grid too small for the scan pulse and probes")
    pulse = PulseSpec(x_src, sigma_t)
    probes = [grid.index(x_R), grid.index(x_T)]
    if t_max is None:
        t_max = 40.0 * (last - x_src + SUPPORT_SIGMAS * sigma_t)

    ref_solver = MBSolver(grid, MediumProfile.vacuum(), sub)
    state0 = init_state(grid, pulse, medium, sub)
    ref_t = (x_T - x_src + 2 * SUPPORT_SIGMAS * sigma_t) / C_LIGHT
    ref = ref_solver.run(state0, ref_t, diag_interval=ref_t, probe_cells=probes)

    solver = MBSolver(grid, medium, sub)
    e0 = state0.n_pol
    chunk = max(ref_t, 20.0 * grid.dt)
    state, series, times = state0, [], []
    residual = 1.0
    while state.t < t_max:
        res = solver.run(state, min(state.t + chunk, t_max), diag_interval=chunk, probe_cells=probes)
        series.append(res.probes)
        times.append(res.probe_times)
        state = res.final
        residual = state.n_pol / e0
        if residual < tol:
            break
    if residual >= tol:
        raise NonConverged(f"{residual:.2e} of the pulse energy still in the domain at t={state.t:g}")
    rec = np.concatenate(series)
    t_rec = np.concatenate(times)

    def spectrum(sig, tt):
        return np.exp(1j * np.outer(nu, tt)) @ sig * grid.dt

    inc_T = spectrum(ref.probes[:, 1], ref.probe_times)
    inc_R = spectrum(ref.probes[:, 0], ref.probe_times)
    out_T = spectrum(rec[:, 1], t_rec)
    n_ref = ref.probes.shape[0]
    refl = rec[:, 0].copy()
    refl[:n_ref] -= ref.probes[:, 0]
    out_R = spectrum(refl, t_rec)
    return TransmissionScan(
        omega,
        np.abs(out_T / inc_T) ** 2,
        np.abs(out_R / inc_R) ** 2,
        residual,
        {"sigma_t": sigma_t, "t_end": state.t, "x_probe_R": x_R, "x_probe_T": x_T},
    )
