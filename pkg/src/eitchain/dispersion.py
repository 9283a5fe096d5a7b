"""Closed-form and 3x3 analysis of the EIT optical response.

Everything here works in normalized units: frequencies in units of the probe
carrier ``omega_p`` (default 1), wave vectors in units of ``k_p = omega_p / c``
and ``c = 1``. Time dependence is ``exp(-i omega t)``, so decay means
``Im(omega) < 0``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf, erfinv

from .errors import (
    ConfigError,
    DegenerateDenominator,
    EvanescentBranchWarning,
    NumericalDegeneracyWarning,
    ZeroControlFieldWarning,
)

C_LIGHT = 1.0
DEGENERACY_TOL = 1e-9
BRANCH_NAMES = ("lower", "dark", "upper")
COMPONENTS = ("E", "rho_eg", "rho_mg")


@dataclass(frozen=True)
class EitParams:
    """Material and dressing parameters of a three-level Lambda medium."""

    coupling_D: float
    omega_c_rabi: float = 0.0
    gamma_e: float = 0.0
    gamma_m: float = 0.0
    delta_e: float = 0.0
    delta_R: float = 0.0
    omega_p: float = 1.0

    def __post_init__(self):
        for name in ("coupling_D", "gamma_e", "gamma_m", "omega_c_rabi"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.omega_p <= 0:
            raise ConfigError("omega_p must be positive")

    @property
    def k_p(self) -> float:
        return self.omega_p / C_LIGHT

    def replace(self, **changes) -> "EitParams":
        return EitParams(**{**self.__dict__, **changes})


@dataclass(frozen=True)
class DispersionSubstitute:
    """Replacement ``f(k)`` for the ``c^2 k^2`` term of the free dispersion.

    ``shape`` is ``"erf"`` (bounded band of half-width ``half_bandwidth``
    around ``omega_p``) or ``"quadratic"`` (the plain MSVEA parabola).
    """

    shape: str = "erf"
    half_bandwidth: float = 0.5

    def __post_init__(self):
        if self.shape not in ("erf", "quadratic"):
            raise ConfigError(f"unknown dispersion shape {self.shape!r}")
        if self.half_bandwidth <= 0:
            raise ConfigError("half_bandwidth must be positive")


ERF = DispersionSubstitute("erf", 0.5)
QUADRATIC = DispersionSubstitute("quadratic")


def f_of_k(sub: DispersionSubstitute, k, omega_p: float = 1.0):
    """Evaluate the substitute dispersion ``f(k)`` (units of ``omega_p**2``)."""
    k = np.asarray(k, dtype=float)
    k_p = omega_p / C_LIGHT
    if sub.shape == "quadratic":
        return (C_LIGHT * k) ** 2
    h = sub.half_bandwidth / omega_p
    z = np.sqrt(np.pi) * (np.abs(k) - k_p) / (2.0 * h * k_p)
    return omega_p**2 * (1.0 + 2.0 * h * erf(z))


def df_dk(sub: DispersionSubstitute, k, omega_p: float = 1.0):
    k = np.asarray(k, dtype=float)
    k_p = omega_p / C_LIGHT
    if sub.shape == "quadratic":
        return 2.0 * C_LIGHT**2 * k
    h = sub.half_bandwidth / omega_p
    z = np.sqrt(np.pi) * (np.abs(k) - k_p) / (2.0 * h * k_p)
    return np.sign(k) * 2.0 * omega_p**2 / k_p * np.exp(-(z**2))


def photon_frequency(sub: DispersionSubstitute, k, omega_p: float = 1.0):
    """Free-field MSVEA frequency ``(f(k) + omega_p^2) / (2 omega_p)``."""
    return (f_of_k(sub, k, omega_p) + omega_p**2) / (2.0 * omega_p)


def vacuum_wavevector(sub: DispersionSubstitute, omega, omega_p: float = 1.0) -> float:
    """Positive wave vector at which the free band reaches ``omega``."""
    target = 2.0 * omega_p * omega - omega_p**2  # = f(k)
    k_p = omega_p / C_LIGHT
    if sub.shape == "quadratic":
        if target < 0:
            raise ConfigError(f"frequency {omega} lies below the free band")
        return float(np.sqrt(target)) / C_LIGHT
    h = sub.half_bandwidth / omega_p
    arg = (target / omega_p**2 - 1.0) / (2.0 * h)
    if not -1.0 < arg < 1.0:
        raise ConfigError(f"frequency {omega} lies outside the erf band")
    return float(k_p * (1.0 + 2.0 * h * erfinv(arg) / np.sqrt(np.pi)))


# --- susceptibility and closed forms -------------------------------------------------


def _dressed_denominator(p: EitParams, detuning: float = 0.0) -> complex:
    de = p.delta_e - detuning
    dR = p.delta_R - detuning
    if p.omega_c_rabi == 0.0:
        return complex(de, -p.gamma_e / 2)
    raman = complex(dR, -p.gamma_m / 2)
    if raman == 0:
        return complex(np.inf)
    return complex(de, -p.gamma_e / 2) - (p.omega_c_rabi / 2) ** 2 / raman


def susceptibility(p: EitParams, omega: float | None = None) -> complex:
    """Linear susceptibility of the dressed medium.

    ``omega`` is the absolute probe frequency; by default the carrier
    ``omega_p`` itself, so the detunings stored in ``p`` are used unchanged.
    On exact two-photon resonance with ``gamma_m = 0`` and a nonzero control
    field the result is exactly zero.
    """
    detuning = 0.0 if omega is None else omega - p.omega_p
    denom = _dressed_denominator(p, detuning)
    if np.isinf(denom):
        return 0j
    if denom == 0:
        raise DegenerateDenominator(
            "undressed exact resonance without linewidth (Omega_c = delta_e = gamma_e = 0)"
        )
    return 2.0 * p.coupling_D * p.omega_p / denom


def group_velocity_resonance(p: EitParams) -> float:
    """Dark-polariton group velocity on Raman resonance (units of c)."""
    if p.omega_c_rabi == 0.0:
        if p.coupling_D == 0.0:
            return C_LIGHT
        warnings.warn("zero control field: group velocity is 0", ZeroControlFieldWarning, stacklevel=2)
        return 0.0
    return C_LIGHT / (1.0 + p.coupling_D * p.omega_p**2 / (p.omega_c_rabi / 2) ** 2)


def control_for_velocity(v_gr, coupling_D: float, omega_p: float = 1.0):
    """Control Rabi frequency giving resonant group velocity ``v_gr`` (inverse of the above)."""
    v = np.asarray(v_gr, dtype=float) / C_LIGHT
    if np.any((v < 0) | (v > 1)):
        raise ConfigError("group velocity must lie in [0, c]")
    with np.errstate(divide="ignore"):
        out = 2.0 * np.sqrt(coupling_D * omega_p**2 * v / (1.0 - v))
    return float(out) if out.ndim == 0 else out


def curvature_resonance(p: EitParams) -> complex:
    """Second derivative ``d^2 omega / dk^2`` of the dark branch on resonance.

    Purely imaginary to leading order in ``gamma_e``. Units ``omega_p / k_p^2``.
    """
    if p.omega_c_rabi == 0.0:
        warnings.warn("zero control field: curvature limit is 0", ZeroControlFieldWarning, stacklevel=2)
        return 0j
    v = group_velocity_resonance(p)
    return -1j * (p.gamma_e / C_LIGHT) * p.coupling_D * p.omega_p**2 / (p.omega_c_rabi / 2) ** 4 * v**3


def diffusion_coefficient(p: EitParams) -> float:
    """Loss-diffusion coefficient ``v_gr c gamma_e / (D omega_p^2)`` of the flow model.

    This is the slow-light limit of ``i * curvature_resonance``; the two
    differ by a factor ``(1 - v_gr/c)^2``.
    """
    if p.coupling_D == 0.0:
        return 0.0
    v = group_velocity_resonance(p)
    return v * C_LIGHT * p.gamma_e / (p.coupling_D * p.omega_p**2)


def transmission_window(p: EitParams, length: float) -> float:
    """Width (standard deviation of ``|T|^2``) of the Gaussian EIT window of a slab."""
    if length <= 0 or p.gamma_e <= 0 or p.omega_c_rabi <= 0 or p.coupling_D <= 0:
        raise ConfigError("transmission_window needs L, gamma_e, Omega_c and D all > 0")
    return (
        (p.omega_c_rabi / 2) ** 2
        / np.sqrt(2.0 * p.gamma_e * p.coupling_D * p.omega_p**2)
        * np.sqrt(C_LIGHT / length)
    )


def adiabaticity_margin(ramp_rate: float, p: EitParams) -> float:
    """Ratio ``|dOmega_c/dt| / (D omega_p^2)``; values << 1 are adiabatic."""
    if ramp_rate < 0:
        raise ConfigError("ramp_rate must be >= 0")
    if ramp_rate == 0:
        return 0.0
    if p.coupling_D == 0:
        return float("inf")
    return ramp_rate / (p.coupling_D * p.omega_p**2)


def _medium_wavevector(p: EitParams, omega: float, chi: complex) -> complex:
    radicand = 1.0 + chi + 2.0 * (omega - p.omega_p) / p.omega_p
    kk = p.omega_p * np.sqrt(complex(radicand)) / C_LIGHT
    if kk.imag < 0 or (kk.imag == 0 and kk.real < 0):
        kk = -kk
    if radicand.real < 0:
        warnings.warn(
            f"evanescent medium wave vector at omega={omega}", EvanescentBranchWarning, stacklevel=3
        )
    return kk


def reflectivity(p: EitParams, omega: float) -> complex:
    """Normal-incidence amplitude reflectivity of a vacuum/medium interface."""
    chi = susceptibility(p, omega)
    k_vac = p.omega_p * np.sqrt(complex(1.0 + 2.0 * (omega - p.omega_p) / p.omega_p)) / C_LIGHT
    k_med = _medium_wavevector(p, omega, chi)
    ratio = k_med / k_vac
    return complex((1.0 - ratio) / (1.0 + ratio))


def slab_wavevector(p: EitParams, omega, sub: DispersionSubstitute = ERF) -> np.ndarray:
    """Complex forward wave vector inside a homogeneous medium.

    Solves ``f(k) = omega_p^2 (1 + chi(omega)) + 2 omega_p (omega - omega_p)``
    for complex ``k`` near ``k_p`` (Newton on the analytic continuation of f).
    """
    omegas = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.empty(omegas.shape, dtype=complex)
    k_p = p.k_p
    for i, w in enumerate(omegas):
        chi = susceptibility(p, w)
        target = p.omega_p**2 * (1.0 + chi) + 2.0 * p.omega_p * (w - p.omega_p)
        if sub.shape == "quadratic":
            out[i] = _medium_wavevector(p, w, chi)
            continue
        h = sub.half_bandwidth / p.omega_p
        kk = complex(k_p + (target / p.omega_p**2 - 1.0) / 2.0 * k_p)
        for _ in range(60):
            z = np.sqrt(np.pi) * (kk - k_p) / (2.0 * h * k_p)
            fval = p.omega_p**2 * (1.0 + 2.0 * h * erf(z))
            deriv = 2.0 * p.omega_p**2 / k_p * np.exp(-(z**2))
            step = (fval - target) / deriv
            kk -= step
            if abs(step) < 1e-15 * k_p:
                break
        out[i] = kk
    return out


def beer_lambert_transmission(p: EitParams, length: float, omega, sub: DispersionSubstitute = ERF):
    """Single-pass intensity transmission ``exp(-2 Im k' L)`` ignoring interface reflections."""
    kk = slab_wavevector(p, omega, sub)
    return np.exp(-2.0 * kk.imag * length)


# --- polariton branches --------------------------------------------------------------


@dataclass
class PolaritonPoint:
    """Complex frequencies and component weights of the three branches at ``k``.

    ``omega[i]`` and ``weights[i]`` refer to branch ``i`` (lower, dark, upper
    when sorted by real part); ``weights[i]`` is the normalized triple
    ``(|E|^2, |rho_eg|^2, |rho_mg|^2)``.
    """

    k: float
    omega: np.ndarray
    weights: np.ndarray
    vectors: np.ndarray = field(repr=False)
    degenerate: bool = False


def mb_matrix(p: EitParams, sub: DispersionSubstitute, k: float) -> np.ndarray:
    """Matrix ``M`` of the linearized MB system, ``i d/dt psi = M psi`` (absolute frequencies)."""
    g = np.sqrt(p.coupling_D) * p.omega_p
    half = p.omega_c_rabi / 2
    return np.array(
        [
            [photon_frequency(sub, k, p.omega_p), -g, 0.0],
            [-g, p.omega_p + p.delta_e - 0.5j * p.gamma_e, half],
            [0.0, half, p.omega_p + p.delta_R - 0.5j * p.gamma_m],
        ],
        dtype=complex,
    )


def polariton_branches(
    p: EitParams,
    sub: DispersionSubstitute,
    k: float,
    previous: PolaritonPoint | None = None,
) -> PolaritonPoint:
    """Diagonalize the 3x3 MB matrix at wave vector ``k``.

    Branches are sorted by real frequency. When two eigenvalues are closer
    than ``1e-9 omega_p`` the point is flagged ``degenerate``; if
    ``previous`` is given the order is then taken from eigenvector overlap
    with it instead of from the real parts.
    """
    vals, vecs = np.linalg.eig(mb_matrix(p, sub, k))
    order = np.argsort(vals.real, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    gaps = np.abs(np.diff(vals))
    degenerate = bool(np.any(gaps < DEGENERACY_TOL * p.omega_p))
    if degenerate:
        warnings.warn(f"degenerate polariton eigenvalues at k={k}", NumericalDegeneracyWarning, stacklevel=2)
        if previous is not None:
            overlap = np.abs(previous.vectors.conj().T @ vecs)
            perm = _assign(overlap)
            vals, vecs = vals[perm], vecs[:, perm]
    weights = np.abs(vecs.T) ** 2
    weights /= weights.sum(axis=1, keepdims=True)
    return PolaritonPoint(float(k), vals, weights, vecs, degenerate)


def _assign(overlap: np.ndarray) -> np.ndarray:
    """Greedy maximal-overlap assignment of new columns to previous branches."""
    perm = np.full(3, -1)
    taken: set[int] = set()
    for flat in np.argsort(-overlap, axis=None):
        i, j = divmod(int(flat), 3)
        if perm[i] < 0 and j not in taken:
            perm[i] = j
            taken.add(j)
    return perm


def branch_velocity_and_decay(pt: PolaritonPoint, p: EitParams, branch: int | None = None):
    """Group velocity ``c w_E`` and decay rate ``gamma_e w_eg`` from branch weights.

    Returns arrays over the three branches, or a pair of floats if ``branch``
    is given.
    """
    v = C_LIGHT * pt.weights[:, 0]
    gamma = p.gamma_e * pt.weights[:, 1]
    if branch is None:
        return v, gamma
    return float(v[branch]), float(gamma[branch])


def band_structure(p: EitParams, sub: DispersionSubstitute, ks: Sequence[float]) -> list[PolaritonPoint]:
    """Branches along a k path, with overlap continuation through near-crossings."""
    points: list[PolaritonPoint] = []
    prev = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NumericalDegeneracyWarning)
        for k in ks:
            prev = polariton_branches(p, sub, float(k), prev)
            points.append(prev)
    return points


BAND_COLUMNS = (
    ["k"]
    + [f"re_omega_{b}" for b in BRANCH_NAMES]
    + [f"im_omega_{b}" for b in BRANCH_NAMES]
    + [f"w_{c}_{b}" for b in BRANCH_NAMES for c in COMPONENTS]
)


def band_table(p: EitParams, sub: DispersionSubstitute, ks: Sequence[float]) -> np.ndarray:
    """Rows of ``(k, Re omega x3, Im omega x3, weights x9)`` for plotting."""
    pts = band_structure(p, sub, ks)
    rows = [
        np.concatenate([[pt.k], pt.omega.real, pt.omega.imag, pt.weights.reshape(-1)]) for pt in pts
    ]
    return np.array(rows)
