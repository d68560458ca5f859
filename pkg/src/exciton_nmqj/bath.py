"""Ohmic bath: spectral density, correlator, and time-dependent rates.

Frequencies and energies are in cm^-1 at the interface. Integrals run in
angular units (rad/ps) so that rates come out in ps^-1 directly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .logging import get_logger
from .metrics import record_rate_table
from .quadrature import FrequencyGrid, integrate_adaptive

CM_TO_RAD_PER_PS = 0.1883651567
BOLTZMANN_CM_PER_K = 0.6950348

UPPER_CUTOFF_FACTOR = 40.0
PANELS_PER_CUTOFF = 8
CORRELATOR_CHUNK = 64
LAMB_MARKOV_CUTOFF_TIMES = 20.0

ArrayLike = Union[float, Sequence[float], np.ndarray]

logger = get_logger("exciton_nmqj.bath")


@dataclass(frozen=True)
class SpectralDensity:
    """Ohmic spectral density with exponential cutoff.

    Attributes:
        reorganization: lambda in cm^-1.
        cutoff: omega_c in cm^-1.
    """

    reorganization: float
    cutoff: float

    def __post_init__(self) -> None:
        if self.reorganization < 0:
            raise ValueError(f"reorganization must be non-negative; got {self.reorganization}.")
        if self.cutoff <= 0:
            raise ValueError(f"cutoff must be positive; got {self.cutoff}.")

    def __call__(self, omega: ArrayLike) -> np.ndarray:
        w = np.asarray(omega, dtype=float)
        return (self.reorganization / self.cutoff) * w * np.exp(-w / self.cutoff)


def spectral_density(j: SpectralDensity, omega: ArrayLike) -> Union[float, np.ndarray]:
    """J(omega) in cm^-1 for omega >= 0."""

    w = np.asarray(omega, dtype=float)
    if np.any(w < 0):
        raise ValueError("spectral_density is defined for omega >= 0 only.")
    value = j(w)
    return float(value) if value.ndim == 0 else value


def thermal_energy(temperature: float) -> float:
    """k_B T in cm^-1."""

    return BOLTZMANN_CM_PER_K * temperature


@dataclass(frozen=True)
class _AngularBath:
    """Spectral density and temperature in rad/ps."""

    coupling: float
    cutoff: float
    kt: float

    @classmethod
    def build(cls, j: SpectralDensity, temperature: float) -> "_AngularBath":
        if temperature < 0:
            raise ValueError(f"temperature must be non-negative; got {temperature}.")
        return cls(
            coupling=j.reorganization / j.cutoff,
            cutoff=j.cutoff * CM_TO_RAD_PER_PS,
            kt=thermal_energy(temperature) * CM_TO_RAD_PER_PS,
        )

    @property
    def upper(self) -> float:
        return UPPER_CUTOFF_FACTOR * self.cutoff

    def panel_width(self, t: float) -> float:
        width = self.cutoff / PANELS_PER_CUTOFF
        if t > 0:
            width = min(width, math.pi / (4.0 * t))
        return width

    def x_bose(self, x: np.ndarray) -> np.ndarray:
        """x * n(x), with the x -> 0 limit k_B T."""

        x = np.asarray(x, dtype=float)
        if self.kt == 0.0:
            return np.zeros_like(x)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            scaled = x / self.kt
            value = np.where(scaled < 1e-12, self.kt, x / np.expm1(scaled))
        return np.where(np.isfinite(value), value, 0.0)

    def density(self, x: np.ndarray) -> np.ndarray:
        return self.coupling * x * np.exp(-x / self.cutoff)

    def density_bose(self, x: np.ndarray) -> np.ndarray:
        """J(x) n(x)."""

        return self.coupling * np.exp(-x / self.cutoff) * self.x_bose(x)

    def density_coth(self, x: np.ndarray) -> np.ndarray:
        """J(x) coth(x / 2kT) = J(x) (2 n(x) + 1)."""

        return self.coupling * np.exp(-x / self.cutoff) * (x + 2.0 * self.x_bose(x))


@dataclass(frozen=True, eq=False)
class BathCorrelator:
    """Sampled symmetrized correlation S(t) and response chi(t), in ps^-2."""

    times: np.ndarray
    s_values: np.ndarray
    chi_values: np.ndarray
    temperature: float

    @property
    def values(self) -> np.ndarray:
        """C(t) = S(t) + i chi(t) / 2."""

        return self.s_values + 0.5j * self.chi_values


@dataclass(frozen=True, eq=False)
class RateTable:
    """Decoherence rates on the propagation grid.

    ``gamma[k, f]`` is gamma(times[k], frequencies[f]) in ps^-1; the column at
    frequency 0 is the dephasing rate. Markovian tables hold identical rows
    and cover every time.
    """

    frequencies: np.ndarray
    times: np.ndarray
    gamma: np.ndarray
    markovian_gamma: np.ndarray
    lamb: Optional[np.ndarray] = None
    markovian: bool = False

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def index_of(self, omega: float) -> int:
        matches = np.flatnonzero(np.isclose(self.frequencies, omega, rtol=0.0, atol=1e-9))
        if matches.size == 0:
            raise KeyError(f"No rate column for omega = {omega} cm^-1.")
        return int(matches[0])

    def indices_for(self, frequencies: Iterable[float]) -> np.ndarray:
        return np.array([self.index_of(omega) for omega in frequencies], dtype=int)

    def column(self, omega: float) -> np.ndarray:
        return self.gamma[:, self.index_of(omega)]

    @property
    def dephasing(self) -> np.ndarray:
        return self.column(0.0)

    def _row_weights(self, t: float) -> Tuple[int, int, float]:
        if self.markovian or self.times.size == 1:
            return 0, 0, 0.0
        tolerance = 1e-9 * max(1.0, self.t_final)
        if t < self.times[0] - tolerance or t > self.t_final + tolerance:
            raise ValueError(
                f"Rate table covers [{self.times[0]}, {self.t_final}] ps; requested t = {t}."
            )
        last = self.times.size - 1
        position = min(max((t - self.times[0]) / self.dt, 0.0), float(last))
        lower = min(int(math.floor(position)), last - 1)
        return lower, lower + 1, position - lower

    def rates_at(self, t: float) -> np.ndarray:
        """gamma(t, omega) for every column, linearly interpolated in time."""

        lower, upper, frac = self._row_weights(t)
        if frac == 0.0:
            return self.gamma[lower].copy()
        return (1.0 - frac) * self.gamma[lower] + frac * self.gamma[upper]

    def lamb_at(self, t: float) -> np.ndarray:
        """L(t, omega) in ps^-1; zeros when the table carries no Lamb shift."""

        if self.lamb is None:
            return np.zeros(self.frequencies.size)
        lower, upper, frac = self._row_weights(t)
        if frac == 0.0:
            return self.lamb[lower].copy()
        return (1.0 - frac) * self.lamb[lower] + frac * self.lamb[upper]


def _sinc_kernel(a: np.ndarray, t: float) -> np.ndarray:
    """sin(a t) / a, finite at a = 0."""

    return t * np.sinc(a * t / math.pi)


def _one_minus_cos_kernel(a: np.ndarray, t: float) -> np.ndarray:
    """(1 - cos(a t)) / a, finite at a = 0."""

    half = 0.5 * a * t
    return t * np.sin(half) * np.sinc(half / math.pi)


def correlator(
    j: SpectralDensity, temperature: float, t: ArrayLike
) -> Tuple[Union[float, np.ndarray], Union[float, np.ndarray]]:
    """S(t) and chi(t) by adaptive frequency quadrature.

    chi carries the sign that makes 2 Re of the time integral of
    exp(i omega t1) C(t1) equal the relaxation rate.
    """

    if temperature <= 0:
        raise ValueError(f"temperature must be positive; got {temperature}.")
    bath = _AngularBath.build(j, temperature)
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times < 0):
        raise ValueError("correlator times must be non-negative.")

    def integrand(x: np.ndarray) -> np.ndarray:
        phase = np.outer(times, x)
        s_part = bath.density_coth(x)[None, :] * np.cos(phase)
        chi_part = -2.0 * bath.density(x)[None, :] * np.sin(phase)
        return np.concatenate([s_part, chi_part], axis=0)

    values, _ = integrate_adaptive(
        integrand, bath.upper, bath.panel_width(float(times.max())), label="correlator"
    )
    values = np.asarray(values)
    s_values, chi_values = values[: times.size], values[times.size :]
    if np.ndim(t) == 0:
        return float(s_values[0]), float(chi_values[0])
    return s_values, chi_values


def relaxation_rate(j: SpectralDensity, temperature: float, omega: float, t: float) -> float:
    """Time-dependent rate gamma(omega, t) in ps^-1 by direct quadrature.

    Negative omega is the absorption partner of the channel at |omega|.
    """

    if t < 0:
        raise ValueError(f"t must be non-negative; got {t}.")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive; got {temperature}.")
    if t == 0:
        return 0.0
    bath = _AngularBath.build(j, temperature)
    w = omega * CM_TO_RAD_PER_PS

    def integrand(x: np.ndarray) -> np.ndarray:
        jn = bath.density_bose(x)
        return 2.0 * (jn * _sinc_kernel(w + x, t) + (jn + bath.density(x)) * _sinc_kernel(w - x, t))

    value, _ = integrate_adaptive(
        integrand, bath.upper, bath.panel_width(t), label=f"relaxation rate at {omega:g} cm^-1"
    )
    return float(value)


def dephasing_rate(j: SpectralDensity, temperature: float, t: float) -> float:
    """Pure-dephasing rate gamma_phi(t) in ps^-1 by direct quadrature."""

    if t < 0:
        raise ValueError(f"t must be non-negative; got {t}.")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive; got {temperature}.")
    if t == 0:
        return 0.0
    bath = _AngularBath.build(j, temperature)

    def integrand(x: np.ndarray) -> np.ndarray:
        return 2.0 * bath.density_coth(x) * _sinc_kernel(x, t)

    value, _ = integrate_adaptive(integrand, bath.upper, bath.panel_width(t), label="dephasing rate")
    return float(value)


def markovian_rate(j: SpectralDensity, temperature: float, omega: float) -> float:
    """t -> infinity rate in ps^-1.

    Emission (omega > 0) carries n + 1, absorption (omega < 0) carries n, and
    omega = 0 returns the long-time dephasing rate 2 pi (lambda/omega_c) k_B T.
    """

    bath = _AngularBath.build(j, temperature)
    if omega == 0:
        return 2.0 * math.pi * bath.coupling * bath.kt
    w = abs(omega) * CM_TO_RAD_PER_PS
    damping = bath.coupling * math.exp(-w / bath.cutoff)
    x_bose = float(bath.x_bose(np.asarray(w)))
    if omega > 0:
        return 2.0 * math.pi * damping * (x_bose + w)
    return 2.0 * math.pi * damping * x_bose


def lamb_shift(j: SpectralDensity, temperature: float, omega: float, t: float) -> float:
    """L(omega, t) = Im of the time integral of exp(i omega t1) C(t1), in ps^-1."""

    if t < 0:
        raise ValueError(f"t must be non-negative; got {t}.")
    if temperature <= 0:
        raise ValueError(f"temperature must be positive; got {temperature}.")
    if t == 0:
        return 0.0
    bath = _AngularBath.build(j, temperature)
    w = omega * CM_TO_RAD_PER_PS

    def integrand(x: np.ndarray) -> np.ndarray:
        jn = bath.density_bose(x)
        return (jn + bath.density(x)) * _one_minus_cos_kernel(w - x, t) + jn * _one_minus_cos_kernel(
            w + x, t
        )

    value, _ = integrate_adaptive(
        integrand, bath.upper, bath.panel_width(t), label=f"Lamb shift at {omega:g} cm^-1"
    )
    return float(value)


def _time_grid(dt: float, t_final: float) -> np.ndarray:
    if dt <= 0:
        raise ValueError(f"dt must be positive; got {dt}.")
    if t_final < 0:
        raise ValueError(f"t_final must be non-negative; got {t_final}.")
    steps = int(round(t_final / dt))
    return dt * np.arange(steps + 1, dtype=float)


def _correlator_chunk(
    bath: _AngularBath, grid: FrequencyGrid, times: np.ndarray
) -> np.ndarray:
    """Rows [S, chi, dS/dt, dchi/dt] for a block of times."""

    x = grid.nodes
    coth_w = grid.weights * bath.density_coth(x)
    plain_w = grid.weights * bath.density(x)
    phase = np.outer(times, x)
    cos_phase = np.cos(phase)
    sin_phase = np.sin(phase)
    return np.stack(
        [
            cos_phase @ coth_w,
            -2.0 * (sin_phase @ plain_w),
            -(sin_phase @ (coth_w * x)),
            -2.0 * (cos_phase @ (plain_w * x)),
        ]
    )


def _converged_grid(bath: _AngularBath, times: np.ndarray) -> FrequencyGrid:
    """Frequency grid resolving the correlator up to the last sample time."""

    t_max = float(times[-1])
    probes = np.unique(np.array([times[min(1, times.size - 1)], 0.5 * t_max, t_max]))

    def integrand(x: np.ndarray) -> np.ndarray:
        phase = np.outer(probes, x)
        return np.concatenate(
            [
                bath.density_coth(x)[None, :] * np.cos(phase),
                -2.0 * bath.density(x)[None, :] * np.sin(phase),
            ]
        )

    _, grid = integrate_adaptive(integrand, bath.upper, bath.panel_width(t_max), label="correlator grid")
    return grid


def _sample_correlator(
    bath: _AngularBath, times: np.ndarray, threads: int
) -> np.ndarray:
    grid = _converged_grid(bath, times)
    blocks: List[np.ndarray] = [
        times[start : start + CORRELATOR_CHUNK] for start in range(0, times.size, CORRELATOR_CHUNK)
    ]
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            parts = list(executor.map(lambda block: _correlator_chunk(bath, grid, block), blocks))
    else:
        parts = [_correlator_chunk(bath, grid, block) for block in blocks]
    return np.concatenate(parts, axis=1)


def sample_correlator(
    j: SpectralDensity, temperature: float, times: Sequence[float], threads: int = 1
) -> BathCorrelator:
    """Sample S(t) and chi(t) on a time grid (one frequency quadrature per time)."""

    if temperature <= 0:
        raise ValueError(f"temperature must be positive; got {temperature}.")
    grid_times = np.asarray(times, dtype=float)
    samples = _sample_correlator(_AngularBath.build(j, temperature), grid_times, threads)
    return BathCorrelator(
        times=grid_times, s_values=samples[0], chi_values=samples[1], temperature=temperature
    )


def build_rate_table(
    j: SpectralDensity,
    temperature: float,
    frequencies: Iterable[float],
    dt: float,
    t_final: float,
    markovian: bool = False,
    *,
    with_lamb: bool = False,
    threads: int = 1,
) -> RateTable:
    """Precompute gamma(t, omega) for all channel frequencies on the step grid.

    Non-Markovian tables sample C(t) once per grid point and accumulate
    2 Re of the time integral of exp(i omega t1) C(t1) with the composite
    trapezoid rule plus its endpoint derivative correction.
    """

    if temperature <= 0:
        raise ValueError(f"temperature must be positive; got {temperature}.")
    freqs = np.array(sorted({0.0, *(float(f) for f in frequencies)}))
    times = _time_grid(dt, t_final)
    markov_row = np.array([markovian_rate(j, temperature, omega) for omega in freqs])

    if markovian:
        gamma = np.tile(markov_row, (times.size, 1))
        lamb = None
        if with_lamb:
            t_long = LAMB_MARKOV_CUTOFF_TIMES / (j.cutoff * CM_TO_RAD_PER_PS)
            lamb_row = np.array([lamb_shift(j, temperature, omega, t_long) for omega in freqs])
            lamb = np.tile(lamb_row, (times.size, 1))
        record_rate_table("markovian")
        logger.info(
            "Built Markovian rate table",
            extra={"frequencies": int(freqs.size), "points": int(times.size), "temperature": temperature},
        )
        return RateTable(freqs, times, gamma, markov_row, lamb, markovian=True)

    bath = _AngularBath.build(j, temperature)
    if times.size == 1:
        zeros = np.zeros((1, freqs.size))
        return RateTable(freqs, times, zeros, markov_row, zeros.copy() if with_lamb else None)

    s_values, chi_values, ds_values, dchi_values = _sample_correlator(bath, times, threads)
    corr = s_values + 0.5j * chi_values
    dcorr = ds_values + 0.5j * dchi_values
    angular = freqs * CM_TO_RAD_PER_PS
    rotation = np.exp(1j * np.outer(times, angular))
    integrand = rotation * corr[:, None]
    derivative = rotation * (1j * np.outer(corr, angular) + dcorr[:, None])
    cumulative = cumulative_trapezoid(integrand, dx=dt, axis=0, initial=0)
    cumulative -= (dt * dt / 12.0) * (derivative - derivative[0])

    gamma = 2.0 * cumulative.real
    gamma[0] = 0.0
    lamb = cumulative.imag.copy() if with_lamb else None
    if lamb is not None:
        lamb[0] = 0.0
    record_rate_table("non_markovian")
    logger.info(
        "Built time-dependent rate table",
        extra={
            "frequencies": int(freqs.size),
            "points": int(times.size),
            "temperature": temperature,
            "reorganization": j.reorganization,
            "cutoff": j.cutoff,
        },
    )
    return RateTable(freqs, times, gamma, markov_row, lamb)
