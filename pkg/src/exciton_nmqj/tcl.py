"""Deterministic integrator for the secular time-convolutionless master equation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .bath import CM_TO_RAD_PER_PS, RateTable
from .errors import PositivityViolation, StepError
from .logging import get_logger
from .metrics import record_positivity_violation, record_tcl_step
from .model import ExcitonBasis, JumpChannel

TRACE_DRIFT_LIMIT = 1e-8
MAX_STEP_HALVINGS = 6

logger = get_logger("exciton_nmqj.tcl")


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Density matrix in the site basis at a given time (ps)."""

    entries: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=complex)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"density matrix must be square; got shape {entries.shape}.")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def pure(cls, state: Sequence[complex], time: float = 0.0) -> "DensityMatrix":
        vector = np.asarray(state, dtype=complex)
        vector = vector / np.linalg.norm(vector)
        return cls(np.outer(vector, vector.conj()), time)

    @property
    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def populations(self) -> np.ndarray:
        return np.diag(self.entries).real.copy()

    def is_hermitian(self, atol: float = 1e-10) -> bool:
        return bool(np.allclose(self.entries, self.entries.conj().T, rtol=0.0, atol=atol))


@dataclass(frozen=True, eq=False)
class TclTrajectory:
    """Sampled master-equation trajectory.

    ``rho[k]`` is the site-basis density matrix at ``times[k]``.
    """

    times: np.ndarray
    rho: np.ndarray
    min_eigenvalues: np.ndarray
    basis: ExcitonBasis

    def density(self, index: int) -> DensityMatrix:
        return DensityMatrix(self.rho[index], float(self.times[index]))

    def site_populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.rho, axis1=1, axis2=2)).copy()

    def exciton_rho(self) -> np.ndarray:
        c = self.basis.coefficients
        return np.einsum("mi,kmn,nj->kij", c, self.rho, c)

    def exciton_populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.exciton_rho(), axis1=1, axis2=2)).copy()

    def exciton_coherences(self) -> np.ndarray:
        """|rho_MN| for M < N, columns in row-major order."""

        rows, cols = np.triu_indices(self.basis.n, k=1)
        return np.abs(self.exciton_rho()[:, rows, cols])

    def first_violation(self, tolerance: float) -> Optional[int]:
        """Index of the first sample whose minimum eigenvalue is below -tolerance."""

        below = np.flatnonzero(self.min_eigenvalues < -tolerance)
        return int(below[0]) if below.size else None


class _Generator:
    """Right-hand side of the master equation in the exciton basis."""

    def __init__(
        self,
        basis: ExcitonBasis,
        channels: Sequence[JumpChannel],
        rates: RateTable,
        include_lamb: bool = False,
    ) -> None:
        n = basis.n
        self.energies = basis.energies * CM_TO_RAD_PER_PS
        self.splittings = self.energies[:, None] - self.energies[None, :]
        self.rates = rates
        self.include_lamb = include_lamb and rates.lamb is not None
        if channels:
            self.generators = np.stack([ch.generator for ch in channels])
            self.products = np.stack([ch.product for ch in channels])
            self.columns = rates.indices_for(ch.frequency for ch in channels)
        else:
            self.generators = np.zeros((0, n, n), dtype=complex)
            self.products = np.zeros((0, n, n), dtype=complex)
            self.columns = np.zeros(0, dtype=int)
        self.adjoints = np.conj(np.transpose(self.generators, (0, 2, 1)))

    def coherent(self, t: float, rho: np.ndarray) -> np.ndarray:
        if not self.include_lamb:
            return -1j * self.splittings * rho
        shift = np.einsum("k,kij->ij", self.rates.lamb_at(t)[self.columns], self.products)
        hamiltonian = np.diag(self.energies) + shift
        return -1j * (hamiltonian @ rho - rho @ hamiltonian)

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        drho = self.coherent(t, rho)
        if self.columns.size == 0:
            return drho
        gamma = self.rates.rates_at(t)[self.columns]
        jumps = self.generators @ rho[None, :, :] @ self.adjoints
        anti = self.products @ rho[None, :, :] + rho[None, :, :] @ self.products
        return drho + np.einsum("k,kij->ij", gamma, jumps - 0.5 * anti)


def _rk4(generator: _Generator, rho: np.ndarray, t: float, dt: float) -> np.ndarray:
    half = 0.5 * dt
    k1 = generator(t, rho)
    k2 = generator(t + half, rho + half * k1)
    k3 = generator(t + half, rho + half * k2)
    k4 = generator(t + dt, rho + dt * k3)
    new = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return 0.5 * (new + new.conj().T)


def _advance(
    generator: _Generator, rho: np.ndarray, t: float, dt: float, depth: int = 0
) -> np.ndarray:
    new = _rk4(generator, rho, t, dt)
    drift = abs(np.trace(new) - np.trace(rho))
    if drift <= TRACE_DRIFT_LIMIT:
        record_tcl_step()
        return new
    if depth >= MAX_STEP_HALVINGS:
        raise StepError(f"Trace drift {drift:.3e} persists after {depth} step halvings", t)
    record_tcl_step(rejected=True)
    logger.debug("Halving step after trace drift", extra={"time": t, "dt": dt, "drift": float(drift)})
    middle = _advance(generator, rho, t, 0.5 * dt, depth + 1)
    return _advance(generator, middle, t + 0.5 * dt, 0.5 * dt, depth + 1)


def step(
    rho: DensityMatrix,
    t: float,
    dt: float,
    channels: Sequence[JumpChannel],
    rates: RateTable,
    *,
    basis: ExcitonBasis,
    include_lamb: bool = False,
) -> DensityMatrix:
    """One fourth-order Runge-Kutta step from t to t + dt (site basis in and out)."""

    if dt <= 0:
        raise ValueError(f"dt must be positive; got {dt}.")
    generator = _Generator(basis, channels, rates, include_lamb)
    exciton = basis.to_exciton(rho.entries)
    advanced = _advance(generator, exciton, t, dt)
    return DensityMatrix(basis.to_site(advanced), t + dt)


def min_eigenvalue(rho: Union[DensityMatrix, np.ndarray]) -> float:
    """Smallest eigenvalue of a Hermitian density matrix."""

    entries = rho.entries if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)
    return float(np.linalg.eigvalsh(0.5 * (entries + entries.conj().T))[0])


def evolve(
    rho0: DensityMatrix,
    t_final: float,
    dt: float,
    channels: Sequence[JumpChannel],
    rates: RateTable,
    *,
    basis: ExcitonBasis,
    t0: float = 0.0,
    include_lamb: bool = False,
    sample_every: int = 1,
) -> TclTrajectory:
    """Integrate from t0 to t_final, sampling every `sample_every` steps.

    The minimum eigenvalue of every sample is recorded; positivity is
    monitored, never enforced.
    """

    if dt <= 0:
        raise ValueError(f"dt must be positive; got {dt}.")
    if sample_every < 1:
        raise ValueError(f"sample_every must be at least 1; got {sample_every}.")
    trace = np.trace(rho0.entries)
    if abs(trace - 1.0) > 1e-8:
        raise ValueError(f"rho0 must have unit trace; got {trace.real:.12f}.")
    if not rho0.is_hermitian():
        raise ValueError("rho0 must be Hermitian.")
    n_steps = int(round((t_final - t0) / dt))
    if n_steps < 0:
        raise ValueError(f"t_final ({t_final}) precedes t0 ({t0}).")

    generator = _Generator(basis, channels, rates, include_lamb)
    current = basis.to_exciton(rho0.entries)
    times = [t0]
    samples = [current]
    for index in range(n_steps):
        t = t0 + index * dt
        try:
            current = _advance(generator, current, t, dt)
        except (StepError, ValueError) as exc:
            logger.error("Master-equation step failed", extra={"time": t, "error": str(exc)})
            raise
        if (index + 1) % sample_every == 0 or index + 1 == n_steps:
            times.append(t0 + (index + 1) * dt)
            samples.append(current)

    exciton = np.stack(samples)
    site = np.einsum("im,kmn,jn->kij", basis.coefficients, exciton, basis.coefficients)
    min_eigs = np.linalg.eigvalsh(exciton)[:, 0]
    trajectory = TclTrajectory(
        times=np.asarray(times), rho=site, min_eigenvalues=min_eigs, basis=basis
    )
    logger.debug(
        "Master-equation evolution finished",
        extra={"steps": n_steps, "min_eigenvalue": float(min_eigs.min()), "t_final": t_final},
    )
    return trajectory


def check_positivity(trajectory: TclTrajectory, tolerance: float) -> None:
    """Raise PositivityViolation at the first sample below -tolerance."""

    index = trajectory.first_violation(tolerance)
    if index is None:
        return
    record_positivity_violation("tcl")
    violation = PositivityViolation(
        float(trajectory.times[index]),
        engine="tcl",
        min_eigenvalue=float(trajectory.min_eigenvalues[index]),
    )
    logger.error(
        "Positivity violated",
        extra={"time": violation.time, "min_eigenvalue": violation.min_eigenvalue},
    )
    raise violation
