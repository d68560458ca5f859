"""Site Hamiltonians, the exciton basis, and secular jump channels."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_DEGENERACY_TOL = 0.01
ZERO_GENERATOR_TOL = 1e-14
FMO_SITES = 7


@dataclass(frozen=True, eq=False)
class SiteHamiltonian:
    """Single-exciton tight-binding Hamiltonian in cm^-1.

    Attributes:
        site_energies: Site energies relative to the lowest site.
        couplings: Symmetric inter-site couplings with zero diagonal.
    """

    site_energies: np.ndarray
    couplings: np.ndarray

    def __post_init__(self) -> None:
        energies = np.array(self.site_energies, dtype=float).reshape(-1)
        couplings = np.array(self.couplings, dtype=float)
        n = energies.size
        if n < 1:
            raise ValueError("A Hamiltonian needs at least one site.")
        if couplings.shape != (n, n):
            raise ValueError(f"couplings must have shape ({n}, {n}); got {couplings.shape}.")
        if not np.array_equal(couplings, couplings.T):
            raise ValueError("couplings must be exactly symmetric.")
        if np.any(np.diag(couplings) != 0.0):
            raise ValueError("couplings must have a zero diagonal.")
        energies.setflags(write=False)
        couplings.setflags(write=False)
        object.__setattr__(self, "site_energies", energies)
        object.__setattr__(self, "couplings", couplings)

    @property
    def n_sites(self) -> int:
        return int(self.site_energies.size)

    def matrix(self) -> np.ndarray:
        return np.diag(self.site_energies) + self.couplings


@dataclass(frozen=True, eq=False)
class ExcitonBasis:
    """Eigenenergies (ascending) and real eigenvectors.

    ``coefficients[m, M]`` is the amplitude c_m(M) of site m in exciton M.
    """

    energies: np.ndarray
    coefficients: np.ndarray

    @property
    def n(self) -> int:
        return int(self.energies.size)

    def hamiltonian(self) -> np.ndarray:
        """Site-basis Hamiltonian rebuilt from the decomposition."""

        return (self.coefficients * self.energies) @ self.coefficients.T

    def to_exciton(self, operator: np.ndarray) -> np.ndarray:
        return self.coefficients.T @ operator @ self.coefficients

    def to_site(self, operator: np.ndarray) -> np.ndarray:
        return self.coefficients @ operator @ self.coefficients.T

    def exciton_state(self, index: int) -> np.ndarray:
        """|M> in the exciton basis (0-based M)."""

        state = np.zeros(self.n, dtype=complex)
        state[index] = 1.0
        return state

    def site_state(self, site: int) -> np.ndarray:
        """|m> expressed in the exciton basis (0-based m)."""

        return self.coefficients[site, :].astype(complex)

    def gaps(self) -> np.ndarray:
        """Positive transition frequencies E_M - E_N for M > N."""

        upper = np.triu_indices(self.n, k=1)
        diff = self.energies[:, None] - self.energies[None, :]
        return diff.T[upper]


class ChannelKind(str, Enum):
    RELAXATION = "relaxation"
    ABSORPTION = "absorption"
    DEPHASING = "dephasing"


@dataclass(frozen=True, eq=False)
class JumpChannel:
    """Secular jump operator A_m(omega) in the exciton basis.

    Attributes:
        site: 0-based site index m.
        frequency: Signed transition frequency in cm^-1 (positive = emission).
        generator: Complex matrix of A_m(omega).
        kind: Relaxation, absorption or dephasing.
    """

    site: int
    frequency: float
    generator: np.ndarray
    kind: ChannelKind

    @cached_property
    def product(self) -> np.ndarray:
        """A^dagger A."""

        return self.generator.conj().T @ self.generator

    @property
    def label(self) -> str:
        return f"site{self.site + 1}:{self.frequency:.6g}"


@dataclass(frozen=True)
class ChannelCensus:
    relaxation_frequencies: int
    dephasing_channels: int
    total_channels: int


def diagonalize(h: SiteHamiltonian) -> ExcitonBasis:
    """Eigen-decompose `h` with ascending energies and a fixed eigenvector sign.

    The largest-magnitude entry of every eigenvector is made positive so that
    generators and downstream outputs are reproducible.
    """

    matrix = h.matrix()
    if not np.any(h.couplings):
        order = np.argsort(h.site_energies, kind="stable")
        energies = h.site_energies[order].astype(float)
        coefficients = np.eye(h.n_sites)[:, order]
    else:
        energies, coefficients = np.linalg.eigh(matrix)
    coefficients = np.array(coefficients, dtype=float)
    for column in range(coefficients.shape[1]):
        pivot = int(np.argmax(np.abs(coefficients[:, column])))
        if coefficients[pivot, column] < 0:
            coefficients[:, column] *= -1.0
    return ExcitonBasis(energies=np.asarray(energies, dtype=float), coefficients=coefficients)


def _cluster_gaps(
    basis: ExcitonBasis, degeneracy_tol: float
) -> Tuple[List[Tuple[int, int]], List[Tuple[float, List[Tuple[int, int]]]]]:
    """Split exciton pairs (M, N) with E_M >= E_N into degenerate and positive groups."""

    energies = basis.energies
    degenerate: List[Tuple[int, int]] = []
    positive: List[Tuple[float, int, int]] = []
    for upper in range(basis.n):
        for lower in range(upper):
            gap = energies[upper] - energies[lower]
            if abs(gap) <= degeneracy_tol:
                degenerate.append((upper, lower))
            else:
                positive.append((gap, upper, lower))
    positive.sort(key=lambda item: (item[0], item[1], item[2]))

    clusters: List[Tuple[float, List[Tuple[int, int]]]] = []
    members: List[Tuple[float, int, int]] = []
    for item in positive:
        if members and item[0] - members[-1][0] > degeneracy_tol:
            clusters.append(_close_cluster(members))
            members = []
        members.append(item)
    if members:
        clusters.append(_close_cluster(members))
    return degenerate, clusters


def _close_cluster(members: Sequence[Tuple[float, int, int]]) -> Tuple[float, List[Tuple[int, int]]]:
    omega = float(np.mean([gap for gap, _, _ in members]))
    return omega, [(upper, lower) for _, upper, lower in members]


def build_channels(
    basis: ExcitonBasis, degeneracy_tol: float = DEFAULT_DEGENERACY_TOL
) -> List[JumpChannel]:
    """Enumerate secular channels A_m(omega), one per site and frequency group.

    Transition frequencies within `degeneracy_tol` cm^-1 share one omega.
    Channels come out site-major; within a site the dephasing channel is
    first, then each gap in ascending order as emission followed by absorption.
    """

    if degeneracy_tol < 0:
        raise ValueError(f"degeneracy_tol must be non-negative; got {degeneracy_tol}.")
    c = basis.coefficients
    n = basis.n
    degenerate, clusters = _cluster_gaps(basis, degeneracy_tol)

    channels: List[JumpChannel] = []
    for site in range(n):
        row = c[site, :]
        dephasing = np.diag(row * row).astype(complex)
        for upper, lower in degenerate:
            dephasing[lower, upper] = row[upper] * row[lower]
            dephasing[upper, lower] = row[upper] * row[lower]
        channels.append(JumpChannel(site, 0.0, dephasing, ChannelKind.DEPHASING))

        for omega, pairs in clusters:
            emission = np.zeros((n, n), dtype=complex)
            for upper, lower in pairs:
                emission[lower, upper] = row[upper] * row[lower]
            if np.max(np.abs(emission)) <= ZERO_GENERATOR_TOL:
                continue
            channels.append(JumpChannel(site, omega, emission, ChannelKind.RELAXATION))
            channels.append(
                JumpChannel(site, -omega, emission.conj().T.copy(), ChannelKind.ABSORPTION)
            )
    return channels


def distinct_frequencies(channels: Sequence[JumpChannel]) -> np.ndarray:
    """Sorted distinct channel frequencies, always including 0."""

    values = {0.0}
    values.update(float(channel.frequency) for channel in channels)
    return np.array(sorted(values))


def channel_census(channels: Sequence[JumpChannel]) -> ChannelCensus:
    """Count distinct signed relaxation frequencies and dephasing channels."""

    signed = {round(ch.frequency, 9) for ch in channels if ch.kind is not ChannelKind.DEPHASING}
    dephasing = sum(1 for ch in channels if ch.kind is ChannelKind.DEPHASING)
    return ChannelCensus(
        relaxation_frequencies=len(signed),
        dephasing_channels=dephasing,
        total_channels=len(channels),
    )


def dimer(V12: float, eps2: float) -> SiteHamiltonian:
    """Two-site Hamiltonian with eps1 = 0."""

    return SiteHamiltonian(
        site_energies=np.array([0.0, float(eps2)]),
        couplings=np.array([[0.0, float(V12)], [float(V12), 0.0]]),
    )


def dimer_mixing_angle(V12: float, eps2: float) -> float:
    """theta with tan(2 theta) = 2 V12 / eps2."""

    return 0.5 * float(np.arctan2(2.0 * V12, eps2))


def fmo7(data: np.ndarray) -> SiteHamiltonian:
    """Build the seven-site FMO Hamiltonian from a full matrix in cm^-1.

    Site energies are shifted so the lowest one is zero.
    """

    matrix = np.asarray(data, dtype=float)
    if matrix.shape != (FMO_SITES, FMO_SITES):
        raise ValueError(f"FMO data must be a {FMO_SITES}x{FMO_SITES} matrix; got {matrix.shape}.")
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-9):
        raise ValueError("FMO data must be symmetric.")
    energies = np.diag(matrix).copy()
    couplings = matrix - np.diag(energies)
    couplings = 0.5 * (couplings + couplings.T)
    return SiteHamiltonian(site_energies=energies - energies.min(), couplings=couplings)


def load_fmo_hamiltonian(path: Optional[Path] = None) -> SiteHamiltonian:
    """Read the whitespace-separated FMO matrix (comments start with '#')."""

    if path is None:
        from .config import default_fmo_path

        path = default_fmo_path()
    if not Path(path).exists():
        raise FileNotFoundError(f"FMO Hamiltonian file not found: {path}")
    return fmo7(np.loadtxt(path, comments="#", ndmin=2))
