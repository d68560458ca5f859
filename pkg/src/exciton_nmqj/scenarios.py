"""Dimer beatings, transport scans and FMO runs built on both engines."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, TypeVar

import numpy as np
from scipy.integrate import trapezoid

from .bath import RateTable, SpectralDensity, build_rate_table
from .config import ScenarioConfig
from .errors import PositivityViolation, SimulationError
from .events import JumpLog
from .logging import get_logger
from .model import (
    ChannelCensus,
    ExcitonBasis,
    JumpChannel,
    SiteHamiltonian,
    build_channels,
    channel_census,
    diagonalize,
    dimer,
    distinct_frequencies,
    load_fmo_hamiltonian,
)
from .nmqj import EnsembleRegistry, evolve_ensemble
from .tcl import DensityMatrix, TclTrajectory, evolve

logger = get_logger("exciton_nmqj.scenarios")

T = TypeVar("T")

TRANSPORT_DEFAULTS: Dict[str, Any] = {
    "hamiltonian": {"kind": "dimer", "coupling": 50.0, "epsilon2": 100.0},
    "bath": {"reorganization": 30.0, "cutoff": 30.0},
    "temperature": 300.0,
    "initial": {"kind": "exciton", "index": 2},
    "measure": {"target": 1, "tau": 1.0, "basis": "exciton"},
}
BEATING_DEFAULTS: Dict[str, Any] = {
    "hamiltonian": {"kind": "dimer", "coupling": 87.0, "epsilon2": 120.0},
    "bath": {"reorganization": 50.0, "cutoff": 50.0},
    "initial": {"kind": "site", "index": 1},
}
FMO_DEFAULTS: Dict[str, Any] = {
    "hamiltonian": {"kind": "fmo"},
    "bath": {"reorganization": 35.0, "cutoff": 150.0},
}
BEATING_TEMPERATURES = (77.0, 150.0, 300.0)

_AXIS_FIELDS = {
    "lambda": ("bath", "reorganization"),
    "cutoff": ("bath", "cutoff"),
    "temperature": (None, "temperature"),
}


@dataclass(frozen=True, eq=False)
class System:
    hamiltonian: SiteHamiltonian
    basis: ExcitonBasis
    channels: List[JumpChannel]

    @property
    def census(self) -> ChannelCensus:
        return channel_census(self.channels)


def _merge(base: Mapping[str, Any], updates: Mapping[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def derive_config(base: Optional[ScenarioConfig], **updates: Any) -> ScenarioConfig:
    """Copy of `base` with nested fields replaced, re-validated."""

    data = base.model_dump() if base is not None else {}
    return ScenarioConfig.model_validate(_merge(data, updates))


def build_system(config: ScenarioConfig) -> System:
    """Hamiltonian, exciton basis and secular channels for a scenario."""

    spec = config.hamiltonian
    if spec.kind == "fmo":
        hamiltonian = load_fmo_hamiltonian(spec.path)
    else:
        hamiltonian = dimer(spec.coupling, spec.epsilon2)
    basis = diagonalize(hamiltonian)
    channels = build_channels(basis, config.degeneracy_tol)
    return System(hamiltonian, basis, channels)


def build_rates(
    config: ScenarioConfig,
    system: System,
    *,
    temperature: Optional[float] = None,
    threads: int = 1,
) -> RateTable:
    frequencies = set(distinct_frequencies(system.channels).tolist())
    frequencies.update(config.extra_frequencies)
    return build_rate_table(
        SpectralDensity(config.bath.reorganization, config.bath.cutoff),
        config.temperature if temperature is None else temperature,
        sorted(frequencies),
        config.dt,
        config.t_final,
        config.markovian,
        with_lamb=config.lamb_shift.compute,
        threads=threads,
    )


def initial_state(config: ScenarioConfig, basis: ExcitonBasis) -> np.ndarray:
    """Normalized initial state in the site basis."""

    spec = config.initial
    n = basis.n
    if spec.kind == "vector":
        vector = np.asarray(spec.vector, dtype=complex)
        if vector.size != n:
            raise ValueError(f"initial.vector must have {n} entries; got {vector.size}.")
        return vector / np.linalg.norm(vector)
    if spec.index > n:
        raise ValueError(f"initial.index must be between 1 and {n}; got {spec.index}.")
    if spec.kind == "site":
        vector = np.zeros(n, dtype=complex)
        vector[spec.index - 1] = 1.0
        return vector
    return basis.coefficients[:, spec.index - 1].astype(complex)


def initial_density(config: ScenarioConfig, basis: ExcitonBasis) -> DensityMatrix:
    return DensityMatrix.pure(initial_state(config, basis))


def run_evolution(
    config: ScenarioConfig,
    *,
    system: Optional[System] = None,
    rates: Optional[RateTable] = None,
    temperature: Optional[float] = None,
    threads: int = 1,
    jump_log: Optional[JumpLog] = None,
) -> TclTrajectory:
    """Evolve one scenario with the configured engine.

    Positivity is not checked here; the master-equation trajectory carries
    its minimum eigenvalues and the jump engine raises on its own.
    """

    system = system or build_system(config)
    rates = rates or build_rates(config, system, temperature=temperature, threads=threads)
    include_lamb = config.lamb_shift.propagate
    logger.info(
        "Running scenario",
        extra={
            "scenario": config.name,
            "engine": config.engine,
            "markovian": config.markovian,
            "temperature": config.temperature if temperature is None else temperature,
        },
    )
    if config.engine == "nmqj":
        registry = EnsembleRegistry.initial(
            system.basis.coefficients.T @ initial_state(config, system.basis),
            config.trajectories,
            system.basis,
        )
        return evolve_ensemble(
            registry,
            config.t_final,
            config.dt,
            system.channels,
            rates,
            seed=config.seed,
            include_lamb=include_lamb,
            probability_cap=config.probability_cap,
            threads=threads,
            sample_every=config.sample_every,
            jump_log=jump_log,
        )
    return evolve(
        initial_density(config, system.basis),
        config.t_final,
        config.dt,
        system.channels,
        rates,
        basis=system.basis,
        include_lamb=include_lamb,
        sample_every=config.sample_every,
    )


def transport_measure(
    trajectory: TclTrajectory,
    target: int,
    tau: float,
    basis: Literal["exciton", "site"] = "exciton",
) -> float:
    """Average population of `target` (1-based) over [t0, t0 + tau], by trapezoid."""

    if tau <= 0:
        raise ValueError(f"tau must be positive; got {tau}.")
    populations = (
        trajectory.exciton_populations() if basis == "exciton" else trajectory.site_populations()
    )
    if not 1 <= target <= populations.shape[1]:
        raise ValueError(f"target must be between 1 and {populations.shape[1]}; got {target}.")
    times = trajectory.times
    end = times[0] + tau
    if end > times[-1] * (1.0 + 1e-12) + 1e-12:
        raise ValueError(f"tau ({tau} ps) extends beyond the trajectory end ({times[-1]} ps).")
    series = populations[:, target - 1]
    inside = times <= end + 1e-12
    grid, values = times[inside], series[inside]
    if grid[-1] < end - 1e-12:
        grid = np.append(grid, end)
        values = np.append(values, np.interp(end, times, series))
    return float(trapezoid(values, grid) / tau)


def _parallel_map(func: Callable[..., T], items: Sequence, threads: int) -> List[T]:
    if threads <= 1 or len(items) < 2:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as executor:
        return list(executor.map(func, items))


def beating_config(
    markovian: bool = False,
    *,
    engine: str = "tcl",
    base: Optional[ScenarioConfig] = None,
) -> ScenarioConfig:
    """Dimer with couplings resembling the first two FMO sites, started on site 1."""

    if base is None:
        base = ScenarioConfig.model_validate(BEATING_DEFAULTS)
    return derive_config(base, engine=engine, markovian=markovian)


def run_dimer_beatings(
    temps: Sequence[float] = BEATING_TEMPERATURES,
    markovian: bool = False,
    *,
    engine: str = "tcl",
    base: Optional[ScenarioConfig] = None,
    threads: int = 1,
) -> Dict[float, TclTrajectory]:
    """Site-basis trajectories of the beating dimer, one per temperature."""

    if not temps:
        raise ValueError("temps must not be empty.")
    config = beating_config(markovian, engine=engine, base=base)
    system = build_system(config)

    def _run(temperature: float) -> TclTrajectory:
        return run_evolution(
            derive_config(config, temperature=float(temperature)), system=system, threads=1
        )

    trajectories = _parallel_map(_run, list(temps), threads)
    return {float(temperature): trajectory for temperature, trajectory in zip(temps, trajectories)}


@dataclass(frozen=True)
class ScanPoint:
    """One scan value: the transport measure, or a flagged violation or failure."""

    value: float
    pbar: float
    violation: bool = False
    violation_time: Optional[float] = None
    error: Optional[str] = None

    @property
    def flagged(self) -> bool:
        return self.violation or self.error is not None


def transport_config(base: Optional[ScenarioConfig] = None, **updates: Any) -> ScenarioConfig:
    """Transport dimer started in the upper exciton, with overrides."""

    if base is None:
        base = ScenarioConfig.model_validate(TRANSPORT_DEFAULTS)
    return derive_config(base, **updates)


def _axis_update(axis: str, value: float) -> Dict[str, Any]:
    if axis not in _AXIS_FIELDS:
        raise ValueError(f"axis must be one of {sorted(_AXIS_FIELDS)}; got {axis}.")
    section, name = _AXIS_FIELDS[axis]
    return {name: value} if section is None else {section: {name: value}}


def _scan_point(config: ScenarioConfig, value: float) -> ScanPoint:
    measure = config.measure
    assert measure is not None
    try:
        trajectory = run_evolution(config, threads=1)
    except PositivityViolation as violation:
        logger.warning(
            "Scan point violates positivity",
            extra={"value": value, "time": violation.time, "engine": violation.engine},
        )
        return ScanPoint(value, math.nan, violation=True, violation_time=violation.time)
    except (SimulationError, ValueError) as exc:
        logger.error("Scan point failed", extra={"value": value, "error": str(exc)})
        return ScanPoint(value, math.nan, error=str(exc))

    index = trajectory.first_violation(config.positivity_tolerance)
    if index is not None:
        time = float(trajectory.times[index])
        logger.warning("Scan point violates positivity", extra={"value": value, "time": time})
        return ScanPoint(value, math.nan, violation=True, violation_time=time)
    pbar = transport_measure(trajectory, measure.target, measure.tau, measure.basis)
    return ScanPoint(value, pbar)


def scan_parameter(
    axis: str,
    values: Sequence[float],
    tau: float = 1.0,
    markovian: bool = False,
    *,
    base: Optional[ScenarioConfig] = None,
    threads: int = 1,
) -> List[ScanPoint]:
    """Transport measure for each value of one bath parameter.

    Remaining parameters come from `base` (the standard transport dimer by
    default). Each point evolves up to tau. Violations and failures are
    flagged per point and the scan continues.
    """

    values = [float(value) for value in values]
    if any(value <= 0 for value in values):
        raise ValueError("scan values must be positive.")
    template = transport_config(base, markovian=markovian)
    measure = template.measure or transport_config().measure
    assert measure is not None
    configs = [
        derive_config(
            template,
            t_final=tau,
            measure={"target": measure.target, "tau": tau, "basis": measure.basis},
            **_axis_update(axis, value),
        )
        for value in values
    ]
    points = _parallel_map(lambda item: _scan_point(*item), list(zip(configs, values)), threads)
    logger.info(
        "Scan finished",
        extra={
            "axis": axis,
            "points": len(points),
            "markovian": markovian,
            "flagged": sum(point.flagged for point in points),
        },
    )
    return points


def scan_table(config: ScenarioConfig, *, threads: int = 1) -> List[Dict[str, float]]:
    """Markovian and non-Markovian scans merged into CSV rows."""

    if config.scan is None:
        raise ValueError("scenario has no scan section.")
    tau = config.measure.tau if config.measure is not None else config.t_final
    values = config.scan.grid()
    markov = scan_parameter(config.scan.axis, values, tau, True, base=config, threads=threads)
    non_markov = scan_parameter(config.scan.axis, values, tau, False, base=config, threads=threads)
    return [
        {
            "value": nm.value,
            "pbar_markov": m.pbar,
            "pbar_nm": nm.pbar,
            "violation_flag": 1.0 if nm.flagged or m.flagged else 0.0,
        }
        for m, nm in zip(markov, non_markov)
    ]


@dataclass(frozen=True, eq=False)
class FmoRun:
    """One FMO evolution with its channel census."""

    initial_site: int
    temperature: float
    markovian: bool
    trajectory: TclTrajectory
    census: ChannelCensus

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def site_populations(self) -> np.ndarray:
        return self.trajectory.site_populations()

    @property
    def lowest_exciton_population(self) -> np.ndarray:
        return self.trajectory.exciton_populations()[:, 0]


def fmo_config(
    initial_site: int,
    temperature: float,
    markovian: bool,
    *,
    base: Optional[ScenarioConfig] = None,
) -> ScenarioConfig:
    if base is None:
        base = ScenarioConfig.model_validate(FMO_DEFAULTS)
    return derive_config(
        base,
        temperature=float(temperature),
        markovian=markovian,
        initial={"kind": "site", "index": int(initial_site), "vector": None},
    )


def run_fmo(
    initial_site: int,
    temperature: float,
    markovian: bool,
    *,
    base: Optional[ScenarioConfig] = None,
    threads: int = 1,
) -> FmoRun:
    """Seven-site populations after exciting one site."""

    config = fmo_config(initial_site, temperature, markovian, base=base)
    system = build_system(config)
    if system.basis.n != 7:
        raise ValueError(f"FMO runs need a seven-site Hamiltonian; got {system.basis.n} sites.")
    if not 1 <= initial_site <= system.basis.n:
        raise ValueError(f"initial_site must be between 1 and {system.basis.n}; got {initial_site}.")
    trajectory = run_evolution(config, system=system, threads=threads)
    return FmoRun(int(initial_site), float(temperature), markovian, trajectory, system.census)


def run_fmo_pair(config: ScenarioConfig, *, threads: int = 1) -> Tuple[FmoRun, FmoRun]:
    """Non-Markovian and Markovian FMO runs for one scenario file."""

    site = config.initial.index if config.initial.kind == "site" else 1
    runs = _parallel_map(
        lambda markovian: run_fmo(site, config.temperature, markovian, base=config, threads=1),
        [False, True],
        threads,
    )
    return runs[0], runs[1]


@dataclass(frozen=True)
class FmoComparison:
    """Largest site-population gap between two FMO runs, and where it sits."""

    max_difference: float
    time_of_max: float
    site: int


def compare_fmo(non_markov: FmoRun, markov: FmoRun) -> FmoComparison:
    """Locate the largest |P_m(t)| gap between the two rate models.

    The gap peaks at the first beat: Markovian dephasing acts at full strength
    from t = 0 while the time-dependent rate is still rising.
    """

    if non_markov.times.shape != markov.times.shape or not np.allclose(non_markov.times, markov.times):
        raise ValueError("FMO runs must share a time grid.")
    difference = np.abs(non_markov.site_populations - markov.site_populations)
    row, column = np.unravel_index(int(np.argmax(difference)), difference.shape)
    return FmoComparison(float(difference[row, column]), float(non_markov.times[row]), int(column) + 1)
