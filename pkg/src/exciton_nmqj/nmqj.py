"""Non-Markovian quantum jump ensemble engine.

The ensemble is tracked as groups of identical members. Each step samples
positive jumps for every group, negative jumps back into the groups they
came from, then evolves every resulting state under the effective
Hamiltonian and merges states that agree up to a global phase.
"""

from __future__ import annotations

from collections import defaultdict
from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
from scipy.linalg import expm

from .bath import CM_TO_RAD_PER_PS, RateTable
from .errors import PositivityViolation, StepError
from .events import JumpDirection, JumpEvent, JumpLog
from .logging import get_logger
from .metrics import (
    record_ensemble_step,
    record_jumps,
    record_positivity_violation,
    record_probability_cap_exceeded,
)
from .model import ChannelKind, ExcitonBasis, JumpChannel
from .tcl import DensityMatrix, TclTrajectory

DEFAULT_PROBABILITY_CAP = 0.1
MATCH_TOL = 1e-9
KEY_DECIMALS = 9
WEIGHT_FLOOR = 1e-14
BLOCK_SIZE = 256

logger = get_logger("exciton_nmqj.nmqj")

T = TypeVar("T")


def _phase_normalized(states: np.ndarray) -> np.ndarray:
    """Rotate each row so its largest component is real and positive."""

    states = np.atleast_2d(states)
    magnitude = np.round(np.abs(states), KEY_DECIMALS - 2)
    pivot = np.argmax(magnitude, axis=1)
    anchor = states[np.arange(states.shape[0]), pivot]
    phase = anchor / np.abs(anchor)
    return states * np.conj(phase)[:, None]


def state_keys(states: np.ndarray) -> List[bytes]:
    """Hashable keys equal for states that agree up to a global phase."""

    rounded = np.round(_phase_normalized(states), KEY_DECIMALS) + (0.0 + 0.0j)
    return [row.tobytes() for row in rounded]


def same_up_to_phase(first: np.ndarray, second: np.ndarray, tol: float = MATCH_TOL) -> bool:
    """True when |<first|second>| is within `tol` of 1 for normalized states."""

    return bool(1.0 - abs(np.vdot(first, second)) < tol)


def merge_groups(states: np.ndarray, counts: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pool rows that agree up to a global phase.

    Returns the representative states, their summed counts and, per input
    row, the group it landed in. A row whose rounded key is new is still
    pooled with an earlier representative when their overlap is within
    MATCH_TOL of 1.
    """

    keyed: Dict[bytes, int] = {}
    representatives: List[int] = []
    landing = np.empty(len(states), dtype=int)
    for entry, key in enumerate(state_keys(states)):
        group = keyed.get(key)
        if group is None and representatives:
            overlaps = np.abs(states[representatives].conj() @ states[entry])
            close = np.flatnonzero(1.0 - overlaps < MATCH_TOL)
            if close.size:
                group = int(close[0])
        if group is None:
            group = len(representatives)
            representatives.append(entry)
        keyed.setdefault(key, group)
        landing[entry] = group
    merged = np.bincount(landing, weights=counts, minlength=len(representatives))
    return states[representatives], np.rint(merged).astype(np.int64), landing

@dataclass(frozen=True, eq=False)
class EnsembleRegistry:
    """Groups of identical ensemble members.

    Attributes:
        states: (G, n) normalized state vectors in the exciton basis.
        counts: (G,) member counts summing to `total`.
        total: Ensemble size N.
        time: Current time in ps.
        basis: Exciton basis the states are expressed in.
        step: Number of steps taken; keys the random streams.
    """

    states: np.ndarray
    counts: np.ndarray
    total: int
    basis: ExcitonBasis
    time: float = 0.0
    step: int = 0

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=complex, ndmin=2)
        counts = np.array(self.counts, dtype=np.int64).reshape(-1)
        if states.shape != (counts.size, self.basis.n):
            raise ValueError(
                f"states must have shape ({counts.size}, {self.basis.n}); got {states.shape}."
            )
        if np.any(counts < 0):
            raise ValueError("group counts must be non-negative.")
        if int(counts.sum()) != self.total:
            raise ValueError(f"group counts sum to {int(counts.sum())}, expected {self.total}.")
        norms = np.linalg.norm(states, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("every group state must be normalized.")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def initial(
        cls, state: Sequence[complex], total: int, basis: ExcitonBasis, time: float = 0.0
    ) -> "EnsembleRegistry":
        """All `total` members in one exciton-basis state."""

        if total < 1:
            raise ValueError(f"ensemble size must be at least 1; got {total}.")
        vector = np.asarray(state, dtype=complex)
        norm = np.linalg.norm(vector)
        if norm == 0:
            raise ValueError("initial state must be non-zero.")
        return cls(vector[None, :] / norm, np.array([total]), total, basis, time)

    @property
    def n_groups(self) -> int:
        return int(self.counts.size)

    @property
    def groups(self) -> List[Tuple[np.ndarray, int]]:
        return [(self.states[g], int(self.counts[g])) for g in range(self.n_groups)]

    @cached_property
    def _keys(self) -> Dict[bytes, int]:
        index: Dict[bytes, int] = {}
        for position, key in enumerate(state_keys(self.states)):
            index.setdefault(key, position)
        return index

    def find(self, state: np.ndarray) -> Optional[int]:
        """Index of the group equal to `state` up to a global phase, if any."""

        position = self._keys.get(state_keys(state[None, :])[0])
        if position is not None:
            return position
        overlaps = np.abs(self.states.conj() @ state)
        candidates = np.flatnonzero(1.0 - overlaps < MATCH_TOL)
        return int(candidates[0]) if candidates.size else None


@dataclass(frozen=True)
class RandomStreams:
    """Counter-based random streams keyed by (seed, step, block)."""

    seed: int

    def generator(self, step: int, block: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.seed, step, block]))


@dataclass
class ProbabilityCapMonitor:
    """Tracks per-group jump probabilities against the step-size cap."""

    cap: float = DEFAULT_PROBABILITY_CAP
    exceeded: int = 0
    max_probability: float = 0.0

    def observe(self, totals: np.ndarray, t: float) -> None:
        if totals.size == 0:
            return
        worst = float(totals.max())
        self.max_probability = max(self.max_probability, worst)
        if worst <= self.cap:
            return
        self.exceeded += 1
        record_probability_cap_exceeded()
        if self.exceeded == 1:
            logger.warning(
                "Jump probability exceeds cap; reduce dt",
                extra={"time": t, "probability": worst, "cap": self.cap},
            )


class ChannelSet:
    """Stacked channel operators with their rate-table columns."""

    def __init__(
        self,
        channels: Sequence[JumpChannel],
        basis: ExcitonBasis,
        rates: Optional[RateTable] = None,
    ) -> None:
        n = basis.n
        self.channels = list(channels)
        self.basis = basis
        self.energies = basis.energies * CM_TO_RAD_PER_PS
        if self.channels:
            self.generators = np.stack([ch.generator for ch in self.channels])
            self.products = np.stack([ch.product for ch in self.channels])
        else:
            self.generators = np.zeros((0, n, n), dtype=complex)
            self.products = np.zeros((0, n, n), dtype=complex)
        if rates is None:
            self.columns = np.arange(len(self.channels))
        else:
            self.columns = rates.indices_for(ch.frequency for ch in self.channels)
        diagonals = np.diagonal(self.products, axis1=1, axis2=2)
        self.diagonal_products = not np.any(self.products - diagonals[:, :, None] * np.eye(n)[None])
        self.product_diagonals = diagonals.real.copy()
        self.dephasing = np.array(
            [ch.kind is ChannelKind.DEPHASING for ch in self.channels], dtype=bool
        )

    def __len__(self) -> int:
        return len(self.channels)

    def gamma(self, rates: RateTable, t: float) -> np.ndarray:
        return rates.rates_at(t)[self.columns]

    def lamb(self, rates: RateTable, t: float) -> np.ndarray:
        return rates.lamb_at(t)[self.columns]

    def weights(self, states: np.ndarray) -> np.ndarray:
        """<psi|A^dagger A|psi> for every (group, channel)."""

        if self.diagonal_products:
            return (np.abs(states) ** 2) @ self.product_diagonals.T
        images = np.einsum("kij,gj->gki", self.products, states)
        return np.einsum("gi,gki->gk", states.conj(), images).real

    def trivial_jumps(self, states: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Mask of dephasing jumps that leave the state unchanged up to phase."""

        mask = np.zeros(weights.shape, dtype=bool)
        if not self.dephasing.any():
            return mask
        selected = np.flatnonzero(self.dephasing)
        images = np.einsum("kij,gj->gki", self.generators[selected], states)
        expectation = np.abs(np.einsum("gi,gki->gk", states.conj(), images)) ** 2
        mask[:, selected] = expectation >= weights[:, selected] * (1.0 - 1e-12)
        return mask

    def effective(self, gamma: np.ndarray, lamb: Optional[np.ndarray] = None) -> np.ndarray:
        h_eff = np.diag(self.energies).astype(complex)
        if len(self.channels):
            h_eff -= 0.5j * np.einsum("k,kij->ij", gamma, self.products)
            if lamb is not None:
                h_eff += np.einsum("k,kij->ij", lamb, self.products)
        return h_eff


def _as_channel_set(
    channels: Union[ChannelSet, Sequence[JumpChannel]], rates: RateTable, basis: ExcitonBasis
) -> ChannelSet:
    return channels if isinstance(channels, ChannelSet) else ChannelSet(channels, basis, rates)


def effective_hamiltonian(
    channels: Sequence[JumpChannel],
    rates: RateTable,
    t: float,
    *,
    basis: ExcitonBasis,
    include_lamb: bool = False,
) -> np.ndarray:
    """H_S - (i/2) sum gamma(t) A^dagger A in the exciton basis, in rad/ps."""

    channel_set = _as_channel_set(channels, rates, basis)
    lamb = channel_set.lamb(rates, t) if include_lamb else None
    return channel_set.effective(channel_set.gamma(rates, t), lamb)


def _is_diagonal(matrix: np.ndarray) -> bool:
    return not np.any(matrix - np.diag(np.diagonal(matrix)))


def _propagate(states: np.ndarray, h_eff: np.ndarray, dt: float, exact: bool = True) -> np.ndarray:
    if not exact:
        return states - 1j * dt * (states @ h_eff.T)
    if _is_diagonal(h_eff):
        return states * np.exp(-1j * dt * np.diagonal(h_eff))[None, :]
    return states @ expm(-1j * dt * h_eff).T


def _normalize_rows(states: np.ndarray, t: float) -> np.ndarray:
    norms = np.linalg.norm(states, axis=1)
    if np.any(norms < 1e-150):
        raise StepError("No-jump evolution decayed a state to zero norm", t)
    return states / norms[:, None]


def no_jump_step(
    state: np.ndarray,
    h_eff: np.ndarray,
    dt: float,
    *,
    exact: bool = True,
    normalize: bool = True,
    t: float = 0.0,
) -> np.ndarray:
    """Deterministic evolution over dt between jumps.

    `exact` applies exp(-i H_eff dt); otherwise the first-order map
    1 - i H_eff dt is used.
    """

    evolved = _propagate(np.asarray(state, dtype=complex)[None, :], h_eff, dt, exact)
    if normalize:
        evolved = _normalize_rows(evolved, t)
    elif np.linalg.norm(evolved) < 1e-150:
        raise StepError("No-jump evolution decayed a state to zero norm", t)
    return evolved[0]


def positive_jump_probability(
    state: np.ndarray,
    channel: JumpChannel,
    rate: float,
    dt: float,
    *,
    cap: float = DEFAULT_PROBABILITY_CAP,
) -> float:
    """dt * gamma * <psi|A^dagger A|psi>."""

    if rate < 0:
        raise ValueError(f"positive jumps need a non-negative rate; got {rate}.")
    weight = float(np.real(np.vdot(state, channel.product @ state)))
    probability = dt * rate * weight
    if probability > cap:
        record_probability_cap_exceeded()
        logger.warning(
            "Jump probability exceeds cap; reduce dt",
            extra={"channel": channel.label, "probability": probability, "cap": cap},
        )
    return probability


def apply_positive_jump(state: np.ndarray, channel: JumpChannel) -> np.ndarray:
    """Normalized A psi."""

    image = channel.generator @ np.asarray(state, dtype=complex)
    norm = np.linalg.norm(image)
    if norm <= WEIGHT_FLOOR:
        raise ValueError(f"channel {channel.label} annihilates the state.")
    return image / norm


@dataclass
class _NegativeOutcome:
    channel: int
    target: int
    probability: float


def _negative_outcomes(
    registry: EnsembleRegistry,
    channel_set: ChannelSet,
    gamma: np.ndarray,
    weights: np.ndarray,
    dt: float,
) -> Dict[int, List[_NegativeOutcome]]:
    """Negative-jump outcomes keyed by source group.

    Raises PositivityViolation when a required source group is missing or
    empty.
    """

    outcomes: Dict[int, List[_NegativeOutcome]] = defaultdict(list)
    for k in np.flatnonzero(gamma < 0):
        targets = np.flatnonzero((weights[:, k] > WEIGHT_FLOOR) & (registry.counts > 0))
        if targets.size == 0:
            continue
        images = registry.states[targets] @ channel_set.generators[k].T
        images /= np.linalg.norm(images, axis=1)[:, None]
        for target, image in zip(targets, images):
            source = registry.find(image)
            if source is not None and source == target:
                continue
            if source is None or registry.counts[source] == 0:
                channel = channel_set.channels[k]
                record_positivity_violation("nmqj")
                violation = PositivityViolation(
                    registry.time,
                    engine="nmqj",
                    site=channel.site + 1,
                    frequency=channel.frequency,
                    source_state=image,
                    target_state=registry.states[target],
                )
                logger.error(
                    "Negative jump needs an empty source group",
                    extra={"time": registry.time, "channel": channel.label},
                )
                raise violation
            probability = (
                registry.counts[target] * dt * abs(gamma[k]) * weights[target, k]
            ) / registry.counts[source]
            outcomes[int(source)].append(_NegativeOutcome(int(k), int(target), float(probability)))
    return outcomes


def negative_jump(
    registry: EnsembleRegistry,
    channel: JumpChannel,
    rate: float,
    dt: float,
    rng: np.random.Generator,
) -> EnsembleRegistry:
    """Move members back from source groups into the groups they jumped out of."""

    if rate >= 0:
        raise ValueError(f"negative jumps need a negative rate; got {rate}.")
    channel_set = ChannelSet([channel], registry.basis)
    weights = channel_set.weights(registry.states)
    outcomes = _negative_outcomes(registry, channel_set, np.array([rate]), weights, dt)
    counts = registry.counts.copy()
    for source in sorted(outcomes):
        moves = outcomes[source]
        probabilities = np.array([move.probability for move in moves])
        probabilities /= max(1.0, probabilities.sum())
        draw = rng.multinomial(int(registry.counts[source]), [*probabilities, 0.0])
        for move, moved in zip(moves, draw[:-1]):
            counts[source] -= moved
            counts[move.target] += moved
    keep = counts > 0
    return EnsembleRegistry(
        registry.states[keep], counts[keep], registry.total, registry.basis, registry.time, registry.step
    )


def _blocks(size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + BLOCK_SIZE, size)) for start in range(0, size, BLOCK_SIZE)]


def _map(executor: Optional[Executor], func: Callable[..., T], items: Sequence) -> List[T]:
    if executor is None or len(items) < 2:
        return [func(item) for item in items]
    return list(executor.map(func, items))


@dataclass
class _BlockDraw:
    positive: np.ndarray
    stay: np.ndarray
    negative: List[Tuple[int, int, int, int]] = field(default_factory=list)


def _sample_block(
    bounds: Tuple[int, int],
    counts: np.ndarray,
    positive: np.ndarray,
    negative: Dict[int, List[_NegativeOutcome]],
    rng: np.random.Generator,
) -> _BlockDraw:
    start, stop = bounds
    p_positive = positive[start:stop]
    p_negative = np.array(
        [sum(move.probability for move in negative.get(g, ())) for g in range(start, stop)]
    )
    total = p_positive.sum(axis=1) + p_negative
    scale = np.where(total > 1.0, 1.0 / np.maximum(total, 1.0), 1.0)
    p_positive = p_positive * scale[:, None]
    rest = np.clip(1.0 - p_positive.sum(axis=1), 0.0, 1.0)
    draws = rng.multinomial(counts[start:stop], np.hstack([p_positive, rest[:, None]]))
    stay = draws[:, -1].copy()

    moves: List[Tuple[int, int, int, int]] = []
    for source in range(start, stop):
        outcomes = negative.get(source)
        row = source - start
        if not outcomes or stay[row] == 0 or rest[row] <= 0.0:
            continue
        conditional = np.array([move.probability for move in outcomes]) * scale[row] / rest[row]
        conditional /= max(1.0, conditional.sum())
        draw = rng.multinomial(int(stay[row]), [*conditional, 0.0])
        for move, moved in zip(outcomes, draw[:-1]):
            if moved:
                moves.append((source, move.channel, move.target, int(moved)))
                stay[row] -= moved
    return _BlockDraw(positive=draws[:, :-1], stay=stay, negative=moves)


def step_ensemble(
    registry: EnsembleRegistry,
    channels: Union[ChannelSet, Sequence[JumpChannel]],
    rates: RateTable,
    dt: float,
    rng: RandomStreams,
    *,
    include_lamb: bool = False,
    monitor: Optional[ProbabilityCapMonitor] = None,
    executor: Optional[Executor] = None,
) -> Tuple[EnsembleRegistry, List[JumpEvent]]:
    """Advance the ensemble synchronously by one step of length dt.

    Rates are read at the step midpoint. Jump probabilities use the counts
    frozen at the start of the step.
    """

    if dt <= 0:
        raise ValueError(f"dt must be positive; got {dt}.")
    channel_set = _as_channel_set(channels, rates, registry.basis)
    t = registry.time
    gamma = channel_set.gamma(rates, t + 0.5 * dt)
    lamb = channel_set.lamb(rates, t + 0.5 * dt) if include_lamb else None
    blocks = _blocks(registry.n_groups)

    weights = np.concatenate(
        _map(executor, lambda b: channel_set.weights(registry.states[b[0] : b[1]]), blocks)
    )
    positive = weights * np.where(gamma > 0, dt * gamma, 0.0)[None, :]
    positive[weights <= WEIGHT_FLOOR] = 0.0
    positive[channel_set.trivial_jumps(registry.states, weights)] = 0.0
    negative = _negative_outcomes(registry, channel_set, gamma, weights, dt)

    if monitor is not None:
        outgoing = positive.sum(axis=1)
        for source, moves in negative.items():
            outgoing[source] += sum(move.probability for move in moves)
        monitor.observe(outgoing, t)

    draws = _map(
        executor,
        lambda item: _sample_block(
            item[1], registry.counts, positive, negative, rng.generator(registry.step, item[0])
        ),
        list(enumerate(blocks)),
    )
    stay = np.concatenate([draw.stay for draw in draws])
    positive_moves = np.concatenate([draw.positive for draw in draws])
    negative_moves = [move for draw in draws for move in draw.negative]

    jump_groups, jump_channels = np.nonzero(positive_moves)
    jump_counts = positive_moves[jump_groups, jump_channels]
    images = np.einsum(
        "rij,rj->ri", channel_set.generators[jump_channels], registry.states[jump_groups]
    )
    kept = np.flatnonzero(stay > 0)
    states = np.vstack(
        [
            registry.states[kept],
            images,
            registry.states[[move[2] for move in negative_moves]].reshape(-1, registry.basis.n),
        ]
    )
    counts = np.concatenate(
        [stay[kept], jump_counts, np.array([move[3] for move in negative_moves], dtype=np.int64)]
    )

    h_eff = channel_set.effective(gamma, lamb)
    evolved = _normalize_rows(_propagate(states, h_eff, dt), t)

    new_states, new_counts, landing = merge_groups(evolved, counts)
    if int(new_counts.sum()) != registry.total:
        raise StepError(
            f"member count changed from {registry.total} to {int(new_counts.sum())}", t
        )

    events: List[JumpEvent] = []
    offset = kept.size
    for position, (g, k, moved) in enumerate(zip(jump_groups, jump_channels, jump_counts)):
        channel = channel_set.channels[k]
        events.append(
            JumpEvent(
                registry.step, t, channel.site, channel.frequency, JumpDirection.POSITIVE,
                int(g), int(landing[offset + position]), int(moved),
            )
        )
    offset += jump_groups.size
    for position, (source, k, _target, moved) in enumerate(negative_moves):
        channel = channel_set.channels[k]
        events.append(
            JumpEvent(
                registry.step, t, channel.site, channel.frequency, JumpDirection.NEGATIVE,
                source, int(landing[offset + position]), moved,
            )
        )

    positive_total = int(jump_counts.sum())
    negative_total = sum(move[3] for move in negative_moves)
    if positive_total:
        record_jumps("positive", positive_total)
    if negative_total:
        record_jumps("negative", negative_total)
    record_ensemble_step(new_counts.size)

    updated = EnsembleRegistry(
        new_states, new_counts, registry.total, registry.basis, t + dt, registry.step + 1
    )
    return updated, events


def exciton_density(registry: EnsembleRegistry) -> np.ndarray:
    """sum_g (N_g / N) |psi_g><psi_g| in the exciton basis."""

    weights = registry.counts / registry.total
    return (registry.states.T * weights) @ registry.states.conj()


def reconstruct_density(registry: EnsembleRegistry) -> DensityMatrix:
    """Ensemble density matrix in the site basis."""

    return DensityMatrix(registry.basis.to_site(exciton_density(registry)), registry.time)


@dataclass(frozen=True, eq=False)
class EnsembleTrajectory(TclTrajectory):
    """Sampled ensemble trajectory with per-sample group and jump counts.

    ``jumps_positive[k]`` and ``jumps_negative[k]`` count members moved
    since the previous sample.
    """

    n_groups: np.ndarray
    jumps_positive: np.ndarray
    jumps_negative: np.ndarray
    final: EnsembleRegistry
    max_probability: float = 0.0


def evolve_ensemble(
    registry: EnsembleRegistry,
    t_final: float,
    dt: float,
    channels: Sequence[JumpChannel],
    rates: RateTable,
    *,
    seed: int,
    include_lamb: bool = False,
    probability_cap: float = DEFAULT_PROBABILITY_CAP,
    threads: int = 1,
    sample_every: int = 1,
    jump_log: Optional[JumpLog] = None,
) -> EnsembleTrajectory:
    """Step the ensemble from its current time to t_final."""

    if dt <= 0:
        raise ValueError(f"dt must be positive; got {dt}.")
    if sample_every < 1:
        raise ValueError(f"sample_every must be at least 1; got {sample_every}.")
    n_steps = int(round((t_final - registry.time) / dt))
    if n_steps < 0:
        raise ValueError(f"t_final ({t_final}) precedes the registry time ({registry.time}).")

    channel_set = ChannelSet(channels, registry.basis, rates)
    streams = RandomStreams(seed)
    monitor = ProbabilityCapMonitor(probability_cap)
    t0 = registry.time
    times = [t0]
    densities = [exciton_density(registry)]
    groups = [registry.n_groups]
    jumps_pos = [0]
    jumps_neg = [0]
    pending = {JumpDirection.POSITIVE: 0, JumpDirection.NEGATIVE: 0}

    executor = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for index in range(n_steps):
            registry, events = step_ensemble(
                registry, channel_set, rates, dt, streams,
                include_lamb=include_lamb, monitor=monitor, executor=executor,
            )
            for event in events:
                pending[event.direction] += event.count
            if jump_log is not None:
                jump_log.extend(events)
            if (index + 1) % sample_every == 0 or index + 1 == n_steps:
                times.append(t0 + (index + 1) * dt)
                densities.append(exciton_density(registry))
                groups.append(registry.n_groups)
                jumps_pos.append(pending[JumpDirection.POSITIVE])
                jumps_neg.append(pending[JumpDirection.NEGATIVE])
                pending = {JumpDirection.POSITIVE: 0, JumpDirection.NEGATIVE: 0}
    finally:
        if executor is not None:
            executor.shutdown(wait=True)

    basis = registry.basis
    exciton = np.stack(densities)
    exciton = 0.5 * (exciton + np.conj(np.transpose(exciton, (0, 2, 1))))
    site = np.einsum("im,kmn,jn->kij", basis.coefficients, exciton, basis.coefficients)
    logger.debug(
        "Ensemble evolution finished",
        extra={
            "steps": n_steps,
            "groups": registry.n_groups,
            "cap_exceeded": monitor.exceeded,
            "max_probability": monitor.max_probability,
        },
    )
    return EnsembleTrajectory(
        times=np.asarray(times),
        rho=site,
        min_eigenvalues=np.linalg.eigvalsh(exciton)[:, 0],
        basis=basis,
        n_groups=np.asarray(groups),
        jumps_positive=np.asarray(jumps_pos),
        jumps_negative=np.asarray(jumps_neg),
        final=registry,
        max_probability=monitor.max_probability,
    )
