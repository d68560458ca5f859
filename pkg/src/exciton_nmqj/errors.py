"""Exception types raised by the simulation engines."""

from __future__ import annotations

from typing import Any, Dict, Optional, Sequence

import numpy as np


class SimulationError(Exception):
    """Base class for simulation failures."""


class QuadratureError(SimulationError):
    """Raised when a frequency integral fails to converge."""

    def __init__(self, label: str, achieved: float, tolerance: float) -> None:
        self.label = label
        self.achieved = achieved
        self.tolerance = tolerance
        super().__init__(
            f"Quadrature for {label} did not converge: error estimate {achieved:.3e} "
            f"exceeds tolerance {tolerance:.3e}."
        )


class StepError(SimulationError):
    """Raised when a propagation step cannot be completed."""

    def __init__(self, message: str, time: float) -> None:
        self.time = time
        super().__init__(f"{message} (t = {time:.6f} ps)")


def _format_state(state: Optional[Sequence[complex]]) -> str:
    if state is None:
        return "n/a"
    values = np.asarray(state, dtype=complex)
    parts = [f"{value.real:+.4f}{value.imag:+.4f}j" for value in values]
    return "[" + ", ".join(parts) + "]"


class PositivityViolation(SimulationError):
    """The propagated density matrix left the set of physical states.

    Raised by the jump engine when a negative jump needs members from an empty
    source group, and reported by the deterministic engine when the minimum
    eigenvalue drops below the configured tolerance.
    """

    def __init__(
        self,
        time: float,
        *,
        engine: str,
        site: Optional[int] = None,
        frequency: Optional[float] = None,
        source_state: Optional[Sequence[complex]] = None,
        target_state: Optional[Sequence[complex]] = None,
        min_eigenvalue: Optional[float] = None,
    ) -> None:
        self.time = time
        self.engine = engine
        self.site = site
        self.frequency = frequency
        self.source_state = None if source_state is None else np.asarray(source_state, dtype=complex)
        self.target_state = None if target_state is None else np.asarray(target_state, dtype=complex)
        self.min_eigenvalue = min_eigenvalue
        super().__init__(self._summary())

    def _summary(self) -> str:
        text = f"Positivity violation in {self.engine} engine at t = {self.time:.6f} ps"
        if self.frequency is not None:
            text += f" on channel site={self.site} omega={self.frequency:.6g} cm^-1"
        if self.min_eigenvalue is not None:
            text += f" (min eigenvalue {self.min_eigenvalue:.3e})"
        return text

    def diagnostic(self) -> str:
        """Multi-line report for standard error."""

        lines = [
            self._summary(),
            f"  time_ps: {self.time:.9e}",
        ]
        if self.frequency is not None:
            lines.append(f"  channel: site {self.site}, omega {self.frequency:.9e} cm^-1")
        if self.min_eigenvalue is not None:
            lines.append(f"  min_eigenvalue: {self.min_eigenvalue:.9e}")
        if self.source_state is not None or self.target_state is not None:
            lines.append(f"  source_state: {_format_state(self.source_state)}")
            lines.append(f"  target_state: {_format_state(self.target_state)}")
        return "\n".join(lines)

    def to_dict(self) -> Dict[str, Any]:
        """Mapping used in run manifests."""

        def _pairs(state: Optional[np.ndarray]) -> Optional[list]:
            if state is None:
                return None
            return [[float(value.real), float(value.imag)] for value in state]

        return {
            "engine": self.engine,
            "time_ps": self.time,
            "site": self.site,
            "frequency_cm": self.frequency,
            "min_eigenvalue": self.min_eigenvalue,
            "source_state": _pairs(self.source_state),
            "target_state": _pairs(self.target_state),
        }
