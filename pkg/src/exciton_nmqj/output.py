"""CSV and manifest writers for command-line runs."""

from __future__ import annotations

import json
import platform
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .bath import RateTable
from .tcl import TclTrajectory

FLOAT_FORMAT = "%.8e"


def _label(omega: float) -> str:
    return f"{omega:.6g}"


def _write_table(path: Path, header: Sequence[str], columns: Sequence[np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([np.asarray(column, dtype=float) for column in columns])
    np.savetxt(path, table, fmt=FLOAT_FORMAT, delimiter=",", header=",".join(header), comments="")
    return path


def upper_triangle_labels(n: int) -> List[str]:
    """Row-major upper-triangle (m <= n) index labels, 1-based."""

    return [f"{row + 1}{col + 1}" for row in range(n) for col in range(row, n)]


def trajectory_columns(trajectory: TclTrajectory) -> List[np.ndarray]:
    n = trajectory.rho.shape[1]
    rows, cols = np.triu_indices(n)
    entries = trajectory.rho[:, rows, cols]
    return (
        [trajectory.times]
        + [entries[:, i].real for i in range(rows.size)]
        + [entries[:, i].imag for i in range(rows.size)]
        + [trajectory.min_eigenvalues]
    )


def trajectory_header(n: int) -> List[str]:
    labels = upper_triangle_labels(n)
    return ["t_ps"] + [f"rho_re_{label}" for label in labels] + [f"rho_im_{label}" for label in labels] + ["min_eig"]


def write_trajectory_csv(path: Path, trajectory: TclTrajectory) -> Path:
    """t_ps, rho_re_mn..., rho_im_mn..., min_eig, plus ensemble columns when present."""

    n = trajectory.rho.shape[1]
    header = trajectory_header(n)
    columns = trajectory_columns(trajectory)
    if hasattr(trajectory, "n_groups"):
        header += ["n_groups", "jumps_pos", "jumps_neg"]
        columns += [trajectory.n_groups, trajectory.jumps_positive, trajectory.jumps_negative]
    return _write_table(path, header, columns)


def write_populations_csv(path: Path, trajectory: TclTrajectory, *, exciton: bool = False) -> Path:
    """t_ps, p_1..p_n (site populations, or exciton populations when `exciton`)."""

    populations = trajectory.exciton_populations() if exciton else trajectory.site_populations()
    prefix = "pe" if exciton else "p"
    header = ["t_ps"] + [f"{prefix}_{index + 1}" for index in range(populations.shape[1])]
    return _write_table(path, header, [trajectory.times] + list(populations.T))


def _rate_order(rates: RateTable) -> List[int]:
    """Dephasing column first, then the signed frequencies in table order."""

    dephasing = rates.index_of(0.0)
    return [dephasing] + [f for f in range(rates.frequencies.size) if f != dephasing]


def write_rates_csv(path: Path, rates: RateTable) -> Path:
    """t_ps, gamma_dephasing, gamma_<omega>... with the Markovian row appended as t = inf."""

    order = _rate_order(rates)
    labels = ["dephasing"] + [_label(rates.frequencies[f]) for f in order[1:]]
    header = ["t_ps"] + [f"gamma_{label}" for label in labels]
    columns = [rates.times] + [rates.gamma[:, f] for f in order]
    if rates.lamb is not None:
        header += [f"lamb_{label}" for label in labels]
        columns += [rates.lamb[:, f] for f in order]
    path = _write_table(path, header, columns)
    markov = [np.inf] + list(rates.markovian_gamma[order])
    if rates.lamb is not None:
        markov += [np.nan] * len(order)
    with Path(path).open("a", encoding="utf-8") as handle:
        np.savetxt(handle, np.asarray(markov)[None, :], fmt=FLOAT_FORMAT, delimiter=",")
    return path


def write_scan_csv(path: Path, rows: Sequence[Mapping[str, float]]) -> Path:
    """value, pbar_markov, pbar_nm, violation_flag."""

    header = ["value", "pbar_markov", "pbar_nm", "violation_flag"]
    columns = [np.array([row[name] for row in rows], dtype=float) for name in header]
    return _write_table(path, header, columns)


@dataclass
class RunManifest:
    """Record of one command-line run."""

    command: str
    config: Dict[str, Any]
    seed: Optional[int]
    engine: Optional[str]
    wall_time_s: float = 0.0
    code_version: str = __version__
    outputs: List[str] = field(default_factory=list)
    violations: List[Dict[str, Any]] = field(default_factory=list)
    started_at: str = field(default_factory=lambda: datetime.now(tz=timezone.utc).isoformat())
    python_version: str = field(default_factory=platform.python_version)
    numpy_version: str = np.__version__

    def add_output(self, path: Path) -> None:
        self.outputs.append(str(path))

    def missing_outputs(self) -> List[str]:
        """Listed outputs that do not exist or are empty."""

        return [
            name for name in self.outputs if not Path(name).exists() or Path(name).stat().st_size == 0
        ]

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def write(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")
        return path
