"""Prometheus metrics helpers."""

from __future__ import annotations

from pathlib import Path
from typing import Union

try:
    from prometheus_client import (  # type: ignore
        CollectorRegistry,
        Counter,
        Gauge,
        Histogram,
        write_to_textfile,
    )
except ModuleNotFoundError:  # pragma: no cover - fallback for constrained environments
    class _NoopMetric:
        def __init__(self, *args: object, **kwargs: object) -> None:
            return None

        def labels(self, **_: str) -> "_NoopMetric":
            return self

        def inc(self, amount: float = 1.0) -> None:
            return None

        def observe(self, _: float) -> None:
            return None

        def set(self, _: float) -> None:
            return None

    class CollectorRegistry:  # type: ignore[empty-body]
        def __init__(self, *args: object, **kwargs: object) -> None:
            return None

    def write_to_textfile(path: str, _: CollectorRegistry) -> None:
        Path(path).write_text("")

    Counter = Gauge = Histogram = _NoopMetric  # type: ignore

_REGISTRY = CollectorRegistry()

NMQJ_JUMPS = Counter(
    "exciton_nmqj_jumps_total",
    "Ensemble members moved by quantum jumps",
    ["direction"],
    registry=_REGISTRY,
)
NMQJ_STEPS = Counter(
    "exciton_nmqj_steps_total",
    "Synchronous ensemble steps taken",
    registry=_REGISTRY,
)
NMQJ_GROUPS = Gauge(
    "exciton_nmqj_groups",
    "Distinct state groups in the ensemble registry after the last step",
    registry=_REGISTRY,
)
NMQJ_CAP_EXCEEDED = Counter(
    "exciton_nmqj_probability_cap_exceeded_total",
    "Group-steps whose total jump probability exceeded the configured cap",
    registry=_REGISTRY,
)
TCL_STEPS = Counter(
    "exciton_tcl_steps_total",
    "Runge-Kutta steps accepted by the master-equation integrator",
    registry=_REGISTRY,
)
TCL_REJECTIONS = Counter(
    "exciton_tcl_step_rejections_total",
    "Runge-Kutta steps halved because of trace drift",
    registry=_REGISTRY,
)
RATE_TABLE_BUILDS = Counter(
    "exciton_rate_table_builds_total",
    "Rate tables constructed",
    ["kind"],
    registry=_REGISTRY,
)
QUADRATURE_REFINEMENTS = Counter(
    "exciton_quadrature_refinements_total",
    "Panel doublings needed beyond the first refinement check",
    registry=_REGISTRY,
)
POSITIVITY_VIOLATIONS = Counter(
    "exciton_positivity_violations_total",
    "Runs or scan points that left the set of physical states",
    ["engine"],
    registry=_REGISTRY,
)
RUN_DURATION = Histogram(
    "exciton_run_duration_seconds",
    "Wall time of CLI commands",
    ["command"],
    registry=_REGISTRY,
    buckets=[0.1, 0.5, 1, 2, 5, 10, 30, 60, 120, 300, 900],
)


def get_registry() -> CollectorRegistry:
    """Return the registry holding the simulation metrics."""

    return _REGISTRY


def write_metrics_file(path: Union[str, Path]) -> Path:
    """Write the registry to `path` in the node-exporter textfile format."""

    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    write_to_textfile(str(target), _REGISTRY)
    return target


def record_jumps(direction: str, count: int) -> None:
    if count > 0:
        NMQJ_JUMPS.labels(direction=direction).inc(count)


def record_ensemble_step(groups: int) -> None:
    NMQJ_STEPS.inc()
    NMQJ_GROUPS.set(groups)


def record_probability_cap_exceeded() -> None:
    NMQJ_CAP_EXCEEDED.inc()


def record_tcl_step(rejected: bool = False) -> None:
    if rejected:
        TCL_REJECTIONS.inc()
    else:
        TCL_STEPS.inc()


def record_rate_table(kind: str) -> None:
    RATE_TABLE_BUILDS.labels(kind=kind).inc()


def record_quadrature_refinement() -> None:
    QUADRATURE_REFINEMENTS.inc()


def record_positivity_violation(engine: str) -> None:
    POSITIVITY_VIOLATIONS.labels(engine=engine).inc()


def observe_run(command: str, duration_seconds: float) -> None:
    """Record the wall time of a CLI command."""

    RUN_DURATION.labels(command=command).observe(duration_seconds)
