"""Composite Gauss-Legendre quadrature over a truncated frequency axis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Tuple, Union

import numpy as np
from scipy.special import roots_legendre

from .errors import QuadratureError
from .logging import get_logger
from .metrics import record_quadrature_refinement

DEFAULT_ORDER = 8
DEFAULT_RTOL = 1e-6
MAX_DOUBLINGS = 6

Integrand = Callable[[np.ndarray], np.ndarray]

_logger = get_logger("exciton_nmqj.bath")


@dataclass(frozen=True)
class FrequencyGrid:
    """Quadrature nodes and weights on [0, upper]."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    def integrate(self, values: np.ndarray) -> Union[float, np.ndarray]:
        """Contract sampled values (last axis = nodes) with the weights."""

        return values @ self.weights


@lru_cache(maxsize=8)
def _reference_rule(order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = roots_legendre(order)
    return nodes, weights


def panel_grid(upper: float, panels: int, order: int = DEFAULT_ORDER) -> FrequencyGrid:
    """Gauss-Legendre rule of `order` points on each of `panels` equal panels."""

    if upper <= 0:
        raise ValueError(f"upper must be positive; got {upper}.")
    if panels < 1:
        raise ValueError(f"panels must be at least 1; got {panels}.")
    ref_nodes, ref_weights = _reference_rule(order)
    width = upper / panels
    left = np.arange(panels, dtype=float) * width
    nodes = (left[:, None] + 0.5 * width * (ref_nodes[None, :] + 1.0)).ravel()
    weights = np.tile(0.5 * width * ref_weights, panels)
    return FrequencyGrid(nodes=nodes, weights=weights)


def panel_count(upper: float, panel_width: float) -> int:
    return max(1, int(math.ceil(upper / panel_width)))


def integrate_adaptive(
    integrand: Integrand,
    upper: float,
    panel_width: float,
    *,
    rtol: float = DEFAULT_RTOL,
    order: int = DEFAULT_ORDER,
    label: str = "integral",
) -> Tuple[Union[float, np.ndarray], FrequencyGrid]:
    """Integrate over [0, upper], doubling panels until two passes agree.

    The integrand maps a node array to values whose last axis runs over the
    nodes, so several integrals sharing a grid converge together. Returns the
    refined estimate and the grid that produced it.
    """

    panels = panel_count(upper, panel_width)
    grid = panel_grid(upper, panels, order)
    samples = integrand(grid.nodes)
    coarse = grid.integrate(samples)
    error = float("inf")
    tolerance = 0.0
    for _ in range(MAX_DOUBLINGS):
        panels *= 2
        grid = panel_grid(upper, panels, order)
        samples = integrand(grid.nodes)
        fine = grid.integrate(samples)
        l1 = float(np.max(np.abs(samples) @ grid.weights)) if np.size(samples) else 0.0
        error = float(np.max(np.abs(np.asarray(fine) - np.asarray(coarse))))
        tolerance = max(rtol * float(np.max(np.abs(fine))), 1e-12 * l1)
        if error <= tolerance:
            return fine, grid
        record_quadrature_refinement()
        _logger.debug(
            "Refining frequency quadrature",
            extra={"label": label, "panels": panels, "error": error, "tolerance": tolerance},
        )
        coarse = fine
    raise QuadratureError(label, error, tolerance)
