"""Refinement indicators - vectorized inside/outside tests for built-in isosurfaces."""

import math
from typing import Any, Callable, Dict, Optional

import numpy as np

from stagger_mesh.primal_grid import GridError


Indicator = Callable[[np.ndarray], np.ndarray]

INDICATOR_NAMES = ("paraboloid", "sphere", "cone", "uniform")


def _rotation(tilt_x_degrees: float, tilt_y_degrees: float) -> np.ndarray:
    ax = math.radians(tilt_x_degrees)
    ay = math.radians(tilt_y_degrees)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, math.cos(ax), -math.sin(ax)], [0.0, math.sin(ax), math.cos(ax)]])
    ry = np.array([[math.cos(ay), 0.0, math.sin(ay)], [0.0, 1.0, 0.0], [-math.sin(ay), 0.0, math.cos(ay)]])
    return ry @ rx


def paraboloid_indicator(params: Dict[str, Any], dim: int = 3) -> Indicator:
    """
    Inside test of a tilted elliptic paraboloid z' > a x'^2 + b y'^2 - offset.

    Coordinates are shifted by the centre and rotated about x, then y. In 2D
    the parabola y' > a x'^2 - offset is rotated by the x tilt.
    """
    a, b = params["coefficients"]
    offset = float(params["offset"])
    center = np.asarray(params["center"], dtype=float)[:dim]
    if dim == 3:
        rotation = _rotation(params["tilt_x_degrees"], params["tilt_y_degrees"])

        def indicator(points: np.ndarray) -> np.ndarray:
            local = (np.asarray(points, dtype=float) - center) @ rotation.T
            x, y, z = local[:, 0], local[:, 1], local[:, 2]
            return z - (a * x * x + b * y * y - offset) > 0.0
    else:
        angle = math.radians(params["tilt_x_degrees"])
        rotation = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])

        def indicator(points: np.ndarray) -> np.ndarray:
            local = (np.asarray(points, dtype=float) - center) @ rotation.T
            return local[:, 1] - (a * local[:, 0] ** 2 - offset) > 0.0

    return indicator


def sphere_indicator(center, radius: float, dim: int = 3) -> Indicator:
    """Inside test of a ball (disc in 2D)."""
    center = np.asarray(center, dtype=float)[:dim]
    r2 = float(radius) ** 2

    def indicator(points: np.ndarray) -> np.ndarray:
        diff = np.asarray(points, dtype=float) - center
        return (diff * diff).sum(axis=1) < r2

    return indicator


def make_indicator(name: str, dim: int, experiments: Dict[str, Dict[str, Any]]) -> Optional[Indicator]:
    """
    Build a built-in indicator from experiment parameters.

    "cone" resolves the support sphere of the rotating cone; "uniform"
    returns None (no surface to follow).

    Raises:
        GridError: If the name is unknown
    """
    if name == "paraboloid":
        return paraboloid_indicator(experiments["paraboloid"], dim)
    if name == "sphere":
        sphere = experiments["sphere"]
        return sphere_indicator(sphere["center"], sphere["radius"], dim)
    if name == "cone":
        cone = experiments["cone"]
        return sphere_indicator(cone["center"], cone["radius"], dim)
    if name == "uniform":
        return None
    raise GridError(f"Unknown indicator '{name}' (choose from {', '.join(INDICATOR_NAMES)})")
