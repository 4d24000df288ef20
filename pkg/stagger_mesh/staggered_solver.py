"""Staggered solver - first-order central finite-volume advection alternating primal and dual grids."""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from stagger_mesh.config import DEFAULT_EXPERIMENTS, Config
from stagger_mesh.dual_assembly import DualMesh, FluxPieces, assemble, vertex_clearance
from stagger_mesh.pattern_engine import PatternTable
from stagger_mesh.primal_grid import PrimalGrid


logger = logging.getLogger(__name__)

BOUNDARY_MODES = ("zero_inflow", "extrapolate")
CFL_SLACK = 1e-12
AVERAGE_SAMPLES = 3

CONE_NOTE = "cone profile: r normalized by R; octant taken relative to the cone centre"


class SolverError(Exception):
    """Custom exception for staggered solver errors."""
    pass


@dataclass
class Field:
    """Cell averages on the primal grid (one per leaf) or the dual grid (one per node)."""

    tag: str
    values: np.ndarray

    def __post_init__(self):
        if self.tag not in ("primal", "dual"):
            raise SolverError(f"Field tag must be 'primal' or 'dual', got '{self.tag}'")
        self.values = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(self.values)):
            raise SolverError(f"{self.tag} field contains non-finite values")

    def mass(self, volumes: np.ndarray) -> float:
        return float(np.dot(self.values, volumes))


class RotatingVelocity:
    """Rigid rotation a(x) = w * axis x (x - c); planar rotation about c in 2D."""

    def __init__(self, center: Sequence[float], angular_speed: float = 1.0,
                 plane_u: Sequence[float] = (1.0, 0.0, 0.0), plane_v: Sequence[float] = (0.0, 1.0, 0.0)):
        self.center = np.asarray(center, dtype=float)
        self.dim = len(self.center)
        self.angular_speed = float(angular_speed)
        if self.dim == 3:
            axis = np.cross(np.asarray(plane_u, dtype=float), np.asarray(plane_v, dtype=float))
            norm = np.linalg.norm(axis)
            if norm == 0.0:
                raise SolverError("Spin plane vectors are parallel")
            self.axis = axis / norm
        else:
            self.axis = None

    @classmethod
    def from_experiments(cls, cone: Dict[str, Any], dim: int = 3) -> "RotatingVelocity":
        return cls(cone["center"][:dim], cone["angular_speed"], cone["plane_u"], cone["plane_v"])

    def __call__(self, points: np.ndarray) -> np.ndarray:
        rel = np.asarray(points, dtype=float) - self.center
        if self.dim == 3:
            return self.angular_speed * np.cross(self.axis, rel)
        return self.angular_speed * np.stack([-rel[:, 1], rel[:, 0]], axis=1)

    def rotate(self, points: np.ndarray, angle: float) -> np.ndarray:
        """Rotate points about the centre by angle (Rodrigues' formula in 3D)."""
        rel = np.asarray(points, dtype=float) - self.center
        c, s = math.cos(angle), math.sin(angle)
        if self.dim == 2:
            rotated = np.stack([c * rel[:, 0] - s * rel[:, 1], s * rel[:, 0] + c * rel[:, 1]], axis=1)
        else:
            k = self.axis
            rotated = rel * c + np.cross(k, rel) * s + np.outer(rel @ k, k) * (1.0 - c)
        return rotated + self.center

    def flow(self, points: np.ndarray, t: float) -> np.ndarray:
        """Positions at time t of particles starting at points."""
        return self.rotate(points, self.angular_speed * t)


class ConstantVelocity:
    """Uniform velocity field."""

    def __init__(self, vector: Sequence[float]):
        self.vector = np.asarray(vector, dtype=float)
        self.dim = len(self.vector)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.vector, np.shape(points)).copy()

    def flow(self, points: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(points, dtype=float) + t * self.vector


@dataclass
class SchemeConfig:
    """Time stepping settings."""

    cfl: float = field(default_factory=lambda: Config.CFL_SAFETY)
    end_time: float = math.pi / 4.0
    boundary: str = "zero_inflow"
    report_every: int = 1

    def __post_init__(self):
        if not 0.0 < self.cfl <= 1.0:
            raise SolverError(f"CFL safety factor must be in (0, 1], got {self.cfl}")
        if self.end_time < 0.0:
            raise SolverError(f"End time must be nonnegative, got {self.end_time}")
        if self.boundary not in BOUNDARY_MODES:
            raise SolverError(f"Unknown boundary treatment '{self.boundary}' (choose from {', '.join(BOUNDARY_MODES)})")
        if self.report_every < 1:
            raise SolverError(f"report_every must be positive, got {self.report_every}")


def cone_profile(points: np.ndarray, center: Sequence[float], radius: float) -> np.ndarray:
    """
    Cone-shaped profile peaking on the positive octant of the sphere |x - c| = R.

    With r^2 = |x - c|^2 / R^2 and q = 4|1 - r^2|:
    f = 1 - 2q^2 for q < 1/2, 2(q - 1)^2 for 1/2 <= q <= 1, 0 otherwise; f
    vanishes outside the octant x - c >= 0 (componentwise).
    """
    rel = np.asarray(points, dtype=float) - np.asarray(center, dtype=float)
    r2 = (rel * rel).sum(axis=1) / radius ** 2
    q = 4.0 * np.abs(1.0 - r2)
    f = np.where(q < 0.5, 1.0 - 2.0 * q * q, np.where(q <= 1.0, 2.0 * (q - 1.0) ** 2, 0.0))
    return np.where((rel >= 0.0).all(axis=1), f, 0.0)


def cell_averages(grid: PrimalGrid, function: Callable[[np.ndarray], np.ndarray],
                  samples: int = AVERAGE_SAMPLES) -> np.ndarray:
    """Leaf averages by the midpoint rule on samples^dim sub-cells."""
    t = (np.arange(samples) + 0.5) / samples
    offsets = np.array(list(itertools.product(t, repeat=grid.dim)))
    h = 2.0 ** (-grid.leaf_levels.astype(float))
    lows = grid.leaf_coords * h[:, None]
    points = lows[:, None, :] + h[:, None, None] * offsets[None, :, :]
    values = function(points.reshape(-1, grid.dim)).reshape(grid.num_leaves, len(offsets))
    return values.mean(axis=1)


def init_cone(grid: PrimalGrid, cone: Dict[str, Any]) -> Field:
    """Primal cell averages of the cone profile."""
    center = np.asarray(cone["center"], dtype=float)[:grid.dim]
    values = cell_averages(grid, lambda p: cone_profile(p, center, cone["radius"]))
    return Field("primal", values)


def exact_cone(grid: PrimalGrid, t: float, velocity, cone: Dict[str, Any]) -> Field:
    """Primal cell averages of the transported cone at time t (samples traced back along the flow)."""
    center = np.asarray(cone["center"], dtype=float)[:grid.dim]
    values = cell_averages(grid, lambda p: cone_profile(velocity.flow(p, -t), center, cone["radius"]))
    return Field("primal", values)


class StaggeredOperator:
    """Precomputed overlap and flux matrices for one mesh and velocity field.

    primal -> dual: u = (O v - dt Fp v) / |C*|
    dual -> primal: v = (O^T u - dt Fd u) / |C|
    """

    def __init__(self, mesh: DualMesh, velocity, scheme: Optional[SchemeConfig] = None):
        self.mesh = mesh
        self.velocity = velocity
        self.scheme = scheme or SchemeConfig()
        grid = mesh.grid
        self.dual_volumes = mesh.volumes
        self.primal_volumes = mesh.leaf_volumes
        n_d, n_p = mesh.num_cells, grid.num_leaves

        rows, cols, data = [], [], []
        for group in mesh.groups:
            volumes = np.array([float(group.pattern.regions[c].volume) for c in group.columns])
            rows.append(group.node_index.ravel())
            cols.append(np.repeat(group.leaves, len(group.columns)))
            data.append((self.primal_volumes[group.leaves][:, None] * volumes[None, :]).ravel())
        self.overlap = sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))), shape=(n_d, n_p)
        )

        surface = mesh.surface_terms
        self.primal_flux = self._flux_matrix(surface, surface.owner, surface.leaf, (n_d, n_p), surface.neighbor)
        traces = mesh.trace_terms
        self.dual_flux = self._flux_matrix(traces, traces.leaf, traces.owner, (n_p, n_d))

        points = np.concatenate([surface.points, traces.points])
        self.a_max = float(np.linalg.norm(velocity(points), axis=1).max()) if len(points) else 0.0
        self.d_min = min(vertex_clearance(mesh), node_clearance(grid))
        logger.debug("Operator ready: a_max %.6g, d_min %.6g", self.a_max, self.d_min)

    def _flux_matrix(self, terms: FluxPieces, rows: np.ndarray, cols: np.ndarray, shape: Tuple[int, int],
                     opposite: Optional[np.ndarray] = None) -> sparse.csr_matrix:
        """Outgoing flux of every row cell, evaluated with the value of the column cell.

        On the domain boundary only outflow counts, unless values are extrapolated.
        """
        outflow, inflow = terms.normal_flux(self.velocity)
        net = outflow + inflow
        boundary_flux = net if self.scheme.boundary == "extrapolate" else outflow
        own = np.where(terms.on_boundary, boundary_flux, net)
        all_rows, all_cols, data = [rows], [cols], [own]
        if opposite is not None:
            inner = opposite >= 0
            all_rows.append(opposite[inner])
            all_cols.append(cols[inner])
            data.append(-net[inner])
        return sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(all_rows), np.concatenate(all_cols))), shape=shape
        )

    def max_timestep(self, cfl: Optional[float] = None, end_time: Optional[float] = None) -> float:
        """sigma * 2 * d_min / a_max, or the end time for a resting field."""
        cfl = self.scheme.cfl if cfl is None else cfl
        end_time = self.scheme.end_time if end_time is None else end_time
        if self.a_max == 0.0:
            return end_time
        return cfl * 2.0 * self.d_min / self.a_max

    def _check_step(self, dt: float) -> None:
        if dt < 0.0:
            raise SolverError(f"Time step must be nonnegative, got {dt}")
        if self.a_max > 0.0:
            limit = self.max_timestep(end_time=math.inf)
            if dt > limit * (1.0 + CFL_SLACK):
                raise SolverError(f"Time step {dt:.6g} violates the CFL limit {limit:.6g}")

    def primal_to_dual(self, state: Field, dt: float) -> Field:
        if state.tag != "primal":
            raise SolverError("primal_to_dual expects a primal field")
        self._check_step(dt)
        v = state.values
        return Field("dual", (self.overlap @ v - dt * (self.primal_flux @ v)) / self.dual_volumes)

    def dual_to_primal(self, state: Field, dt: float) -> Field:
        if state.tag != "dual":
            raise SolverError("dual_to_primal expects a dual field")
        self._check_step(dt)
        u = state.values
        return Field("primal", (self.overlap.T @ u - dt * (self.dual_flux @ u)) / self.primal_volumes)


def node_clearance(grid: PrimalGrid) -> float:
    """Half the smallest L-infinity distance between two primal nodes."""
    nodes = grid.node_array.astype(float) / (1 << grid.max_level)
    if len(nodes) < 2:
        return math.inf
    distances, _ = cKDTree(nodes).query(nodes, k=2, p=np.inf)
    return 0.5 * float(distances[:, 1].min())


def max_timestep(mesh: DualMesh, velocity, scheme: Optional[SchemeConfig] = None) -> float:
    """
    Largest admissible half-step, sigma * 2 * d_min / a_max.

    d_min is the smallest clearance of a flux quadrature node from the
    boundary of the staggered cell holding it; a_max the largest speed over
    all quadrature nodes. A resting field gets the end time.
    """
    return StaggeredOperator(mesh, velocity, scheme).max_timestep()


def half_step_primal_to_dual(state: Field, mesh: DualMesh, velocity, dt: float,
                             scheme: Optional[SchemeConfig] = None) -> Field:
    """
    Advance primal cell averages by dt onto the dual cells.

    Raises:
        SolverError: If dt exceeds the CFL limit or the field is not primal
    """
    return StaggeredOperator(mesh, velocity, scheme).primal_to_dual(state, dt)


def half_step_dual_to_primal(state: Field, mesh: DualMesh, velocity, dt: float,
                             scheme: Optional[SchemeConfig] = None) -> Field:
    """
    Advance dual cell averages by dt onto the primal leaves.

    Raises:
        SolverError: If dt exceeds the CFL limit or the field is not dual
    """
    return StaggeredOperator(mesh, velocity, scheme).dual_to_primal(state, dt)


REPORT_HEADER = ["step", "t", "mass", "min", "max", "L1err", "Linferr"]


@dataclass
class AdvectionResult:
    """Final state and error report of an advection run."""

    final: Field
    exact: Field
    rows: List[List[Any]]
    dt: float
    steps: int
    l1_error: float
    linf_error: float
    initial_mass: float
    final_mass: float
    envelope: Tuple[float, float]
    note: str = CONE_NOTE

    @property
    def mass_drift(self) -> float:
        return abs(self.final_mass - self.initial_mass)

    @property
    def relative_mass_drift(self) -> float:
        return self.mass_drift / abs(self.initial_mass) if self.initial_mass else self.mass_drift


def _errors(values: np.ndarray, exact: np.ndarray, volumes: np.ndarray) -> Tuple[float, float]:
    diff = np.abs(values - exact)
    return float(np.dot(diff, volumes)), float(diff.max()) if len(diff) else 0.0


def run_advection(
    grid: PrimalGrid,
    table: PatternTable,
    scheme: Optional[SchemeConfig] = None,
    cone: Optional[Dict[str, Any]] = None,
    velocity=None,
    on_step: Optional[Callable[[int, float, Field], None]] = None,
) -> AdvectionResult:
    """
    Transport the cone profile to the end time with alternating half-steps.

    The number of half-steps is even, so the run ends on the primal grid;
    dt = T / n with n the smallest even count meeting the CFL limit.

    Args:
        grid: Primal grid
        table: Pattern table of the grid's dimension
        scheme: Time stepping settings
        cone: Cone parameters (center, radius, plane vectors, angular speed)
        velocity: Velocity model (default: rotation from the cone parameters)
        on_step: Called with (step, t, field) after every half-step and for the initial state

    Returns:
        AdvectionResult: Final and exact fields plus per-step rows

    Raises:
        SolverError: If the run cannot be set up
    """
    scheme = scheme or SchemeConfig()
    cone = cone or DEFAULT_EXPERIMENTS["cone"]
    velocity = velocity or RotatingVelocity.from_experiments(cone, grid.dim)

    mesh = assemble(grid, table)
    operator = StaggeredOperator(mesh, velocity, scheme)
    primal_volumes, dual_volumes = operator.primal_volumes, operator.dual_volumes

    end_time = scheme.end_time
    if end_time == 0.0:
        steps, dt = 0, 0.0
    else:
        steps = max(2, math.ceil(end_time / operator.max_timestep() - CFL_SLACK))
        steps += steps % 2
        dt = end_time / steps
    logger.info("Advecting to t=%.6g in %d half-steps of %.6g", end_time, steps, dt)

    state = init_cone(grid, cone)
    initial_mass = state.mass(primal_volumes)
    exact = state
    l1, linf = 0.0, 0.0
    rows = [[0, 0.0, initial_mass, float(state.values.min()), float(state.values.max()), l1, linf]]
    low, high = float(state.values.min()), float(state.values.max())
    if on_step:
        on_step(0, 0.0, state)

    for step in range(1, steps + 1):
        t = step * dt if step < steps else end_time
        if step % 2:
            state = operator.primal_to_dual(state, dt)
            volumes = dual_volumes
        else:
            state = operator.dual_to_primal(state, dt)
            volumes = primal_volumes
        low, high = min(low, float(state.values.min())), max(high, float(state.values.max()))
        row = [step, t, state.mass(volumes), float(state.values.min()), float(state.values.max()), "", ""]
        if state.tag == "primal" and (step == steps or (step // 2) % scheme.report_every == 0):
            exact = exact_cone(grid, t, velocity, cone)
            l1, linf = _errors(state.values, exact.values, primal_volumes)
            row[5], row[6] = l1, linf
        rows.append(row)
        if on_step:
            on_step(step, t, state)

    final_mass = state.mass(primal_volumes)
    logger.info("Final L1 error %.6e, mass drift %.3e", l1, abs(final_mass - initial_mass))
    return AdvectionResult(state, exact, rows, dt, steps, l1, linf, initial_mass, final_mass, (low, high))
