"""Cost model - flux evaluation counts of two successive timesteps and per-level grid census."""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence

from stagger_mesh.dual_assembly import DualMesh, assemble, dual_node_count
from stagger_mesh.pattern_engine import PatternTable
from stagger_mesh.primal_grid import PrimalGrid, refine_by_indicator


logger = logging.getLogger(__name__)

SCHEMES = ("diamond", "hll", "voronoi")

CENSUS_HEADER = [
    "level", "primal_cells", "primal_faces", "primal_nodes", "dual_cells", "dual_nodes",
    "diamond_cells", "fluxes_non_staggered", "fluxes_staggered", "trivial_fraction", "distinct_patterns",
]

FLUX_HEADER = ["scheme", "first_step", "second_step", "total"]


class CostModelError(Exception):
    """Custom exception for cost model errors."""
    pass


@dataclass(frozen=True)
class FluxCountInputs:
    primal_cells: int
    primal_faces: int
    primal_nodes: int
    dual_nodes: int

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, int) or value < 0:
                raise CostModelError(f"{name} must be a nonnegative integer, got {value!r}")


@dataclass(frozen=True)
class SchemeCount:
    first_step: int
    second_step: int

    @property
    def total(self) -> int:
        return self.first_step + self.second_step


@dataclass(frozen=True)
class FluxCountReport:
    inputs: FluxCountInputs
    counts: Dict[str, SchemeCount]

    def rows(self) -> List[List[Any]]:
        return [[name, c.first_step, c.second_step, c.total] for name, c in self.counts.items()]


def flux_count(inputs: FluxCountInputs) -> FluxCountReport:
    """
    Flux evaluations of two successive timesteps per scheme.

    diamond: 12 per primal cell, then one per primal face
    hll: two per primal face in both steps
    voronoi: 3 per dual node (primal -> dual), 3 per primal node (dual -> primal)
    """
    counts = {
        "diamond": SchemeCount(12 * inputs.primal_cells, inputs.primal_faces),
        "hll": SchemeCount(2 * inputs.primal_faces, 2 * inputs.primal_faces),
        "voronoi": SchemeCount(3 * inputs.dual_nodes, 3 * inputs.primal_nodes),
    }
    return FluxCountReport(inputs, counts)


def format_millions(value: int) -> str:
    """Count in millions with two decimals, e.g. 1345272 -> "1.35 M"."""
    return f"{value / 1e6:.2f} M"


@dataclass(frozen=True)
class CensusRow:
    level: int
    primal_cells: int
    primal_faces: int
    primal_nodes: int
    dual_cells: int
    dual_nodes: int
    diamond_cells: int
    fluxes_non_staggered: int
    fluxes_staggered: int
    trivial_fraction: float
    distinct_patterns: int

    @property
    def flux_ratio(self) -> float:
        """Staggered over non-staggered flux evaluations."""
        return self.fluxes_staggered / self.fluxes_non_staggered if self.fluxes_non_staggered else 0.0

    def to_list(self) -> List[Any]:
        return [getattr(self, name) for name in CENSUS_HEADER]


def census(grid: PrimalGrid, mesh: DualMesh, level: Optional[int] = None) -> CensusRow:
    """
    One row comparing the staggered and non-staggered approaches on a grid.

    Non-staggered counts two flux evaluations per primal face; staggered
    counts dim per dual node, where dual nodes are the distinct vertices of
    the merged dual faces including the vertices of boundary patches on the
    domain boundary. trivial_fraction is the share of leaves without
    hanging nodes.
    """
    faces = grid.primal_face_count()
    dual_nodes = dual_node_count(mesh)
    keys = mesh.leaf_keys
    return CensusRow(
        level=grid.finest_level if level is None else level,
        primal_cells=grid.num_leaves,
        primal_faces=faces,
        primal_nodes=grid.num_nodes,
        dual_cells=mesh.num_cells,
        dual_nodes=dual_nodes,
        diamond_cells=faces,
        fluxes_non_staggered=2 * faces,
        fluxes_staggered=grid.dim * dual_nodes,
        trivial_fraction=float((keys == 0).sum()) / len(keys),
        distinct_patterns=len(set(int(c) for c in mesh.leaf_canon)),
    )


def census_rows(
    levels: Sequence[int],
    table: PatternTable,
    indicator: Optional[Callable],
    dim: int = 3,
) -> List[CensusRow]:
    """
    Census rows for grids refined along an indicator up to each level.

    A None indicator gives uniform grids.

    Raises:
        CostModelError: If no levels are given
    """
    if not levels:
        raise CostModelError("At least one level is required")
    rows = []
    for level in sorted(levels):
        if indicator is None:
            grid = PrimalGrid.uniform(dim, level)
        else:
            grid = refine_by_indicator(PrimalGrid.uniform(dim, 0, max_level=level), indicator, level)
        mesh = assemble(grid, table)
        rows.append(census(grid, mesh, level))
        logger.info("Census level %d: %d leaves, %d dual nodes", level, grid.num_leaves, rows[-1].dual_nodes)
    return rows
