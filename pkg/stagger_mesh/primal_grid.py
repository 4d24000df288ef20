"""Primal grid - adaptively refined octree/quadtree of the unit cube with 1-level grading."""

import itertools
import logging
from functools import cached_property, lru_cache
from typing import Any, Callable, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from stagger_mesh.config import Config
from stagger_mesh.local_geometry import SCALE, corner_count, reference_nodes
from stagger_mesh.utils import FileError, ParseError, read_json, write_json


logger = logging.getLogger(__name__)

NodeKey = Tuple[int, ...]
Indicator = Callable[[np.ndarray], np.ndarray]

INDICATOR_SAMPLES = 5


class GridError(Exception):
    """Custom exception for primal grid errors."""
    pass


class CellIndex(NamedTuple):
    """Octree cell address: level and integer coordinates in [0, 2^level)."""

    level: int
    coords: Tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.coords)

    def children(self) -> List["CellIndex"]:
        return [
            CellIndex(self.level + 1, tuple(2 * c + o for c, o in zip(self.coords, offsets)))
            for offsets in itertools.product((0, 1), repeat=self.dim)
        ]

    def ancestor(self, level: int) -> "CellIndex":
        shift = self.level - level
        return CellIndex(level, tuple(c >> shift for c in self.coords))

    def to_list(self) -> List[int]:
        return [self.level, *self.coords]


@lru_cache(maxsize=None)
def neighbor_directions(dim: int) -> Tuple[Tuple[int, ...], ...]:
    """Offsets to face and edge neighbours (6 + 12 in 3D, 4 in 2D)."""
    return tuple(
        d for d in itertools.product((-1, 0, 1), repeat=dim)
        if 1 <= sum(1 for x in d if x) <= dim - 1
    )


class PrimalGrid:
    """Immutable set of leaves partitioning [0,1]^dim.

    Node keys are integer coordinates at scale 2^max_level.
    """

    def __init__(self, dim: int, max_level: int, leaves: Iterable[CellIndex]):
        """
        Args:
            dim: 2 or 3
            max_level: Finest level allowed; fixes the node key scale
            leaves: Leaf cells

        Raises:
            GridError: If dim, max_level or a leaf is out of range
        """
        if dim not in (2, 3):
            raise GridError(f"Grid dimension must be 2 or 3, got {dim}")
        if not 0 <= max_level <= Config.LEVEL_CAP:
            raise GridError(f"max_level {max_level} outside [0, {Config.LEVEL_CAP}] (hard level cap)")
        self.dim = dim
        self.max_level = max_level
        self._leaves = frozenset(CellIndex(int(c.level), tuple(int(x) for x in c.coords)) for c in leaves)
        if not self._leaves:
            raise GridError("A grid needs at least one leaf")
        for cell in self._leaves:
            if cell.dim != dim or not 0 <= cell.level <= max_level:
                raise GridError(f"Leaf {cell} does not fit a {dim}D grid with max_level {max_level}")
            if any(not 0 <= c < 2 ** cell.level for c in cell.coords):
                raise GridError(f"Leaf {cell} has coordinates out of range")

    @classmethod
    def uniform(cls, dim: int, level: int, max_level: Optional[int] = None) -> "PrimalGrid":
        """Grid of all 2^(dim*level) cells at one level."""
        cells = [CellIndex(level, c) for c in itertools.product(range(2 ** level), repeat=dim)]
        return cls(dim, level if max_level is None else max_level, cells)

    @property
    def leaf_set(self) -> frozenset:
        return self._leaves

    @cached_property
    def leaves(self) -> List[CellIndex]:
        """Leaves in lexicographic (level, coords) order."""
        return sorted(self._leaves)

    @cached_property
    def leaf_index(self) -> Dict[CellIndex, int]:
        return {cell: i for i, cell in enumerate(self.leaves)}

    @property
    def num_leaves(self) -> int:
        return len(self._leaves)

    @property
    def finest_level(self) -> int:
        return max(c.level for c in self._leaves)

    def is_leaf(self, cell: CellIndex) -> bool:
        return cell in self._leaves

    @cached_property
    def leaf_levels(self) -> np.ndarray:
        return np.array([c.level for c in self.leaves], dtype=np.int64)

    @cached_property
    def leaf_coords(self) -> np.ndarray:
        return np.array([c.coords for c in self.leaves], dtype=np.int64).reshape(-1, self.dim)

    def leaf_scales(self) -> np.ndarray:
        """Leaf edge length in node-key units (2^(max_level - level))."""
        return np.left_shift(1, self.max_level - self.leaf_levels)

    def encode(self, points: np.ndarray) -> np.ndarray:
        """Single int64 code per node key; sorting codes sorts keys lexicographically."""
        base = 2 ** self.max_level + 1
        points = np.asarray(points, dtype=np.int64)
        code = np.zeros(points.shape[:-1], dtype=np.int64)
        for i in range(self.dim):
            code = code * base + points[..., i]
        return code

    @cached_property
    def node_array(self) -> np.ndarray:
        """All node keys (leaf corners), sorted lexicographically, shape (n, dim)."""
        offsets = np.array(list(itertools.product((0, 1), repeat=self.dim)), dtype=np.int64)
        scales = self.leaf_scales()
        corners = (self.leaf_coords[:, None, :] + offsets[None, :, :]) * scales[:, None, None]
        corners = corners.reshape(-1, self.dim)
        _, first = np.unique(self.encode(corners), return_index=True)
        return corners[first]

    @cached_property
    def node_codes(self) -> np.ndarray:
        return self.encode(self.node_array)

    @cached_property
    def node_set(self) -> frozenset:
        return frozenset(tuple(int(x) for x in row) for row in self.node_array)

    @property
    def num_nodes(self) -> int:
        return len(self.node_array)

    def find_nodes(self, points: np.ndarray) -> np.ndarray:
        """Index of each node key in node_array, -1 where the point is not a node."""
        codes = self.encode(points)
        idx = np.searchsorted(self.node_codes, codes)
        idx = np.clip(idx, 0, len(self.node_codes) - 1)
        return np.where(self.node_codes[idx] == codes, idx, -1)

    def covering_leaf(self, cell: CellIndex) -> Optional[CellIndex]:
        """The leaf equal to or containing cell, None if cell is subdivided."""
        for level in range(cell.level, -1, -1):
            candidate = cell.ancestor(level)
            if candidate in self._leaves:
                return candidate
        return None

    def leaf_at(self, point: Sequence[float]) -> CellIndex:
        """
        Leaf containing a physical point of [0,1]^dim.

        Raises:
            GridError: If the point lies outside the unit cube
        """
        n = 2 ** self.max_level
        if any(not 0.0 <= x <= 1.0 for x in point):
            raise GridError(f"Point {tuple(point)} outside the unit cube")
        finest = CellIndex(self.max_level, tuple(min(int(x * n), n - 1) for x in point))
        return self.covering_leaf(finest)

    @cached_property
    def _refinement_keys(self) -> np.ndarray:
        nodes = reference_nodes(self.dim)
        offset = corner_count(self.dim)
        midpoints = np.array(nodes[offset:], dtype=np.int64)
        scales = self.leaf_scales()
        points = self.leaf_coords[:, None, :] * scales[:, None, None] + (midpoints[None] * scales[:, None, None]) // SCALE
        present = self.find_nodes(points) >= 0
        # a leaf at max_level has no midpoints at this scale
        present &= (self.leaf_levels < self.max_level)[:, None]
        weights = np.left_shift(1, np.arange(len(midpoints), dtype=np.int64))
        return (present * weights[None, :]).sum(axis=1)

    def refinement_keys(self) -> np.ndarray:
        """Refinement key of every leaf, aligned with ``leaves``."""
        return self._refinement_keys

    def primal_face_count(self) -> int:
        """Number of primal faces, counting a coarse face next to finer cells as its fine parts."""
        count = 0
        for cell in self._leaves:
            for axis in range(self.dim):
                for step in (-1, 1):
                    coords = list(cell.coords)
                    coords[axis] += step
                    if not 0 <= coords[axis] < 2 ** cell.level:
                        count += 1
                        continue
                    neighbor = self.covering_leaf(CellIndex(cell.level, tuple(coords)))
                    if neighbor is None:
                        continue
                    if neighbor.level < cell.level or step == 1:
                        count += 1
        return count

    def validate(self) -> None:
        """
        Check the partition and grading invariants.

        Raises:
            GridError: If leaves overlap, leave gaps or violate the grading
        """
        total = sum(1 << (self.dim * (self.max_level - c.level)) for c in self._leaves)
        if total != 1 << (self.dim * self.max_level):
            raise GridError(f"Leaves cover {total} of {1 << (self.dim * self.max_level)} finest cells")
        for cell in self._leaves:
            for level in range(cell.level):
                if cell.ancestor(level) in self._leaves:
                    raise GridError(f"Leaf {cell} lies inside leaf {cell.ancestor(level)}")
        violations = _grading_violations(self._leaves, self._leaves, self.dim)
        if violations:
            raise GridError(f"Grading violated next to {sorted(violations)[:5]}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "max_level": self.max_level,
            "leaves": [cell.to_list() for cell in self.leaves],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "PrimalGrid":
        """
        Raises:
            GridError: If the data is malformed or the grid is invalid
        """
        try:
            dim = int(data["dim"])
            leaves = [CellIndex(int(row[0]), tuple(int(x) for x in row[1:])) for row in data["leaves"]]
            grid = cls(dim, int(data["max_level"]), leaves)
        except (KeyError, TypeError, ValueError, IndexError) as e:
            raise GridError(f"Malformed grid data: {e}")
        grid.validate()
        return grid

    def save(self, filepath: str) -> None:
        try:
            write_json(filepath, self.to_dict())
        except FileError as e:
            raise GridError(f"Failed to save grid: {e}")

    @classmethod
    def load(cls, filepath: str) -> "PrimalGrid":
        try:
            return cls.from_dict(read_json(filepath))
        except (FileNotFoundError, ParseError) as e:
            raise GridError(f"Failed to load grid: {e}")


def _grading_violations(cells: Iterable[CellIndex], leaves: frozenset, dim: int) -> set:
    """Leaves more than one level coarser than a face/edge neighbour among cells."""
    coarse = set()
    for cell in cells:
        if cell not in leaves:
            continue
        size = 2 ** cell.level
        for d in neighbor_directions(dim):
            coords = tuple(c + o for c, o in zip(cell.coords, d))
            if any(not 0 <= c < size for c in coords):
                continue
            for level in range(cell.level, -1, -1):
                candidate = CellIndex(cell.level, coords).ancestor(level)
                if candidate in leaves:
                    if level < cell.level - 1:
                        coarse.add(candidate)
                    break
    return coarse


def refine(grid: PrimalGrid, marked: Iterable[CellIndex]) -> PrimalGrid:
    """
    Split marked leaves and restore the 1-level grading.

    Closure sweeps visit the newly created cells in lexicographic order and
    split every neighbour more than one level coarser, until nothing changes.

    Args:
        grid: Graded grid
        marked: Leaves to split

    Returns:
        PrimalGrid: New graded grid

    Raises:
        GridError: If a marked cell is not a leaf or would exceed max_level
    """
    marked = sorted(set(marked))
    for cell in marked:
        if cell not in grid.leaf_set:
            raise GridError(f"Cannot refine {cell}: not a leaf")
        if cell.level >= grid.max_level:
            raise GridError(f"Refining {cell} would exceed max_level {grid.max_level}")
    if not marked:
        return grid

    leaves = set(grid.leaf_set)

    def split(cells: List[CellIndex]) -> List[CellIndex]:
        created = []
        for cell in cells:
            leaves.discard(cell)
            children = cell.children()
            leaves.update(children)
            created.extend(children)
        return created

    frontier = split(marked)
    sweeps = 0
    while frontier:
        frozen = frozenset(leaves)
        coarse = _grading_violations(sorted(frontier), frozen, grid.dim)
        if not coarse:
            break
        frontier = split(sorted(coarse))
        sweeps += 1
    logger.debug("Refined %d cells with %d closure sweeps", len(marked), sweeps)
    return PrimalGrid(grid.dim, grid.max_level, leaves)


def _sample_offsets(dim: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, INDICATOR_SAMPLES)
    return np.array(list(itertools.product(t, repeat=dim)))


def refine_by_indicator(grid: PrimalGrid, indicator: Indicator, target_level: int) -> PrimalGrid:
    """
    Refine every leaf whose closed cell sees a sign change of the indicator.

    The indicator is sampled on a 5^dim lattice including the cell boundary.

    Args:
        grid: Graded grid
        indicator: Vectorized function (N, dim) points -> (N,) bools
        target_level: Level the crossing leaves are refined to

    Returns:
        PrimalGrid: Refined graded grid

    Raises:
        GridError: If target_level exceeds the grid's max_level
    """
    if target_level > grid.max_level:
        raise GridError(f"Target level {target_level} exceeds max_level {grid.max_level}")
    offsets = _sample_offsets(grid.dim)
    while True:
        candidates = [c for c in grid.leaves if c.level < target_level]
        if not candidates:
            break
        lows = np.array([c.coords for c in candidates], dtype=float)
        widths = np.array([2.0 ** -c.level for c in candidates])
        points = (lows * widths[:, None])[:, None, :] + widths[:, None, None] * offsets[None, :, :]
        values = np.asarray(indicator(points.reshape(-1, grid.dim)), dtype=bool).reshape(len(candidates), -1)
        crossing = values.any(axis=1) & ~values.all(axis=1)
        marked = [c for c, hit in zip(candidates, crossing) if hit]
        if not marked:
            break
        logger.debug("Indicator marks %d leaves", len(marked))
        grid = refine(grid, marked)
    return grid


def refinement_key(grid: PrimalGrid, cell: CellIndex) -> int:
    """
    18-bit (3D) or 4-bit (2D) hanging-node key of a leaf.

    Raises:
        GridError: If cell is not a leaf
    """
    if not grid.is_leaf(cell):
        raise GridError(f"{cell} is not a leaf")
    return int(grid.refinement_keys()[grid.leaf_index[cell]])


def local_to_global(grid: PrimalGrid, cell: CellIndex, position: Sequence[int]) -> NodeKey:
    """Node key of a reference-cell position (scale 48) on a leaf."""
    scale = 2 ** (grid.max_level - cell.level)
    result = []
    for c, p in zip(cell.coords, position):
        value = p * scale
        if value % SCALE:
            raise GridError(f"Position {tuple(position)} of {cell} is finer than the node key scale")
        result.append(c * scale + value // SCALE)
    return tuple(result)


def boundary_nodes(grid: PrimalGrid, cell: CellIndex) -> List[Tuple[int, NodeKey]]:
    """
    Nodes on the boundary of a leaf: the corners plus the hanging midpoints.

    Returns:
        list: (LocalNodeId, NodeKey) pairs in LocalNodeId order
    """
    key = refinement_key(grid, cell)
    positions = reference_nodes(grid.dim)
    offset = corner_count(grid.dim)
    ids = list(range(offset)) + [offset + b for b in range(len(positions) - offset) if key >> b & 1]
    return [(i, local_to_global(grid, cell, positions[i])) for i in ids]


def random_refinement(grid: PrimalGrid, rng, rounds: int = 2, fraction: float = 0.3) -> PrimalGrid:
    """
    Graded grid from repeated refinement of randomly chosen leaves.

    Args:
        grid: Starting grid
        rng: random.Random instance
        rounds: Number of refinement rounds
        fraction: Share of refinable leaves marked per round

    Returns:
        PrimalGrid: Refined graded grid
    """
    for _ in range(rounds):
        refinable = [c for c in grid.leaves if c.level < grid.max_level]
        if not refinable:
            break
        count = max(1, int(fraction * len(refinable)))
        grid = refine(grid, rng.sample(refinable, count))
    return grid
