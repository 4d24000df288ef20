"""VTK export - legacy ASCII writers for dual cells, dual faces and primal fields."""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from stagger_mesh.dual_assembly import DualFace, DualMesh
from stagger_mesh.primal_grid import PrimalGrid
from stagger_mesh.utils import FileError, write_file


logger = logging.getLogger(__name__)

VTK_PIXEL = 8
VTK_VOXEL = 11
VTK_POLYGON = 7
VTK_POLYHEDRON = 42

HEADER = "# vtk DataFile Version 3.0"


class ExportError(Exception):
    """Custom exception for VTK export errors."""
    pass


def _fmt(x: float) -> str:
    return "%.17g" % x


class _PointPool:
    """Deduplicated point list keyed by exact coordinates."""

    def __init__(self, dim: int):
        self.dim = dim
        self.index: Dict[tuple, int] = {}
        self.points: List[tuple] = []

    def add(self, point: Sequence[float]) -> int:
        key = tuple(float(x) for x in point)
        if key not in self.index:
            self.index[key] = len(self.points)
            self.points.append(key)
        return self.index[key]

    def lines(self) -> List[str]:
        out = [f"POINTS {len(self.points)} double"]
        for p in self.points:
            coords = list(p) + [0.0] * (3 - self.dim)
            out.append(" ".join(_fmt(x) for x in coords))
        return out


def _scalar_block(count: int, scalars: Dict[str, np.ndarray], kind: str) -> List[str]:
    if not scalars:
        return []
    out = [f"{kind} {count}"]
    for name, values in scalars.items():
        values = np.asarray(values)
        if len(values) != count:
            raise ExportError(f"Scalar '{name}' has {len(values)} values for {count} cells")
        out.append(f"SCALARS {name} double 1")
        out.append("LOOKUP_TABLE default")
        out.extend(_fmt(v) for v in values)
    return out


def _segment_loop(faces: List[DualFace], pool: _PointPool) -> List[int]:
    """Chain the outward-oriented boundary segments of a 2D dual cell into one loop."""
    successor = {}
    for face in faces:
        a, b = pool.add(face.vertices[0]), pool.add(face.vertices[1])
        successor[a] = b
    start = min(successor)
    loop = [start]
    current = successor.pop(start)
    while current != start:
        loop.append(current)
        if current not in successor:
            raise ExportError("Dual cell boundary is not a closed loop")
        current = successor.pop(current)
    if successor:
        raise ExportError("Dual cell boundary has more than one loop")
    return loop


def write_dual_vtk(filepath: str, mesh: DualMesh, scalars: Optional[Dict[str, np.ndarray]] = None) -> None:
    """
    Write the dual cells as an UNSTRUCTURED_GRID.

    3D cells are VTK_POLYHEDRON with an explicit face stream; 2D cells are
    VTK_POLYGON. A "volume" scalar is always written.

    Args:
        filepath: Output path
        mesh: Assembled dual mesh
        scalars: Extra per-dual-cell scalars, aligned with the node order

    Raises:
        ExportError: If the mesh cannot be written
    """
    cells = mesh.cells
    pool = _PointPool(mesh.dim)
    streams = []
    for key in mesh.node_keys():
        cell = cells[key]
        faces = cell.faces + cell.boundary_patches
        if mesh.dim == 2:
            streams.append(_segment_loop(faces, pool))
        else:
            stream = [len(faces)]
            for face in faces:
                ids = [pool.add(v) for v in face.vertices]
                stream.extend([len(ids)] + ids)
            streams.append(stream)

    cell_type = VTK_POLYGON if mesh.dim == 2 else VTK_POLYHEDRON
    lines = [HEADER, "stagger_mesh dual cells", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.extend(pool.lines())
    size = sum(len(s) + 1 for s in streams)
    lines.append(f"CELLS {len(streams)} {size}")
    lines.extend(" ".join(str(x) for x in [len(s)] + s) for s in streams)
    lines.append(f"CELL_TYPES {len(streams)}")
    lines.extend(str(cell_type) for _ in streams)
    lines.extend(_scalar_block(len(streams), {"volume": mesh.volumes, **(scalars or {})}, "CELL_DATA"))
    _write(filepath, lines)


def write_faces_vtk(filepath: str, mesh: DualMesh) -> None:
    """Write the merged dual faces as POLYDATA (polygons in 3D, lines in 2D) with their areas."""
    pool = _PointPool(mesh.dim)
    polys = [[pool.add(v) for v in face.vertices] for face in mesh.merged]
    kind = "LINES" if mesh.dim == 2 else "POLYGONS"
    lines = [HEADER, "stagger_mesh dual faces", "ASCII", "DATASET POLYDATA"]
    lines.extend(pool.lines())
    lines.append(f"{kind} {len(polys)} {sum(len(p) + 1 for p in polys)}")
    lines.extend(" ".join(str(x) for x in [len(p)] + p) for p in polys)
    lines.extend(_scalar_block(len(polys), {"area": np.array([f.area for f in mesh.merged])}, "CELL_DATA"))
    _write(filepath, lines)


def write_primal_vtk(filepath: str, grid: PrimalGrid, scalars: Optional[Dict[str, np.ndarray]] = None) -> None:
    """Write the primal leaves as VTK_VOXEL (3D) or VTK_PIXEL (2D) cells with per-leaf scalars."""
    dim = grid.dim
    n = 1 << grid.max_level
    offsets = np.array([[(c >> i) & 1 for i in range(dim)] for c in range(1 << dim)], dtype=np.int64)
    corners = (grid.leaf_coords[:, None, :] + offsets[None]) * grid.leaf_scales()[:, None, None]
    ids = grid.find_nodes(corners)

    lines = [HEADER, "stagger_mesh primal grid", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {grid.num_nodes} double")
    for p in grid.node_array:
        coords = [x / n for x in p] + [0.0] * (3 - dim)
        lines.append(" ".join(_fmt(x) for x in coords))
    lines.append(f"CELLS {grid.num_leaves} {grid.num_leaves * (1 + len(offsets))}")
    lines.extend(" ".join(str(x) for x in [len(offsets)] + list(row)) for row in ids)
    lines.append(f"CELL_TYPES {grid.num_leaves}")
    cell_type = VTK_VOXEL if dim == 3 else VTK_PIXEL
    lines.extend(str(cell_type) for _ in range(grid.num_leaves))
    lines.extend(_scalar_block(grid.num_leaves, {"level": grid.leaf_levels, **(scalars or {})}, "CELL_DATA"))
    _write(filepath, lines)


def _write(filepath: str, lines: List[str]) -> None:
    try:
        write_file(filepath, "\n".join(lines) + "\n")
    except FileError as e:
        raise ExportError(f"Failed to write VTK file: {e}")
    logger.debug("Wrote %s", filepath)
