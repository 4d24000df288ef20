"""Dual assembly - global dual mesh from per-leaf local patterns, plus geometric checks.

One dual cell exists per primal node. Volumes are accumulated exactly at
integer scale; face pieces are mapped to physical coordinates per pattern
group so large grids assemble with array operations only. Merged polygonal
faces (the "dual nodes" of the cost model and of VTK output) are built on
demand.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from stagger_mesh.local_geometry import SCALE, FacePolygon, make_face, merge_collinear, merge_coplanar, reference_nodes
from stagger_mesh.pattern_engine import LocalPattern, PatternError, PatternTable
from stagger_mesh.primal_grid import CellIndex, NodeKey, PrimalGrid


logger = logging.getLogger(__name__)

# Common denominator of all region volumes in reference-cell units
VOLUME_DENOMINATOR = {2: 32, 3: 384}

GAUSS_TOLERANCE = 1e-12


class AssemblyError(Exception):
    """Custom exception for dual mesh assembly errors."""
    pass


@dataclass(frozen=True)
class PatternGroup:
    """All leaves sharing one refinement key."""

    key: int
    canon_id: int
    pattern: LocalPattern
    leaves: np.ndarray
    columns: Tuple[int, ...]
    node_index: np.ndarray

    def column(self, local_node: int) -> int:
        return self.columns.index(local_node)


@dataclass(frozen=True)
class FluxPieces:
    """Flat arrays of planar pieces with their vertex quadrature.

    For dual cell surfaces ``owner`` and ``neighbor`` are node indices and the
    normal points from owner to neighbor (``neighbor`` is -1 on the domain
    boundary). For primal traces ``owner`` is the node whose dual cell owns
    the piece, the normal points out of ``leaf`` and ``neighbor`` is -1.
    """

    leaf: np.ndarray
    owner: np.ndarray
    neighbor: np.ndarray
    on_boundary: np.ndarray
    normal: np.ndarray
    area: np.ndarray
    point_piece: np.ndarray
    points: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.leaf)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Per-piece quadrature of values given at every quadrature point."""
        return np.bincount(self.point_piece, weights=self.weights * values, minlength=len(self))

    def normal_velocity(self, velocity: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        a = velocity(self.points)
        return np.einsum("ij,ij->i", a, self.normal[self.point_piece])

    def normal_flux(self, velocity: Callable[[np.ndarray], np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        """
        Integrated normal velocity per piece, split into outgoing and incoming parts.

        Returns:
            tuple: (outflow >= 0, inflow <= 0); their sum is the net flux
        """
        an = self.normal_velocity(velocity)
        return self.integrate(np.maximum(an, 0.0)), self.integrate(np.minimum(an, 0.0))

    def gauss_flux(self) -> np.ndarray:
        """Flux of v(x) = x/dim through every piece."""
        dim = self.points.shape[1]
        xn = np.einsum("ij,ij->i", self.points, self.normal[self.point_piece])
        return self.integrate(xn) / dim

    def select(self, mask: np.ndarray) -> "FluxPieces":
        keep = np.flatnonzero(mask)
        remap = np.full(len(self), -1, dtype=np.int64)
        remap[keep] = np.arange(len(keep))
        point_mask = mask[self.point_piece]
        return FluxPieces(
            self.leaf[keep], self.owner[keep], self.neighbor[keep], self.on_boundary[keep],
            self.normal[keep], self.area[keep], remap[self.point_piece[point_mask]],
            self.points[point_mask], self.weights[point_mask],
        )

    @classmethod
    def concatenate(cls, parts: Sequence["FluxPieces"], dim: int) -> "FluxPieces":
        if not parts:
            empty_i = np.zeros(0, dtype=np.int64)
            empty_f = np.zeros(0)
            return cls(empty_i, empty_i, empty_i, np.zeros(0, dtype=bool), np.zeros((0, dim)),
                       empty_f, empty_i, np.zeros((0, dim)), empty_f)
        offsets = np.cumsum([0] + [len(p) for p in parts[:-1]])
        return cls(
            np.concatenate([p.leaf for p in parts]),
            np.concatenate([p.owner for p in parts]),
            np.concatenate([p.neighbor for p in parts]),
            np.concatenate([p.on_boundary for p in parts]),
            np.concatenate([p.normal for p in parts]),
            np.concatenate([p.area for p in parts]),
            np.concatenate([p.point_piece + off for p, off in zip(parts, offsets)]),
            np.concatenate([p.points for p in parts]),
            np.concatenate([p.weights for p in parts]),
        )


@dataclass(frozen=True)
class DualFace:
    """Merged dual face in physical coordinates; ``neighbor`` is None on the domain boundary."""

    owner: NodeKey
    neighbor: Optional[NodeKey]
    vertices: np.ndarray
    normal: np.ndarray
    area: float
    weights: np.ndarray

    @property
    def quadrature(self) -> List[Tuple[np.ndarray, float]]:
        return list(zip(self.vertices, self.weights))

    def flipped(self) -> "DualFace":
        return DualFace(self.neighbor, self.owner, self.vertices[::-1].copy(), -self.normal,
                        self.area, self.weights[::-1].copy())


@dataclass(frozen=True)
class DualCell:
    """Dual cell of one primal node; faces are oriented outward."""

    node: NodeKey
    volume: float
    faces: List[DualFace]
    boundary_patches: List[DualFace]
    contributing_leaves: List[CellIndex]

    def closure(self) -> np.ndarray:
        """Sum of area * normal over the closed surface."""
        total = np.zeros(len(self.node))
        for face in self.faces + self.boundary_patches:
            total += face.area * face.normal
        return total


class DualMesh:
    """Dual mesh over a primal grid: exact volumes, face pieces and merged faces."""

    def __init__(self, grid: PrimalGrid, table: PatternTable, groups: List[PatternGroup], volume_int: np.ndarray):
        self.grid = grid
        self.table = table
        self.groups = groups
        self.volume_int = volume_int
        self.volume_scale = VOLUME_DENOMINATOR[grid.dim] << (grid.dim * grid.max_level)

    @property
    def dim(self) -> int:
        return self.grid.dim

    @property
    def node_array(self) -> np.ndarray:
        return self.grid.node_array

    @property
    def num_cells(self) -> int:
        return len(self.volume_int)

    @cached_property
    def volumes(self) -> np.ndarray:
        return self.volume_int / float(self.volume_scale)

    def exact_volume(self, index: int) -> Fraction:
        return Fraction(int(self.volume_int[index]), self.volume_scale)

    def node_keys(self) -> List[NodeKey]:
        return [tuple(int(x) for x in row) for row in self.node_array]

    def node_index(self, key: Sequence[int]) -> int:
        """
        Raises:
            AssemblyError: If key is not a primal node
        """
        idx = int(self.grid.find_nodes(np.asarray([key]))[0])
        if idx < 0:
            raise AssemblyError(f"{tuple(key)} is not a primal node")
        return idx

    @cached_property
    def leaf_keys(self) -> np.ndarray:
        return self.grid.refinement_keys()

    @cached_property
    def leaf_canon(self) -> np.ndarray:
        """Canonical pattern id of every leaf."""
        canon = np.zeros(self.grid.num_leaves, dtype=np.int64)
        for group in self.groups:
            canon[group.leaves] = group.canon_id
        return canon

    @cached_property
    def leaf_volumes(self) -> np.ndarray:
        return 2.0 ** (-self.dim * self.grid.leaf_levels.astype(float))

    @cached_property
    def surface_terms(self) -> FluxPieces:
        return surface_terms(self)

    @cached_property
    def trace_terms(self) -> FluxPieces:
        return trace_terms(self)

    @cached_property
    def merged(self) -> List[DualFace]:
        return merged_faces(self)

    def cell(self, node: Sequence[int]) -> DualCell:
        """Dual cell of one node with outward-oriented merged faces."""
        key = tuple(int(x) for x in node)
        index = self.node_index(key)
        faces, patches = [], []
        for face in self.merged:
            if face.neighbor is None:
                if face.owner == key:
                    patches.append(face)
            elif face.owner == key:
                faces.append(face)
            elif face.neighbor == key:
                faces.append(face.flipped())
        leaves = []
        for group in self.groups:
            rows = np.flatnonzero((group.node_index == index).any(axis=1))
            leaves.extend(self.grid.leaves[i] for i in group.leaves[rows])
        return DualCell(key, float(self.volumes[index]), faces, patches, sorted(leaves))

    @cached_property
    def cells(self) -> Dict[NodeKey, DualCell]:
        return {key: self.cell(key) for key in self.node_keys()}


def assemble(grid: PrimalGrid, table: PatternTable) -> DualMesh:
    """
    Assemble the dual mesh in one traversal of the leaves.

    Leaves are grouped by refinement key; each group maps its (transformed)
    pattern onto all its leaves at once and accumulates exact region volumes
    per global node.

    Args:
        grid: Graded primal grid
        table: Pattern table of the same dimension

    Returns:
        DualMesh: Assembled mesh

    Raises:
        AssemblyError: If a key is missing from the table or volumes do not add up
    """
    if table.dim != grid.dim:
        raise AssemblyError(f"{table.dim}D pattern table cannot assemble a {grid.dim}D grid")

    dim = grid.dim
    keys = grid.refinement_keys()
    scales = grid.leaf_scales()
    positions = reference_nodes(dim)
    denominator = VOLUME_DENOMINATOR[dim]
    volume_int = np.zeros(grid.num_nodes, dtype=np.int64)

    groups = []
    for key in np.unique(keys):
        key = int(key)
        leaves = np.flatnonzero(keys == key)
        try:
            canon_id, _ = table.lookup(key)
            pattern = table.pattern(key)
        except PatternError as e:
            raise AssemblyError(f"Failed to look up pattern for leaf {grid.leaves[leaves[0]]}: {e}")

        columns = tuple(pattern.nodes)
        local = np.array([positions[c] for c in columns], dtype=np.int64)
        s = scales[leaves]
        points = grid.leaf_coords[leaves][:, None, :] * s[:, None, None] + (local[None] * s[:, None, None]) // SCALE
        node_index = grid.find_nodes(points)
        if (node_index < 0).any():
            raise AssemblyError(f"Pattern nodes of key {key:#x} are not primal nodes (grading violated?)")

        region_int = np.array([int(pattern.regions[c].volume * denominator) for c in columns], dtype=np.int64)
        leaf_factor = np.left_shift(1, dim * (grid.max_level - grid.leaf_levels[leaves]))
        np.add.at(volume_int, node_index.ravel(), (leaf_factor[:, None] * region_int[None, :]).ravel())
        groups.append(PatternGroup(key, canon_id, pattern, leaves, columns, node_index))

    expected = denominator << (dim * grid.max_level)
    if int(volume_int.sum()) != expected:
        raise AssemblyError(f"Dual volumes sum to {int(volume_int.sum())}/{expected}, not 1")
    if (volume_int <= 0).any():
        missing = grid.node_array[np.flatnonzero(volume_int <= 0)[0]]
        raise AssemblyError(f"Node {tuple(missing)} received no dual volume")

    logger.info(
        "Assembled %d dual cells from %d leaves in %d pattern groups",
        grid.num_nodes, grid.num_leaves, len(groups),
    )
    return DualMesh(grid, table, groups, volume_int)


def _leaf_frames(mesh: DualMesh, group: PatternGroup) -> Tuple[np.ndarray, np.ndarray]:
    h = 2.0 ** (-mesh.grid.leaf_levels[group.leaves].astype(float))
    base = mesh.grid.leaf_coords[group.leaves] * h[:, None]
    return base, h


def _group_pieces(
    mesh: DualMesh,
    group: PatternGroup,
    entries: Sequence[Tuple[int, int, FacePolygon]],
    boundary: np.ndarray,
) -> FluxPieces:
    """Map pattern polygons onto every leaf of a group.

    entries: (owner local id, neighbor local id or -1, polygon in reference coordinates)
    boundary: (n_leaves, n_entries) flags for pieces on the domain boundary
    """
    dim = mesh.dim
    base, h = _leaf_frames(mesh, group)
    n = len(group.leaves)
    parts = []
    for e, (a, b, polygon) in enumerate(entries):
        verts = np.asarray(polygon.vertices, dtype=float) / SCALE
        m = len(verts)
        points = base[:, None, :] + h[:, None, None] * verts[None, :, :]
        ref_weights = polygon.quadrature_weights() / SCALE ** (dim - 1)
        weights = ref_weights[None, :] * h[:, None] ** (dim - 1)
        owner = group.node_index[:, group.column(a)]
        neighbor = group.node_index[:, group.column(b)] if b >= 0 else np.full(n, -1, dtype=np.int64)
        parts.append(FluxPieces(
            group.leaves.copy(), owner, neighbor, boundary[:, e].copy(),
            np.tile(polygon.unit_normal, (n, 1)), polygon.area_value * h ** (dim - 1),
            np.repeat(np.arange(n, dtype=np.int64), m), points.reshape(-1, dim), weights.ravel(),
        ))
    return FluxPieces.concatenate(parts, dim)


def _trace_on_boundary(mesh: DualMesh, group: PatternGroup, faces: Sequence[int]) -> np.ndarray:
    coords = mesh.grid.leaf_coords[group.leaves]
    top = (1 << mesh.grid.leaf_levels[group.leaves]) - 1
    flags = np.zeros((len(group.leaves), len(faces)), dtype=bool)
    for e, face in enumerate(faces):
        axis, side = divmod(face, 2)
        flags[:, e] = coords[:, axis] == (top if side else 0)
    return flags


def surface_terms(mesh: DualMesh) -> FluxPieces:
    """
    Pieces bounding the dual cells: internal pattern faces plus domain-boundary traces.

    Facets on interior primal faces never appear; they separate regions of the
    same global node.
    """
    parts = []
    for group in mesh.groups:
        faces = group.pattern.internal_faces
        entries = [(f.a, f.b, f.polygon) for f in faces]
        parts.append(_group_pieces(mesh, group, entries, np.zeros((len(group.leaves), len(entries)), dtype=bool)))

        traces = group.pattern.trace_polygons
        on_boundary = _trace_on_boundary(mesh, group, [t.face for t in traces])
        if on_boundary.any():
            pieces = _group_pieces(mesh, group, [(t.node, -1, t.polygon) for t in traces], on_boundary)
            parts.append(pieces.select(pieces.on_boundary))
    return FluxPieces.concatenate(parts, mesh.dim)


def trace_terms(mesh: DualMesh) -> FluxPieces:
    """Trace pieces covering every leaf boundary, oriented out of the leaf."""
    parts = []
    for group in mesh.groups:
        traces = group.pattern.trace_polygons
        on_boundary = _trace_on_boundary(mesh, group, [t.face for t in traces])
        parts.append(_group_pieces(mesh, group, [(t.node, -1, t.polygon) for t in traces], on_boundary))
    return FluxPieces.concatenate(parts, mesh.dim)


@dataclass
class GaussReport:
    """Per-cell divergence-identity residuals."""

    residuals: np.ndarray
    closure: np.ndarray
    boundary_total: float

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max()) if len(self.residuals) else 0.0

    @property
    def max_closure(self) -> float:
        return float(self.closure.max()) if len(self.closure) else 0.0

    def passed(self, tolerance: float = GAUSS_TOLERANCE) -> bool:
        return self.max_residual <= tolerance and self.max_closure <= tolerance


def _accumulate(terms: FluxPieces, values: np.ndarray, n: int) -> np.ndarray:
    """Sum piece values into owners and subtract them from neighbors."""
    total = np.zeros((n,) + values.shape[1:])
    np.add.at(total, terms.owner, values)
    inner = terms.neighbor >= 0
    np.add.at(total, terms.neighbor[inner], -values[inner])
    return total


def gauss_check(mesh: DualMesh, terms: Optional[FluxPieces] = None) -> GaussReport:
    """
    Compare the surface integral of (x/dim).n with the volume of every dual cell.

    Args:
        mesh: Assembled dual mesh
        terms: Surface pieces to use (default: the mesh's own)

    Returns:
        GaussReport: Relative residuals, relative closure defects and the
        flux through the domain boundary (equal to 1)
    """
    terms = mesh.surface_terms if terms is None else terms
    n = mesh.num_cells
    flux = terms.gauss_flux()
    surface = _accumulate(terms, flux, n)
    residuals = np.abs(surface - mesh.volumes) / mesh.volumes

    area_vectors = terms.area[:, None] * terms.normal
    closure = _accumulate(terms, area_vectors, n)
    total_area = np.zeros(n)
    np.add.at(total_area, terms.owner, terms.area)
    inner = terms.neighbor >= 0
    np.add.at(total_area, terms.neighbor[inner], terms.area[inner])
    closure_rel = np.linalg.norm(closure, axis=1) / total_area

    boundary_total = float(flux[terms.neighbor < 0].sum())
    report = GaussReport(residuals, closure_rel, boundary_total)
    logger.info("Gauss check: max residual %.3e, max closure %.3e", report.max_residual, report.max_closure)
    return report


def _merge_loops(polygons: List[Tuple], normal: Tuple[int, ...]) -> List[Tuple]:
    if len(normal) == 3:
        return merge_coplanar(polygons, normal)
    return merge_collinear(polygons, normal)


def merged_faces(mesh: DualMesh) -> List[DualFace]:
    """
    Merge face pieces across leaves into the polygonal faces of the dual cells.

    Pieces are collected at integer scale 48 * 2^max_level and merged per
    (node pair, plane); boundary traces are merged per (node, plane).

    Returns:
        list: DualFace objects oriented from the lower to the higher node index;
        boundary patches oriented out of the domain
    """
    grid = mesh.grid
    unit = SCALE << grid.max_level
    pieces = defaultdict(list)

    for group in mesh.groups:
        s = grid.leaf_scales()[group.leaves]
        base = grid.leaf_coords[group.leaves] * (SCALE * s)[:, None]
        traces = group.pattern.trace_polygons
        on_boundary = _trace_on_boundary(mesh, group, [t.face for t in traces])

        for row in range(len(group.leaves)):
            origin, scale = base[row], int(s[row])
            nodes = group.node_index[row]

            def place(polygon):
                return tuple(tuple(int(o + scale * v) for o, v in zip(origin, vertex)) for vertex in polygon.vertices)

            for face in group.pattern.internal_faces:
                a, b = int(nodes[group.column(face.a)]), int(nodes[group.column(face.b)])
                vertices, normal = place(face.polygon), face.polygon.normal
                if a > b:
                    a, b = b, a
                    vertices, normal = tuple(reversed(vertices)), tuple(-x for x in normal)
                offset = sum(x * y for x, y in zip(normal, vertices[0]))
                pieces[(a, b, normal, offset)].append(vertices)

            for e, trace in enumerate(traces):
                if on_boundary[row, e]:
                    vertices, normal = place(trace.polygon), trace.polygon.normal
                    offset = sum(x * y for x, y in zip(normal, vertices[0]))
                    pieces[(int(nodes[group.column(trace.node)]), -1, normal, offset)].append(vertices)

    keys = mesh.node_keys()
    faces = []
    for (a, b, normal, _), polygons in sorted(pieces.items()):
        for loop in _merge_loops(polygons, normal):
            polygon = make_face(loop, normal, unit)
            vertices = np.asarray(loop, dtype=float) / unit
            faces.append(DualFace(
                keys[a], keys[b] if b >= 0 else None, vertices, polygon.unit_normal, polygon.area_value,
                polygon.quadrature_weights() / float(unit) ** (mesh.dim - 1),
            ))
    logger.debug("Merged %d face groups into %d dual faces", len(pieces), len(faces))
    return faces


def dual_node_count(mesh: DualMesh) -> int:
    """Distinct vertices of all merged dual faces, boundary patches included."""
    vertices = {tuple(v) for face in mesh.merged for v in face.vertices.tolist()}
    return len(vertices)


def vertex_clearance(mesh: DualMesh) -> float:
    """
    Smallest L-infinity clearance of a dual-face piece vertex, leaf-boundary vertices included.

    A vertex on the leaf boundary (bends of compound faces, domain boundary)
    is shared by the states on both sides of that boundary, so each piece's
    clearance is half the smallest positive distance of its vertices to the
    leaf boundary. On a uniform grid this is a quarter of the leaf width.

    Returns:
        float: Clearance in physical units (inf when no vertex is interior)
    """
    best = np.inf
    for group in mesh.groups:
        clearance = SCALE
        for face in group.pattern.internal_faces:
            for v in face.polygon.vertices:
                c = min(min(x, SCALE - x) for x in v)
                if c > 0:
                    clearance = min(clearance, c)
        if clearance < SCALE:
            finest = mesh.grid.leaf_levels[group.leaves].max()
            best = min(best, 0.5 * clearance / SCALE * 2.0 ** (-float(finest)))
    return best


def sampling_oracle_check(grid: PrimalGrid, mesh: DualMesh, resolution: int, chunk: int = 200000) -> float:
    """
    Brute-force dual volumes by nearest-node assignment of a global sample lattice.

    Sample points are cell centres of a lattice with ``resolution`` points per
    finest-cell edge; each goes to the nearest primal node by
    (L-infinity, squared Euclidean, node order).

    Args:
        grid: Primal grid of the mesh (keep it small)
        mesh: Assembled mesh
        resolution: Samples per finest-cell edge
        chunk: Sample points processed per KD-tree query

    Returns:
        float: Largest |sampled volume - assembled volume| over all nodes

    Raises:
        AssemblyError: If resolution is not positive
    """
    if resolution <= 0:
        raise AssemblyError(f"Oracle resolution must be positive, got {resolution}")
    dim = grid.dim
    per_axis = resolution << grid.max_level
    nodes = grid.node_array * (2 * resolution)
    tree = cKDTree(nodes.astype(float))
    k = min(3 ** dim, len(nodes))
    counts = np.zeros(len(nodes), dtype=np.int64)

    axis = 2 * np.arange(per_axis, dtype=np.int64) + 1
    total = per_axis ** dim
    for start in range(0, total, chunk):
        flat = np.arange(start, min(start + chunk, total), dtype=np.int64)
        points = np.stack(np.unravel_index(flat, (per_axis,) * dim), axis=1)
        points = axis[points]
        _, candidates = tree.query(points.astype(float), k=k, p=np.inf)
        candidates = candidates.reshape(len(points), k)
        diff = np.abs(points[:, None, :] - nodes[candidates])
        dinf = diff.max(axis=2)
        d2 = (diff * diff).sum(axis=2)
        # node indices follow lexicographic NodeKey order
        n = len(nodes) + 1
        span = (int(d2.max()) + 1) * n
        score = dinf * span + d2 * n + candidates
        winners = candidates[np.arange(len(points)), score.argmin(axis=1)]
        counts += np.bincount(winners, minlength=len(nodes))

    sampled = counts / float(total)
    error = float(np.abs(sampled - mesh.volumes).max())
    logger.info("Sampling oracle at resolution %d: max volume error %.3e", resolution, error)
    return error


def mesh_stats(grid: PrimalGrid, mesh: DualMesh) -> Dict[str, Any]:
    """Grid and dual mesh statistics."""
    keys = mesh.leaf_keys
    return {
        "leaves": grid.num_leaves,
        "primal_faces": grid.primal_face_count(),
        "primal_nodes": grid.num_nodes,
        "dual_cells": mesh.num_cells,
        "dual_nodes": dual_node_count(mesh),
        "distinct_patterns": int(len(np.unique(mesh.leaf_canon))),
        "trivial_fraction": float(np.count_nonzero(keys == 0)) / len(keys),
    }
