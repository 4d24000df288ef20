"""Pattern engine - local Voronoi patterns per refinement key and the symmetry-reduced lookup table."""

import logging
import random
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache
from typing import Any, Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from stagger_mesh.config import Config
from stagger_mesh.local_geometry import (
    SCALE, Coord, FacePolygon, boundary_facets, corner_count, merge_faces,
    reference_nodes, shared_facets, subdivide_reference_cell,
)
from stagger_mesh.symmetry import (
    SymmetryOp, atom_permutation, boundary_permutation, inverse, node_permutation,
    symmetry_group, transform_key,
)
from stagger_mesh.utils import FileError, ParseError, read_json, write_json


logger = logging.getLogger(__name__)

KEY_BITS = {2: 4, 3: 18}
FACE_BIT_OFFSET = 12


class PatternError(Exception):
    """Custom exception for pattern generation and lookup errors."""
    pass


@dataclass(frozen=True)
class Region:
    """Atoms of one local Voronoi region."""

    node: int
    atoms: Tuple[int, ...]
    volume: Fraction


class PatternFace(NamedTuple):
    """Separating face between the regions of nodes a < b, oriented from a to b."""

    a: int
    b: int
    polygon: FacePolygon


class TracePolygon(NamedTuple):
    """Part of a cell face owned by one node, oriented out of the cell."""

    face: int
    node: int
    polygon: FacePolygon


@dataclass(eq=False)
class LocalPattern:
    """Partition of the reference cell into local Voronoi regions for one key."""

    key: int
    dim: int
    regions: Dict[int, Region]
    internal_faces: Tuple[PatternFace, ...]
    boundary_traces: Dict[int, Dict[int, int]] = field(default_factory=dict)

    def volumes(self) -> Dict[int, Fraction]:
        return {node: region.volume for node, region in self.regions.items()}

    @property
    def nodes(self) -> List[int]:
        return sorted(self.regions)

    def region_signature(self) -> Tuple:
        return tuple((n, self.regions[n].atoms, self.regions[n].volume) for n in self.nodes)

    def signature(self) -> Tuple:
        """Hashable form used for exact pattern comparison."""
        faces = tuple(
            (f.a, f.b, f.polygon.normal, f.polygon.vertices, f.polygon.area, f.polygon.sqrt2)
            for f in self.internal_faces
        )
        traces = tuple(sorted(
            (face, sub, node) for face, subs in self.boundary_traces.items() for sub, node in subs.items()
        ))
        return self.key, self.dim, self.region_signature(), faces, traces

    @cached_property
    def trace_polygons(self) -> Tuple[TracePolygon, ...]:
        """Boundary traces merged into one or more polygons per (cell face, node)."""
        pieces = defaultdict(list)
        for _, face, sub, facet in boundary_facets(self.dim):
            pieces[(face, self.boundary_traces[face][sub])].append(facet)
        result = []
        for face, node in sorted(pieces):
            for polygon in merge_faces(pieces[(face, node)]):
                result.append(TracePolygon(face, node, polygon))
        return tuple(result)


@lru_cache(maxsize=None)
def face_edge_masks(dim: int) -> Tuple[int, ...]:
    """Edge-bit mask of each cell face (3D); empty in 2D."""
    if dim == 2:
        return ()
    nodes = reference_nodes(3)
    offset = corner_count(3)
    masks = []
    for face in range(6):
        axis, side = divmod(face, 2)
        mask = 0
        for e in range(FACE_BIT_OFFSET):
            if nodes[offset + e][axis] == SCALE * side:
                mask |= 1 << e
        masks.append(mask)
    return tuple(masks)


def is_valid_key(key: int, dim: int) -> bool:
    """True when key is in range and every face bit has its four edge bits."""
    if dim not in KEY_BITS or not 0 <= key < 1 << KEY_BITS[dim]:
        return False
    for face, mask in enumerate(face_edge_masks(dim)):
        if key >> (FACE_BIT_OFFSET + face) & 1 and key & mask != mask:
            return False
    return True


def validate_key(key: int, dim: int) -> None:
    """
    Raises:
        PatternError: If key is not a valid refinement key
    """
    if not is_valid_key(key, dim):
        raise PatternError(f"Invalid {dim}D refinement key {key:#x} (face bit without its edge bits or out of range)")


def present_nodes(key: int, dim: int) -> List[int]:
    """LocalNodeIds present for key: all corners plus midpoints whose bit is set."""
    offset = corner_count(dim)
    return list(range(offset)) + [offset + b for b in range(KEY_BITS[dim]) if key >> b & 1]


def enumerate_valid_keys(dim: int) -> List[int]:
    """
    All valid refinement keys, by brute force over every bit combination.

    Args:
        dim: 2 or 3

    Returns:
        list: Valid keys in ascending order (6210 in 3D, 16 in 2D)
    """
    if dim not in KEY_BITS:
        raise PatternError(f"Dimension must be 2 or 3, got {dim}")
    keys = np.arange(1 << KEY_BITS[dim], dtype=np.int64)
    valid = np.ones(keys.shape, dtype=bool)
    for face, mask in enumerate(face_edge_masks(dim)):
        face_set = (keys >> (FACE_BIT_OFFSET + face)) & 1 == 1
        valid &= ~face_set | ((keys & mask) == mask)
    return [int(k) for k in keys[valid]]


@lru_cache(maxsize=None)
def _score_matrix(dim: int) -> np.ndarray:
    atoms = subdivide_reference_cell(dim)
    centroids = np.array([a.centroid for a in atoms], dtype=np.int64)
    nodes = np.array(reference_nodes(dim), dtype=np.int64)
    diff = np.abs(centroids[:, None, :] - nodes[None, :, :])
    dinf = diff.max(axis=2)
    d2 = (diff ** 2).sum(axis=2)
    ids = np.arange(len(nodes), dtype=np.int64)
    return (dinf * 8192 + d2) * 32 + ids[None, :]


def assign_atoms(key: int, dim: int) -> Tuple[int, ...]:
    """
    Owner of every atom for key, by the (dinf, d2, node id) rule.

    Same result as local_geometry.assign_atom applied atom by atom.
    """
    validate_key(key, dim)
    columns = np.array(present_nodes(key, dim))
    winners = columns[_score_matrix(dim)[:, columns].argmin(axis=1)]
    return tuple(int(w) for w in winners)


def region_volumes(key: int, dim: int) -> Dict[int, Fraction]:
    """Exact region volumes for key without building faces."""
    atoms = subdivide_reference_cell(dim)
    volumes = defaultdict(Fraction)
    for atom, owner in zip(atoms, assign_atoms(key, dim)):
        volumes[owner] += atom.volume
    return dict(volumes)


def _pattern_faces(owners: Sequence[int], dim: int) -> Tuple[PatternFace, ...]:
    pieces = defaultdict(list)
    for i, j, facet in shared_facets(dim):
        a, b = owners[i], owners[j]
        if a == b:
            continue
        if a < b:
            pieces[(a, b)].append(facet)
        else:
            pieces[(b, a)].append(facet.reversed())

    faces = []
    for a, b in sorted(pieces):
        for polygon in merge_faces(pieces[(a, b)]):
            faces.append(PatternFace(a, b, polygon))
    return tuple(faces)


def build_pattern(key: int, dim: int = 3) -> LocalPattern:
    """
    Build the local pattern of a refinement key.

    Args:
        key: Valid refinement key
        dim: 2 or 3

    Returns:
        LocalPattern: Regions, merged internal faces and boundary traces

    Raises:
        PatternError: If the key is invalid
    """
    owners = assign_atoms(key, dim)
    atoms = subdivide_reference_cell(dim)

    members = defaultdict(list)
    for atom, owner in zip(atoms, owners):
        members[owner].append(atom.index)
    regions = {
        node: Region(node, tuple(idx), sum((atoms[i].volume for i in idx), Fraction(0)))
        for node, idx in sorted(members.items())
    }

    traces = defaultdict(dict)
    for atom, face, sub, _ in boundary_facets(dim):
        traces[face][sub] = owners[atom]

    return LocalPattern(key, dim, regions, _pattern_faces(owners, dim), dict(traces))


def apply_symmetry(pattern: LocalPattern, op: SymmetryOp) -> LocalPattern:
    """
    Transform a pattern by a symmetry of the reference cell.

    Node ids, atoms, faces and traces are mapped; reflections reverse face
    winding so normals stay outward. Volumes are unchanged.
    """
    if op.dim != pattern.dim:
        raise PatternError(f"Cannot apply a {op.dim}D symmetry to a {pattern.dim}D pattern")
    sigma = node_permutation(op)
    amap = atom_permutation(op)
    flip = op.determinant < 0

    regions = {}
    for node, region in pattern.regions.items():
        image = sigma[node]
        regions[image] = Region(image, tuple(sorted(amap[a] for a in region.atoms)), region.volume)

    faces = []
    for face in pattern.internal_faces:
        poly = face.polygon
        vertices = tuple(op.apply_point(v) for v in poly.vertices)
        if flip:
            vertices = tuple(reversed(vertices))
        polygon = FacePolygon(vertices, op.apply_vector(poly.normal), poly.area, poly.sqrt2)
        a, b = sigma[face.a], sigma[face.b]
        if a > b:
            a, b = b, a
            polygon = polygon.reversed()
        faces.append(PatternFace(a, b, polygon.canonical()))
    faces.sort(key=lambda f: (f.a, f.b, f.polygon.sort_key()))

    bmap = boundary_permutation(op)
    traces = defaultdict(dict)
    for face, subs in pattern.boundary_traces.items():
        for sub, node in subs.items():
            new_face, new_sub = bmap[(face, sub)]
            traces[new_face][new_sub] = sigma[node]

    return LocalPattern(
        transform_key(op, pattern.key), pattern.dim,
        dict(sorted(regions.items())), tuple(faces), dict(sorted(traces.items())),
    )


def canonicalize(key: int, dim: int = 3) -> Tuple[int, SymmetryOp]:
    """
    Orbit-minimum representative of key and the symmetry mapping it to key.

    Args:
        key: Valid refinement key
        dim: 2 or 3

    Returns:
        tuple: (canonical key, op) with transform_key(op, canonical) == key

    Raises:
        PatternError: If the key is invalid
    """
    validate_key(key, dim)
    best, best_op = None, None
    for g in symmetry_group(dim):
        image = transform_key(g, key)
        if best is None or image < best:
            best, best_op = image, g
    return best, inverse(best_op)


class PatternTable:
    """Lookup table from every valid key to a canonical pattern and symmetry."""

    def __init__(self, dim: int, canonical: List[LocalPattern], index: Dict[int, Tuple[int, int]]):
        """
        Args:
            dim: 2 or 3
            canonical: Canonical patterns; position = canonical id
            index: key -> (canonical id, symmetry op index)
        """
        self.dim = dim
        self.canonical = canonical
        self.index = index
        self._patterns: Dict[int, LocalPattern] = {}

    def __len__(self) -> int:
        return len(self.index)

    def lookup(self, key: int) -> Tuple[int, SymmetryOp]:
        """
        Raises:
            PatternError: If key has no entry (the grid violates the grading)
        """
        try:
            canon_id, op_index = self.index[key]
        except KeyError:
            raise PatternError(f"Key {key:#x} not in {self.dim}D pattern table")
        return canon_id, symmetry_group(self.dim)[op_index]

    def pattern(self, key: int) -> LocalPattern:
        """Pattern for key, transformed from its canonical representative."""
        if key not in self._patterns:
            canon_id, op = self.lookup(key)
            self._patterns[key] = apply_symmetry(self.canonical[canon_id], op)
        return self._patterns[key]

    def orbit_sizes(self) -> Dict[int, int]:
        sizes = defaultdict(int)
        for canon_id, _ in self.index.values():
            sizes[canon_id] += 1
        return dict(sizes)


def build_table(dim: int = 3, verify_samples: int = 16, seed: int = 0) -> PatternTable:
    """
    Build the pattern table for every valid key.

    Canonical patterns are generated once; a random sample of keys is checked
    against direct construction before the table is returned.

    Args:
        dim: 2 or 3
        verify_samples: Number of keys rebuilt directly as a cross-check
        seed: Seed for the sample

    Returns:
        PatternTable: Complete table

    Raises:
        PatternError: If a transformed pattern differs from direct construction
    """
    keys = enumerate_valid_keys(dim)
    logger.info("Canonicalizing %d valid %dD keys", len(keys), dim)
    orbits = {key: canonicalize(key, dim) for key in keys}
    canonical_keys = sorted({canon for canon, _ in orbits.values()})
    ids = {key: i for i, key in enumerate(canonical_keys)}

    logger.info("Building %d canonical patterns", len(canonical_keys))
    canonical = [build_pattern(key, dim) for key in canonical_keys]
    index = {key: (ids[canon], op.index) for key, (canon, op) in orbits.items()}
    table = PatternTable(dim, canonical, index)

    rng = random.Random(seed)
    for key in rng.sample(keys, min(verify_samples, len(keys))):
        if table.pattern(key).region_signature() != build_pattern(key, dim).region_signature():
            raise PatternError(f"Transformed pattern for key {key:#x} differs from direct construction")
    logger.debug("Verified %d sampled keys against direct construction", min(verify_samples, len(keys)))
    return table


def _pattern_to_dict(canon_id: int, pattern: LocalPattern) -> Dict[str, Any]:
    return {
        "id": canon_id,
        "key": pattern.key,
        "regions": [
            {
                "node": node,
                "volume_num": region.volume.numerator,
                "volume_den": region.volume.denominator,
                "atoms": list(region.atoms),
            }
            for node, region in sorted(pattern.regions.items())
        ],
        "faces": [
            {
                "a": face.a,
                "b": face.b,
                "normal": list(face.polygon.normal),
                "sqrt2": face.polygon.sqrt2,
                "area_num": face.polygon.area.numerator,
                "area_den": face.polygon.area.denominator,
                "verts": [list(v) for v in face.polygon.vertices],
            }
            for face in pattern.internal_faces
        ],
        "traces": sorted(
            [face, sub, node] for face, subs in pattern.boundary_traces.items() for sub, node in subs.items()
        ),
    }


def table_to_dict(table: PatternTable) -> Dict[str, Any]:
    """Serializable form of a table; keys and ids in ascending order."""
    return {
        "dim": table.dim,
        "canonical": [_pattern_to_dict(i, p) for i, p in enumerate(table.canonical)],
        "index": [
            {"key": key, "canon_id": canon_id, "sym_op": op_index}
            for key, (canon_id, op_index) in sorted(table.index.items())
        ],
    }


def table_from_dict(data: Dict[str, Any]) -> PatternTable:
    """
    Rebuild a table from table_to_dict output.

    Raises:
        PatternError: If the data is malformed
    """
    try:
        dim = int(data["dim"])
        canonical = []
        for entry in sorted(data["canonical"], key=lambda e: e["id"]):
            regions = {
                r["node"]: Region(r["node"], tuple(r["atoms"]), Fraction(r["volume_num"], r["volume_den"]))
                for r in entry["regions"]
            }
            faces = tuple(
                PatternFace(f["a"], f["b"], FacePolygon(
                    tuple(tuple(v) for v in f["verts"]), tuple(f["normal"]),
                    Fraction(f["area_num"], f["area_den"]), bool(f["sqrt2"]),
                ))
                for f in entry["faces"]
            )
            traces = defaultdict(dict)
            for face, sub, node in entry.get("traces", []):
                traces[face][sub] = node
            canonical.append(LocalPattern(entry["key"], dim, regions, faces, dict(traces)))
        index = {e["key"]: (e["canon_id"], e["sym_op"]) for e in data["index"]}
    except (KeyError, TypeError, ValueError, ZeroDivisionError) as e:
        raise PatternError(f"Malformed pattern table data: {e}")

    for key, (canon_id, op_index) in index.items():
        if not 0 <= canon_id < len(canonical) or not 0 <= op_index < len(symmetry_group(dim)):
            raise PatternError(f"Table entry for key {key} references a missing pattern or symmetry")
    return PatternTable(dim, canonical, index)


def save_table(table: PatternTable, filepath: str) -> None:
    """
    Raises:
        PatternError: If the file cannot be written
    """
    try:
        write_json(filepath, table_to_dict(table))
    except FileError as e:
        raise PatternError(f"Failed to save pattern table: {e}")


def load_table(filepath: str) -> PatternTable:
    """
    Raises:
        PatternError: If the file is missing or malformed
    """
    try:
        return table_from_dict(read_json(filepath))
    except (FileNotFoundError, ParseError) as e:
        raise PatternError(f"Failed to load pattern table: {e}")


def oracle_assignment(
    key: int,
    dim: int = 3,
    resolution: Optional[int] = None,
    extra_nodes: Iterable[Tuple[int, Coord]] = (),
) -> np.ndarray:
    """
    Winning node id of every sample-cube centre of the reference cell.

    Centres are ordered lexicographically and assigned by the
    (dinf, d2, node id) rule over the key's nodes plus ``extra_nodes``.

    Args:
        key: Valid refinement key
        dim: 2 or 3
        resolution: Samples per axis, a multiple of 24 (default: Config.ORACLE_RESOLUTION)
        extra_nodes: Additional (id, position) nodes in reference coordinates,
            possibly outside the cell

    Returns:
        np.ndarray: Node id per sample point

    Raises:
        PatternError: If the key or the resolution is invalid
    """
    validate_key(key, dim)
    resolution = resolution or Config.ORACLE_RESOLUTION
    if resolution <= 0 or resolution % 24:
        raise PatternError(f"Oracle resolution must be a positive multiple of 24, got {resolution}")
    factor = 2 * resolution // SCALE

    axis = 2 * np.arange(resolution, dtype=np.int64) + 1
    grids = np.meshgrid(*([axis] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)

    positions = reference_nodes(dim)
    nodes = [(n, positions[n]) for n in present_nodes(key, dim)] + list(extra_nodes)

    best_inf = np.full(len(points), np.iinfo(np.int64).max, dtype=np.int64)
    best_d2 = np.full(len(points), np.iinfo(np.int64).max, dtype=np.int64)
    best_id = np.full(len(points), np.iinfo(np.int64).max, dtype=np.int64)
    for node_id, position in nodes:
        diff = np.abs(points - np.asarray(position, dtype=np.int64) * factor)
        dinf = diff.max(axis=1)
        d2 = (diff * diff).sum(axis=1)
        better = (dinf < best_inf) | (
            (dinf == best_inf) & ((d2 < best_d2) | ((d2 == best_d2) & (node_id < best_id)))
        )
        best_inf = np.where(better, dinf, best_inf)
        best_d2 = np.where(better, d2, best_d2)
        best_id = np.where(better, node_id, best_id)
    return best_id


def local_voronoi_oracle(
    key: int,
    dim: int = 3,
    resolution: Optional[int] = None,
    extra_nodes: Iterable[Tuple[int, Coord]] = (),
) -> Dict[int, Fraction]:
    """
    Brute-force region volumes on a sample lattice (test oracle).

    The reference cell is cut into resolution^dim sample cubes whose centres
    are assigned as in oracle_assignment.

    Returns:
        dict: node id -> volume fraction (sample count / total)

    Raises:
        PatternError: If the key or the resolution is invalid
    """
    best_id = oracle_assignment(key, dim, resolution, extra_nodes)
    ids, counts = np.unique(best_id, return_counts=True)
    total = len(best_id)
    return {int(i): Fraction(int(c), total) for i, c in zip(ids, counts)}
