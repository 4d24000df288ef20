"""Symmetry group of the reference cell - signed permutations about the cell centre."""

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Sequence, Tuple

import numpy as np

from stagger_mesh.local_geometry import (
    HALF, Coord, boundary_facets, corner_count, reference_nodes, subdivide_reference_cell,
)


class SymmetryError(Exception):
    """Custom exception for symmetry group errors."""
    pass


@dataclass(frozen=True)
class SymmetryOp:
    """Signed permutation x'_i = signs[i] * x_perm[i], applied about the cell centre."""

    index: int
    perm: Tuple[int, ...]
    signs: Tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.perm)

    @property
    def determinant(self) -> int:
        return int(round(np.linalg.det(self.matrix())))

    def matrix(self) -> np.ndarray:
        m = np.zeros((self.dim, self.dim), dtype=int)
        for i, (p, s) in enumerate(zip(self.perm, self.signs)):
            m[i, p] = s
        return m

    def apply_vector(self, v: Sequence[int]) -> Coord:
        return tuple(s * v[p] for p, s in zip(self.perm, self.signs))

    def apply_point(self, x: Sequence[int], center: int = HALF) -> Coord:
        return tuple(center + s * (x[p] - center) for p, s in zip(self.perm, self.signs))


@lru_cache(maxsize=None)
def symmetry_group(dim: int) -> Tuple[SymmetryOp, ...]:
    """
    All 2^dim * dim! signed permutations; the identity comes first.

    Raises:
        SymmetryError: If dim is not 2 or 3
    """
    if dim not in (2, 3):
        raise SymmetryError(f"Symmetry group dimension must be 2 or 3, got {dim}")
    ops = []
    for perm in itertools.permutations(range(dim)):
        for signs in itertools.product((1, -1), repeat=dim):
            ops.append(SymmetryOp(len(ops), perm, signs))
    return tuple(ops)


@lru_cache(maxsize=None)
def _lookup(dim: int) -> Dict[Tuple[Tuple[int, ...], Tuple[int, ...]], SymmetryOp]:
    return {(op.perm, op.signs): op for op in symmetry_group(dim)}


def identity(dim: int) -> SymmetryOp:
    return symmetry_group(dim)[0]


def compose(g: SymmetryOp, h: SymmetryOp) -> SymmetryOp:
    """The element g after h."""
    perm = tuple(h.perm[g.perm[i]] for i in range(g.dim))
    signs = tuple(g.signs[i] * h.signs[g.perm[i]] for i in range(g.dim))
    return _lookup(g.dim)[(perm, signs)]


def inverse(g: SymmetryOp) -> SymmetryOp:
    perm = [0] * g.dim
    signs = [0] * g.dim
    for i, (p, s) in enumerate(zip(g.perm, g.signs)):
        perm[p] = i
        signs[p] = s
    return _lookup(g.dim)[(tuple(perm), tuple(signs))]


@lru_cache(maxsize=None)
def node_permutation(op: SymmetryOp) -> Tuple[int, ...]:
    """sigma[n] = LocalNodeId of the image of node n."""
    nodes = reference_nodes(op.dim)
    position = {pos: i for i, pos in enumerate(nodes)}
    return tuple(position[op.apply_point(pos)] for pos in nodes)


@lru_cache(maxsize=None)
def atom_permutation(op: SymmetryOp) -> Tuple[int, ...]:
    """Index of the image of every atom, matched by centroid."""
    atoms = subdivide_reference_cell(op.dim)
    by_centroid = {a.centroid: a.index for a in atoms}
    try:
        return tuple(by_centroid[op.apply_point(a.centroid)] for a in atoms)
    except KeyError as e:
        raise SymmetryError(f"Subdivision is not invariant under {op}: {e}")


@lru_cache(maxsize=None)
def boundary_permutation(op: SymmetryOp) -> Dict[Tuple[int, int], Tuple[int, int]]:
    """Map (cell face, sub index) of each boundary facet to that of its image."""
    facets = boundary_facets(op.dim)
    by_vertices = {frozenset(f.vertices): (face, sub) for _, face, sub, f in facets}
    mapping = {}
    for _, face, sub, facet in facets:
        image = frozenset(op.apply_point(v) for v in facet.vertices)
        mapping[(face, sub)] = by_vertices[image]
    return mapping


@lru_cache(maxsize=None)
def _key_tables(op: SymmetryOp) -> Tuple[Tuple[int, ...], ...]:
    offset = corner_count(op.dim)
    sigma = node_permutation(op)
    bits = len(sigma) - offset
    tables = []
    for chunk_start in range(0, bits, 6):
        width = min(6, bits - chunk_start)
        table = []
        for value in range(1 << width):
            image = 0
            for b in range(width):
                if value >> b & 1:
                    image |= 1 << (sigma[offset + chunk_start + b] - offset)
            table.append(image)
        tables.append(tuple(table))
    return tuple(tables)


def transform_key(op: SymmetryOp, key: int) -> int:
    """Key of the hanging-node constellation mapped by op."""
    image = 0
    for i, table in enumerate(_key_tables(op)):
        image |= table[(key >> (6 * i)) & 63]
    return image
