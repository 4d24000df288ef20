"""Local geometry - exact atom subdivision of the reference cell and separating faces.

All coordinates on the reference cell are integers at scale 48 (cell edge = 48
units), so every distance comparison made during pattern generation is exact.
"""

import itertools
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np


SCALE = 48
STEP = 12
HALF = 24

Coord = Tuple[int, ...]


class GeometryError(Exception):
    """Custom exception for reference geometry errors."""
    pass


def _sub(a: Sequence[int], b: Sequence[int]) -> Coord:
    return tuple(x - y for x, y in zip(a, b))


def _dot(a: Sequence[int], b: Sequence[int]) -> int:
    return sum(x * y for x, y in zip(a, b))


def _cross(a: Sequence[int], b: Sequence[int]) -> Coord:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _rot90(n: Sequence[int]) -> Coord:
    """Edge direction of a counterclockwise boundary with outward normal n (2D)."""
    return (-n[1], n[0])


def _primitive(v: Sequence[int]) -> Coord:
    g = 0
    for x in v:
        g = math.gcd(g, abs(x))
    return tuple(x // g for x in v) if g else tuple(v)


def _twice_area_vector(vertices: Sequence[Coord]) -> Coord:
    total = (0, 0, 0)
    for a, b in zip(vertices, vertices[1:] + vertices[:1]):
        c = _cross(a, b)
        total = (total[0] + c[0], total[1] + c[1], total[2] + c[2])
    return total


@dataclass(frozen=True)
class FacePolygon:
    """Planar facet with exact area.

    ``area`` is measured in units of the cell-face measure (the square of the
    cell edge in 3D, the cell edge in 2D) and carries a sqrt(2) factor when
    ``sqrt2`` is set. ``normal`` is the primitive integer outward direction.
    In 3D the vertices run counterclockwise about the normal; in 2D the
    segment runs along the normal rotated by +90 degrees.
    """

    vertices: Tuple[Coord, ...]
    normal: Coord
    area: Fraction
    sqrt2: bool

    @property
    def dim(self) -> int:
        return len(self.normal)

    @property
    def area_value(self) -> float:
        return float(self.area) * (math.sqrt(2.0) if self.sqrt2 else 1.0)

    @property
    def unit_normal(self) -> np.ndarray:
        n = np.asarray(self.normal, dtype=float)
        return n / np.linalg.norm(n)

    def measure(self, unit: int = SCALE) -> float:
        """Area (3D) or length (2D) in coordinate units, for cell edge ``unit``."""
        return self.area_value * unit ** (self.dim - 1)

    def area_vector(self, unit: int = SCALE) -> np.ndarray:
        return self.measure(unit) * self.unit_normal

    def quadrature_weights(self) -> np.ndarray:
        """Vertex weights of the polygon trapezoidal rule in coordinate units."""
        return polygon_weights(np.asarray(self.vertices, dtype=float), self.unit_normal)

    def plane_key(self) -> Tuple[Coord, int]:
        return self.normal, _dot(self.normal, self.vertices[0])

    def reversed(self) -> "FacePolygon":
        """Same facet seen from the other side."""
        return FacePolygon(
            tuple(reversed(self.vertices)), tuple(-x for x in self.normal), self.area, self.sqrt2
        )

    def canonical(self) -> "FacePolygon":
        """Rotate the vertex cycle so the smallest vertex comes first (3D only)."""
        if self.dim == 2:
            return self
        start = self.vertices.index(min(self.vertices))
        return FacePolygon(
            self.vertices[start:] + self.vertices[:start], self.normal, self.area, self.sqrt2
        )

    def sort_key(self) -> Tuple:
        return self.normal, self.vertices


def make_face(vertices: Sequence[Coord], normal: Sequence[int], unit: int = SCALE) -> FacePolygon:
    """
    Build a FacePolygon with exact area from oriented vertices.

    Args:
        vertices: Vertices ordered as described on FacePolygon
        normal: Outward direction (any integer multiple of an axis or plane diagonal)
        unit: Cell edge length in coordinate units

    Returns:
        FacePolygon: Facet with primitive normal and exact area

    Raises:
        GeometryError: If the normal is not axis/diagonal or the orientation is wrong
    """
    vertices = tuple(tuple(int(x) for x in v) for v in vertices)
    normal = _primitive(normal)
    norm2 = _dot(normal, normal)
    if norm2 not in (1, 2):
        raise GeometryError(f"Facet normal {normal} is neither an axis nor a plane diagonal")

    if len(normal) == 3:
        if len(vertices) < 3:
            raise GeometryError(f"Polygon needs at least 3 vertices, got {len(vertices)}")
        signed = Fraction(_dot(_twice_area_vector(vertices), normal), 2 * norm2)
    else:
        if len(vertices) != 2:
            raise GeometryError(f"2D facet must be a segment, got {len(vertices)} vertices")
        signed = Fraction(_dot(_sub(vertices[1], vertices[0]), _rot90(normal)), norm2)

    if signed <= 0:
        raise GeometryError(f"Facet {vertices} is not oriented about normal {normal}")
    area = signed / unit ** (len(normal) - 1)
    return FacePolygon(vertices, normal, area, norm2 == 2)


def polygon_weights(vertices: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """
    Vertex weights of the generalized trapezoidal rule on a planar polygon.

    The polygon is fanned about its vertex mean p; each triangle (p, v_i, v_i+1)
    gives a third of its signed area to each corner, and p's share is spread
    evenly over the vertices. Exact for affine integrands, weights sum to the
    area. Segments (2D) get half their length per endpoint.

    Args:
        vertices: (m, dim) vertex coordinates in order
        normal: Unit normal used to sign the fan triangles

    Returns:
        np.ndarray: (m,) weights
    """
    vertices = np.asarray(vertices, dtype=float)
    if vertices.shape[1] == 2:
        length = float(np.linalg.norm(vertices[1] - vertices[0]))
        return np.array([0.5 * length, 0.5 * length])

    p = vertices.mean(axis=0)
    a = vertices - p
    b = np.roll(vertices, -1, axis=0) - p
    thirds = (np.cross(a, b) @ normal) / 6.0
    weights = thirds + np.roll(thirds, 1)
    weights += thirds.sum() / len(vertices)
    return weights


@dataclass(frozen=True)
class Atom:
    """One piece of the fixed subdivision of the reference cell."""

    index: int
    kind: str
    vertices: Tuple[Coord, ...]
    centroid: Coord
    volume: Fraction
    facets: Tuple[FacePolygon, ...]


def _order_about(points: List[Coord], normal: Coord) -> Tuple[Coord, ...]:
    if len(normal) == 2:
        a, b = points
        return (a, b) if _dot(_sub(b, a), _rot90(normal)) > 0 else (b, a)
    center = np.mean(np.asarray(points, dtype=float), axis=0)
    n = np.asarray(normal, dtype=float)
    u = np.asarray(points[0], dtype=float) - center
    w = np.cross(n, u)
    return tuple(sorted(
        points,
        key=lambda p: math.atan2(float((np.asarray(p) - center) @ w), float((np.asarray(p) - center) @ u)),
    ))


def convex_facets(vertices: Sequence[Coord]) -> List[FacePolygon]:
    """
    Facets of the convex hull of a small integer point set.

    Args:
        vertices: Hull vertices (no interior points)

    Returns:
        list: Outward-oriented facets
    """
    dim = len(vertices[0])
    seen = set()
    facets = []
    for combo in itertools.combinations(range(len(vertices)), dim):
        base = vertices[combo[0]]
        if dim == 3:
            n = _cross(_sub(vertices[combo[1]], base), _sub(vertices[combo[2]], base))
        else:
            d = _sub(vertices[combo[1]], base)
            n = (d[1], -d[0])
        if not any(n):
            continue
        n = _primitive(n)
        sides = [_dot(n, _sub(p, base)) for p in vertices]
        if all(s >= 0 for s in sides):
            n = tuple(-x for x in n)
        elif not all(s <= 0 for s in sides):
            continue
        plane = (n, _dot(n, base))
        if plane in seen:
            continue
        seen.add(plane)
        on_plane = [p for p in vertices if _dot(n, p) == plane[1]]
        facets.append(make_face(_order_about(on_plane, n), n))
    return facets


def _polytope_volume(facets: Sequence[FacePolygon]) -> Fraction:
    dim = facets[0].dim
    if dim == 2:
        twice = sum(f.vertices[0][0] * f.vertices[1][1] - f.vertices[1][0] * f.vertices[0][1] for f in facets)
        return Fraction(twice, 2 * SCALE ** 2)
    six = 0
    for f in facets:
        v0 = f.vertices[0]
        for a, b in zip(f.vertices[1:-1], f.vertices[2:]):
            six += _dot(v0, _cross(a, b))
    return Fraction(six, 6 * SCALE ** 3)


def _make_atom(index: int, kind: str, vertices: List[Coord]) -> Atom:
    vertices = tuple(vertices)
    dim = len(vertices[0])
    sums = [sum(v[i] for v in vertices) for i in range(dim)]
    if any(s % len(vertices) for s in sums):
        raise GeometryError(f"Centroid of {kind} atom {index} is not on the integer lattice")
    facets = tuple(convex_facets(vertices))
    return Atom(
        index=index,
        kind=kind,
        vertices=vertices,
        centroid=tuple(s // len(vertices) for s in sums),
        volume=_polytope_volume(facets),
        facets=facets,
    )


def _triangles(sp: int, sq: int) -> List[Tuple[Tuple[int, int], ...]]:
    """The two halves of a quarter square cut by the diagonal through the centre."""
    far = (HALF + STEP * sp, HALF + STEP * sq)
    return [
        ((HALF, HALF), (HALF + STEP * sp, HALF), far),
        ((HALF, HALF), (HALF, HALF + STEP * sq), far),
    ]


def _atom_shapes_3d() -> List[Tuple[str, List[Coord]]]:
    shapes = []
    for idx in itertools.product(range(4), repeat=3):
        lo = tuple(STEP * i for i in idx)
        outer = [ax for ax in range(3) if idx[ax] in (0, 3)]
        signs = tuple(1 if i >= 2 else -1 for i in idx)

        if not outer:
            for perm in itertools.permutations(range(3)):
                point = [HALF, HALF, HALF]
                verts = [tuple(point)]
                for ax in perm:
                    point[ax] += STEP * signs[ax]
                    verts.append(tuple(point))
                shapes.append(("tet", verts))
        elif len(outer) == 1:
            ax = outer[0]
            p, q = [a for a in range(3) if a != ax]
            for tri in _triangles(signs[p], signs[q]):
                verts = []
                for depth in (lo[ax], lo[ax] + STEP):
                    for a, b in tri:
                        c = [0, 0, 0]
                        c[ax], c[p], c[q] = depth, a, b
                        verts.append(tuple(c))
                shapes.append(("prism", verts))
        else:
            verts = [tuple(l + STEP * o for l, o in zip(lo, offs)) for offs in itertools.product((0, 1), repeat=3)]
            shapes.append(("cube", verts))
    return shapes


def _atom_shapes_2d() -> List[Tuple[str, List[Coord]]]:
    shapes = []
    for idx in itertools.product(range(4), repeat=2):
        if all(i in (1, 2) for i in idx):
            signs = tuple(1 if i == 2 else -1 for i in idx)
            for tri in _triangles(*signs):
                shapes.append(("triangle", list(tri)))
        else:
            lo = tuple(STEP * i for i in idx)
            verts = [tuple(l + STEP * o for l, o in zip(lo, offs)) for offs in itertools.product((0, 1), repeat=2)]
            shapes.append(("square", verts))
    return shapes


@lru_cache(maxsize=None)
def subdivide_reference_cell(dim: int) -> Tuple[Atom, ...]:
    """
    Fixed subdivision of the reference cell [0,48]^dim into atoms.

    3D: 32 untouched cubes, 48 prisms (the 24 cubes touching a face midpoint,
    each cut along the face diagonal through that midpoint) and 48 tets (the 8
    central cubes, each cut by the diagonal planes through the cell centre).
    2D: 12 squares and 8 triangles.

    Args:
        dim: 2 or 3

    Returns:
        tuple: Atoms, indexed by position

    Raises:
        GeometryError: If dim is not 2 or 3
    """
    if dim == 3:
        shapes = _atom_shapes_3d()
    elif dim == 2:
        shapes = _atom_shapes_2d()
    else:
        raise GeometryError(f"Reference cell dimension must be 2 or 3, got {dim}")
    return tuple(_make_atom(i, kind, verts) for i, (kind, verts) in enumerate(shapes))


@lru_cache(maxsize=None)
def reference_nodes(dim: int) -> Tuple[Coord, ...]:
    """
    Candidate node positions indexed by LocalNodeId.

    3D: corners 0-7 (x + 2y + 4z), x-parallel edge midpoints 8-11 (8 + y + 2z),
    y-parallel 12-15 (12 + x + 2z), z-parallel 16-19 (16 + x + 2y), face
    midpoints 20-25 (x=0, x=1, y=0, y=1, z=0, z=1).
    2D: corners 0-3 (x + 2y), x-parallel edge midpoints 4-5 (4 + y),
    y-parallel 6-7 (6 + x).
    """
    if dim == 2:
        corners = [(SCALE * x, SCALE * y) for y in (0, 1) for x in (0, 1)]
        edges = [(HALF, SCALE * y) for y in (0, 1)] + [(SCALE * x, HALF) for x in (0, 1)]
        return tuple(corners + edges)
    if dim != 3:
        raise GeometryError(f"Reference cell dimension must be 2 or 3, got {dim}")

    corners = [(SCALE * x, SCALE * y, SCALE * z) for z in (0, 1) for y in (0, 1) for x in (0, 1)]
    edges = []
    edges += [(HALF, SCALE * (e & 1), SCALE * (e >> 1)) for e in range(4)]
    edges += [(SCALE * (e & 1), HALF, SCALE * (e >> 1)) for e in range(4)]
    edges += [(SCALE * (e & 1), SCALE * (e >> 1), HALF) for e in range(4)]
    faces = []
    for axis in range(3):
        for side in (0, 1):
            c = [HALF, HALF, HALF]
            c[axis] = SCALE * side
            faces.append(tuple(c))
    return tuple(corners + edges + faces)


def corner_count(dim: int) -> int:
    return 2 ** dim


def linf_dist2_scaled(a: Coord, b: Coord) -> Tuple[int, int]:
    """
    Chebyshev distance and squared Euclidean distance between two points.

    Args:
        a: First point (integer coordinates)
        b: Second point

    Returns:
        tuple: (dinf, d2), both integers
    """
    diff = [abs(x - y) for x, y in zip(a, b)]
    return max(diff), sum(d * d for d in diff)


def assign_atom(atom: Atom, nodes: Sequence[Tuple[int, Coord]]) -> int:
    """
    Node owning an atom: smallest (dinf, d2, node id) from the atom centroid.

    Args:
        atom: Atom of the reference subdivision
        nodes: (LocalNodeId, position) pairs, nonempty

    Returns:
        int: Winning LocalNodeId

    Raises:
        GeometryError: If no nodes are given
    """
    if not nodes:
        raise GeometryError("Cannot assign an atom without candidate nodes")
    return min(nodes, key=lambda node: (*linf_dist2_scaled(atom.centroid, node[1]), node[0]))[0]


def _facet_index(dim: int) -> Dict[FrozenSet[Coord], List[Tuple[int, FacePolygon]]]:
    index = defaultdict(list)
    for atom in subdivide_reference_cell(dim):
        for facet in atom.facets:
            index[frozenset(facet.vertices)].append((atom.index, facet))
    return index


def _on_cell_face(facet: FacePolygon) -> Tuple[int, int]:
    """Return (face index, axis) of the cell face containing facet, or (-1, -1)."""
    for axis in range(facet.dim):
        values = {v[axis] for v in facet.vertices}
        if values == {0}:
            return 2 * axis, axis
        if values == {SCALE}:
            return 2 * axis + 1, axis
    return -1, -1


@lru_cache(maxsize=None)
def shared_facets(dim: int) -> Tuple[Tuple[int, int, FacePolygon], ...]:
    """
    Facets shared by two atoms, as (i, j, facet oriented from i to j), i < j.

    Raises:
        GeometryError: If the subdivision is not watertight
    """
    shared = []
    for key, owners in _facet_index(dim).items():
        if len(owners) == 2:
            (i, fi), (j, _) = sorted(owners, key=lambda o: o[0])
            shared.append((i, j, fi))
        elif len(owners) == 1:
            if _on_cell_face(owners[0][1])[0] < 0:
                raise GeometryError(f"Interior facet {sorted(key)} belongs to a single atom")
        else:
            raise GeometryError(f"Facet {sorted(key)} is shared by {len(owners)} atoms")
    return tuple(sorted(shared, key=lambda s: (s[0], s[1], s[2].sort_key())))


@lru_cache(maxsize=None)
def boundary_facets(dim: int) -> Tuple[Tuple[int, int, int, FacePolygon], ...]:
    """
    Atom facets on the cell boundary, as (atom, cell face, sub index, facet).

    Cell faces are numbered 2*axis + side. In 3D the sub index is the index of
    the 2D atom the facet projects onto (dropping the face axis); in 2D it is
    the position of the segment along its edge (0-3).
    """
    lower = {}
    if dim == 3:
        lower = {frozenset(a.vertices): a.index for a in subdivide_reference_cell(2)}

    result = []
    for owners in _facet_index(dim).values():
        if len(owners) != 1:
            continue
        atom, facet = owners[0]
        face, axis = _on_cell_face(facet)
        if dim == 3:
            projected = frozenset(tuple(c for k, c in enumerate(v) if k != axis) for v in facet.vertices)
            if projected not in lower:
                raise GeometryError(f"Boundary facet {facet.vertices} has no 2D counterpart")
            sub = lower[projected]
        else:
            free = 1 - axis
            sub = min(v[free] for v in facet.vertices) // STEP
        result.append((atom, face, sub, facet))
    return tuple(sorted(result, key=lambda r: (r[1], r[2])))


def _split_edge(a: Coord, b: Coord, points: Sequence[Coord]) -> List[Tuple[Coord, Coord]]:
    d = _sub(b, a)
    length2 = _dot(d, d)
    inner = []
    for p in points:
        if p == a or p == b:
            continue
        ap = _sub(p, a)
        if any(_cross(d, ap)):
            continue
        t = _dot(ap, d)
        if 0 < t < length2:
            inner.append((t, p))
    chain = [a] + [p for _, p in sorted(inner)] + [b]
    return list(zip(chain, chain[1:]))


def _drop_collinear(loop: List[Coord]) -> List[Coord]:
    changed = True
    while changed and len(loop) > 3:
        changed = False
        for i in range(len(loop)):
            prev, cur, nxt = loop[i - 1], loop[i], loop[(i + 1) % len(loop)]
            if not any(_cross(_sub(cur, prev), _sub(nxt, cur))):
                del loop[i]
                changed = True
                break
    return loop


def merge_coplanar(polygons: Sequence[Tuple[Coord, ...]], normal: Coord) -> List[Tuple[Coord, ...]]:
    """
    Merge edge-adjacent coplanar polygons into maximal polygons.

    Interior edges cancel pairwise after splitting edges at every vertex lying
    on them (T-junctions); the remaining directed edges are chained into loops
    and collinear vertices are dropped. When the union has holes or pinch
    points the input polygons are returned unchanged.

    Args:
        polygons: Vertex tuples, all counterclockwise about ``normal`` (3D)
        normal: Common plane normal

    Returns:
        list: Merged vertex tuples, each starting at its smallest vertex
    """
    if len(polygons) == 1:
        return [tuple(polygons[0])]

    points = sorted({v for poly in polygons for v in poly})
    edges = Counter()
    for poly in polygons:
        for a, b in zip(poly, poly[1:] + poly[:1]):
            for s, t in _split_edge(a, b, points):
                edges[(s, t)] += 1

    successor = {}
    for (a, b), count in edges.items():
        net = count - edges.get((b, a), 0)
        if net <= 0:
            continue
        if net > 1 or a in successor:
            return [tuple(p) for p in polygons]
        successor[a] = b

    loops = []
    while successor:
        start = min(successor)
        loop = [start]
        current = successor.pop(start)
        while current != start:
            if current not in successor:
                return [tuple(p) for p in polygons]
            loop.append(current)
            current = successor.pop(current)
        loop = _drop_collinear(loop)
        if _dot(_twice_area_vector(loop), normal) <= 0:
            return [tuple(p) for p in polygons]
        first = loop.index(min(loop))
        loops.append(tuple(loop[first:] + loop[:first]))
    return loops


def merge_collinear(segments: Sequence[Tuple[Coord, Coord]], normal: Coord) -> List[Tuple[Coord, Coord]]:
    """Join touching segments on one line (2D counterpart of merge_coplanar)."""
    direction = _rot90(normal)
    ordered = sorted(segments, key=lambda s: _dot(s[0], direction))
    merged = [list(ordered[0])]
    for start, end in ordered[1:]:
        if merged[-1][1] == start:
            merged[-1][1] = end
        else:
            merged.append([start, end])
    return [tuple(s) for s in merged]


def merge_faces(pieces: Sequence[FacePolygon], unit: int = SCALE) -> List[FacePolygon]:
    """
    Merge facets lying in common planes into maximal polygons.

    Args:
        pieces: Facets, all oriented the same way across their interface
        unit: Cell edge length in coordinate units

    Returns:
        list: Merged facets in canonical vertex order, sorted by (normal, vertices)
    """
    groups = defaultdict(list)
    for piece in pieces:
        groups[piece.plane_key()].append(piece.vertices)

    merged = []
    for (normal, _), polygons in groups.items():
        if len(normal) == 3:
            loops = merge_coplanar(polygons, normal)
        else:
            loops = merge_collinear(polygons, normal)
        merged.extend(make_face(loop, normal, unit).canonical() for loop in loops)
    return sorted(merged, key=FacePolygon.sort_key)


def interface_faces(atoms_a: Sequence[Atom], atoms_b: Sequence[Atom]) -> List[FacePolygon]:
    """
    Facets shared between two disjoint atom sets, merged, oriented from A to B.

    Args:
        atoms_a: Atoms of the first set
        atoms_b: Atoms of the second set (same reference subdivision)

    Returns:
        list: Merged facets; empty when the sets do not touch

    Raises:
        GeometryError: If the sets overlap or mix dimensions
    """
    if not atoms_a or not atoms_b:
        return []
    dims = {len(a.centroid) for a in list(atoms_a) + list(atoms_b)}
    if len(dims) != 1:
        raise GeometryError("Atom sets mix 2D and 3D atoms")
    set_a = {a.index for a in atoms_a}
    set_b = {a.index for a in atoms_b}
    if set_a & set_b:
        raise GeometryError("Atom sets must be disjoint")

    pieces = []
    for i, j, facet in shared_facets(dims.pop()):
        if i in set_a and j in set_b:
            pieces.append(facet)
        elif j in set_a and i in set_b:
            pieces.append(facet.reversed())
    return merge_faces(pieces) if pieces else []
