"""Tests for the local geometry module."""

from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from stagger_mesh.local_geometry import (
    SCALE, Atom, GeometryError, assign_atom, boundary_facets, interface_faces, linf_dist2_scaled,
    make_face, merge_collinear, merge_faces, polygon_weights, reference_nodes, shared_facets,
    subdivide_reference_cell,
)


def _atom(centroid):
    return Atom(index=0, kind="sample", vertices=(), centroid=centroid, volume=Fraction(0), facets=())


def _square(x, y, z, size):
    """Square in the plane x = const, counterclockwise about +x."""
    return ((x, y, z), (x, y + size, z), (x, y + size, z + size), (x, y, z + size))


def _find(atoms, kind, vertices):
    for atom in atoms:
        if atom.kind == kind and atom.vertices == tuple(vertices):
            return atom
    raise AssertionError(f"No {kind} atom with vertices {vertices}")


class TestSubdivision:
    """Test cases for the atom subdivision of the reference cell."""

    def test_3d_census(self):
        """Test the 128 atoms and their kinds."""
        atoms = subdivide_reference_cell(3)
        assert len(atoms) == 128
        assert Counter(a.kind for a in atoms) == {"cube": 32, "prism": 48, "tet": 48}

    def test_2d_census(self):
        """Test the 20 atoms of the 2D cell."""
        atoms = subdivide_reference_cell(2)
        assert len(atoms) == 20
        assert Counter(a.kind for a in atoms) == {"square": 12, "triangle": 8}

    @pytest.mark.parametrize("dim", [2, 3])
    def test_volumes_sum_to_one(self, dim):
        """Test the exact volume partition."""
        assert sum(a.volume for a in subdivide_reference_cell(dim)) == 1

    def test_atom_volumes(self):
        """Test the exact volume of each atom kind."""
        volumes = {a.kind: a.volume for a in subdivide_reference_cell(3)}
        assert volumes == {"cube": Fraction(1, 64), "prism": Fraction(1, 128), "tet": Fraction(1, 384)}

    def test_invalid_dimension(self):
        """Test that other dimensions are rejected."""
        with pytest.raises(GeometryError):
            subdivide_reference_cell(4)

    @pytest.mark.parametrize("dim", [2, 3])
    def test_watertight(self, dim):
        """Test that every facet is on the cell boundary or shared by two atoms."""
        facet_count = sum(len(a.facets) for a in subdivide_reference_cell(dim))
        assert 2 * len(shared_facets(dim)) + len(boundary_facets(dim)) == facet_count

    @pytest.mark.parametrize("dim", [2, 3])
    def test_facet_normals_are_axes_or_diagonals(self, dim):
        """Test the admissible facet directions."""
        for atom in subdivide_reference_cell(dim):
            for facet in atom.facets:
                assert sum(x * x for x in facet.normal) in (1, 2)

    def test_boundary_facets_cover_cell_faces(self):
        """Test that boundary facets tile every cell face."""
        area = Counter()
        for _, face, _, facet in boundary_facets(3):
            assert not facet.sqrt2
            area[face] += facet.area
        assert area == {face: 1 for face in range(6)}


class TestReferenceNodes:
    """Test cases for LocalNodeId positions."""

    def test_3d_layout(self):
        """Test corners, edge midpoints and face midpoints."""
        nodes = reference_nodes(3)
        assert len(nodes) == 26
        assert nodes[0] == (0, 0, 0)
        assert nodes[7] == (SCALE, SCALE, SCALE)
        assert nodes[8] == (24, 0, 0)
        assert nodes[13] == (SCALE, 24, 0)
        assert nodes[19] == (SCALE, SCALE, 24)
        assert nodes[20] == (0, 24, 24)
        assert nodes[24] == (24, 24, 0)

    def test_2d_layout(self):
        """Test the 8 node positions of the 2D cell."""
        assert reference_nodes(2) == ((0, 0), (48, 0), (0, 48), (48, 48), (24, 0), (24, 48), (0, 24), (48, 24))


class TestDistances:
    """Test cases for linf_dist2_scaled and assign_atom."""

    def test_identical_points(self):
        """Test the zero distance."""
        assert linf_dist2_scaled((5, 6, 7), (5, 6, 7)) == (0, 0)

    def test_direct_evaluation(self):
        """Test a direct evaluation."""
        assert linf_dist2_scaled((0, 0, 0), (48, 24, 0)) == (48, 2880)

    def test_euclidean_tie_break_values(self):
        """Test equal Chebyshev distances resolved by the squared distance."""
        assert linf_dist2_scaled((18, 18, 18), (0, 0, 0)) == (18, 972)
        assert linf_dist2_scaled((18, 18, 18), (24, 24, 0)) == (18, 396)

    def test_nearest_corner(self):
        """Test that an atom next to corner 0 goes to corner 0."""
        nodes = list(enumerate(reference_nodes(3)[:8]))
        assert assign_atom(_atom((6, 6, 6)), nodes) == 0

    def test_face_midpoint_wins(self):
        """Test that a face midpoint beats the corner."""
        positions = reference_nodes(3)
        nodes = [(i, positions[i]) for i in range(8)] + [(24, positions[24])]
        assert assign_atom(_atom((18, 18, 6)), nodes) == 24

    def test_tie_goes_to_smaller_squared_distance(self):
        """Test the Euclidean tie-break."""
        positions = reference_nodes(3)
        nodes = [(0, positions[0]), (24, positions[24])]
        assert assign_atom(_atom((18, 18, 18)), nodes) == 24

    def test_full_tie_goes_to_smaller_id(self):
        """Test the node id guard."""
        nodes = [(5, (0, 0, 0)), (3, (12, 12, 12))]
        assert assign_atom(_atom((6, 6, 6)), nodes) == 3

    def test_single_node(self):
        """Test that a single candidate always wins."""
        assert assign_atom(_atom((40, 40, 40)), [(7, (0, 0, 0))]) == 7

    def test_no_nodes(self):
        """Test that an empty candidate list is rejected."""
        with pytest.raises(GeometryError):
            assign_atom(_atom((0, 0, 0)), [])


class TestFaces:
    """Test cases for facet construction, quadrature and merging."""

    def test_make_face_area(self):
        """Test exact area in cell-face units."""
        face = make_face(_square(24, 0, 0, 24), (1, 0, 0))
        assert face.area == Fraction(1, 4)
        assert not face.sqrt2

    def test_make_face_wrong_orientation(self):
        """Test that clockwise vertices are rejected."""
        with pytest.raises(GeometryError):
            make_face(tuple(reversed(_square(24, 0, 0, 24))), (1, 0, 0))

    def test_make_face_bad_normal(self):
        """Test that a normal off the axis/diagonal set is rejected."""
        with pytest.raises(GeometryError):
            make_face(((0, 0, 0), (1, 0, 0), (0, 1, 0)), (1, 1, 1))

    def test_polygon_weights_exact_for_affine(self):
        """Test the trapezoidal rule on a triangle."""
        vertices = np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        weights = polygon_weights(vertices, np.array([0.0, 0.0, 1.0]))
        assert weights.sum() == pytest.approx(1.0)
        assert weights @ vertices[:, 0] == pytest.approx(2.0 / 3.0)
        assert weights @ vertices[:, 1] == pytest.approx(1.0 / 3.0)

    def test_segment_weights(self):
        """Test half the length per endpoint."""
        weights = polygon_weights(np.array([[0.0, 0.0], [3.0, 4.0]]), np.array([0.8, -0.6]))
        assert list(weights) == [2.5, 2.5]

    def test_merge_four_squares(self):
        """Test that four coplanar squares merge into one."""
        pieces = [make_face(_square(24, y, z, 12), (1, 0, 0)) for y in (0, 12) for z in (0, 12)]
        merged = merge_faces(pieces)
        assert len(merged) == 1
        assert merged[0].area == Fraction(1, 4)
        assert merged[0].vertices == _square(24, 0, 0, 24)

    def test_disjoint_squares_stay_apart(self):
        """Test that non-touching squares are not merged."""
        pieces = [make_face(_square(24, 0, 0, 12), (1, 0, 0)), make_face(_square(24, 36, 36, 12), (1, 0, 0))]
        assert len(merge_faces(pieces)) == 2

    def test_merge_collinear_segments(self):
        """Test joining touching 2D segments."""
        normal = (1, 0)
        segments = [((24, 12), (24, 24)), ((24, 0), (24, 12)), ((24, 36), (24, 48))]
        assert merge_collinear(segments, normal) == [((24, 0), (24, 24)), ((24, 36), (24, 48))]


class TestInterfaceFaces:
    """Test cases for interface_faces."""

    def test_adjacent_cubes(self):
        """Test one axis-aligned square between face-adjacent cubes."""
        atoms = subdivide_reference_cell(3)
        first = next(a for a in atoms if a.kind == "cube" and min(a.vertices) == (0, 0, 0))
        second = next(a for a in atoms if a.kind == "cube" and min(a.vertices) == (12, 0, 0))
        faces = interface_faces([first], [second])
        assert len(faces) == 1
        assert faces[0].normal == (1, 0, 0)
        assert faces[0].area == Fraction(1, 16)

    def test_tets_across_diagonal_plane(self):
        """Test the triangle between two tets of one central cube."""
        atoms = subdivide_reference_cell(3)
        first = _find(atoms, "tet", [(24, 24, 24), (36, 24, 24), (36, 36, 24), (36, 36, 36)])
        second = _find(atoms, "tet", [(24, 24, 24), (24, 36, 24), (36, 36, 24), (36, 36, 36)])
        faces = interface_faces([first], [second])
        assert len(faces) == 1
        assert faces[0].sqrt2
        assert faces[0].area == Fraction(1, 32)
        assert faces[0].area_value == pytest.approx(2 ** 0.5 / 32)

    def test_prism_and_tet(self):
        """Test the axis triangle between a prism and the central tet next to it."""
        atoms = subdivide_reference_cell(3)
        tet = _find(atoms, "tet", [(24, 24, 24), (36, 24, 24), (36, 36, 24), (36, 36, 36)])
        prisms = [a for a in atoms if a.kind == "prism" and min(v[0] for v in a.vertices) == 36
                  and min(v[1] for v in a.vertices) == 24 and min(v[2] for v in a.vertices) == 24]
        faces = [f for prism in prisms for f in interface_faces([tet], [prism])]
        assert len(faces) == 1
        assert faces[0].normal == (1, 0, 0)
        assert faces[0].area == Fraction(1, 32)
        assert not faces[0].sqrt2

    def test_non_adjacent(self):
        """Test that distant atoms share nothing."""
        atoms = subdivide_reference_cell(3)
        first = next(a for a in atoms if min(a.vertices) == (0, 0, 0))
        second = next(a for a in atoms if max(a.vertices) == (48, 48, 48))
        assert interface_faces([first], [second]) == []

    def test_overlapping_sets(self):
        """Test that overlapping atom sets are rejected."""
        atom = subdivide_reference_cell(3)[0]
        with pytest.raises(GeometryError):
            interface_faces([atom], [atom])
