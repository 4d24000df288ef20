"""Tests for the pattern engine module."""

import json
import os
import random
import tempfile
from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest

from stagger_mesh.pattern_engine import (
    PatternError, PatternTable, apply_symmetry, build_pattern, canonicalize, enumerate_valid_keys,
    face_edge_masks, is_valid_key, load_table, local_voronoi_oracle, oracle_assignment, region_volumes,
    save_table, table_to_dict,
)
from stagger_mesh.symmetry import symmetry_group, transform_key
from stagger_mesh.table_verifier import face_config_masks


def _face_area_totals(pattern):
    totals = defaultdict(float)
    for face in pattern.internal_faces:
        totals[(face.a, face.b)] += face.polygon.area_value
    return totals


def _assert_equivariant(pairs, seed):
    rng = random.Random(seed)
    keys = enumerate_valid_keys(3)
    group = symmetry_group(3)
    for _ in range(pairs):
        key, op = rng.choice(keys), rng.choice(group)
        direct = build_pattern(transform_key(op, key), 3)
        mapped = apply_symmetry(build_pattern(key, 3), op)
        assert mapped.key == direct.key
        assert mapped.region_signature() == direct.region_signature()
        assert mapped.boundary_traces == direct.boundary_traces
        expected = _face_area_totals(direct)
        actual = _face_area_totals(mapped)
        assert set(actual) == set(expected)
        for pair, area in expected.items():
            assert actual[pair] == pytest.approx(area)


class TestKeys:
    """Test cases for key validity and enumeration."""

    def test_key_counts(self):
        """Test 6210 valid 3D keys and 16 valid 2D keys."""
        assert len(enumerate_valid_keys(3)) == 6210
        assert len(enumerate_valid_keys(2)) == 16

    def test_face_bit_needs_its_edges(self):
        """Test the face/edge validity rule."""
        masks = face_edge_masks(3)
        assert not is_valid_key(1 << 12, 3)
        assert is_valid_key(masks[0] | 1 << 12, 3)
        missing_one_edge = masks[0] & (masks[0] - 1)
        assert not is_valid_key(missing_one_edge | 1 << 12, 3)

    def test_each_face_has_four_edges(self):
        """Test the edge masks of the six faces."""
        masks = face_edge_masks(3)
        assert [bin(m).count("1") for m in masks] == [4] * 6

    def test_out_of_range(self):
        """Test keys outside the bit range."""
        assert not is_valid_key(1 << 18, 3)
        assert not is_valid_key(-1, 3)
        assert not is_valid_key(16, 2)

    def test_enumeration_is_sorted(self):
        """Test ascending order."""
        keys = enumerate_valid_keys(3)
        assert keys == sorted(keys)
        assert keys[0] == 0


class TestRegionVolumes:
    """Test cases for exact region volumes."""

    def test_trivial_key_3d(self):
        """Test eight octants for key 0."""
        assert region_volumes(0, 3) == {n: Fraction(1, 8) for n in range(8)}

    def test_trivial_key_2d(self):
        """Test four quadrants for key 0."""
        assert region_volumes(0, 2) == {n: Fraction(1, 4) for n in range(4)}

    def test_all_midpoints_2d(self):
        """Test the 2D cell with four hanging midpoints."""
        volumes = region_volumes(15, 2)
        assert volumes == {
            0: Fraction(1, 16), 1: Fraction(1, 16), 2: Fraction(1, 16), 3: Fraction(1, 16),
            4: Fraction(3, 16), 5: Fraction(3, 16), 6: Fraction(3, 16), 7: Fraction(3, 16),
        }

    def test_partition_every_3d_key(self):
        """Test that region volumes sum to one for every key."""
        assert all(sum(region_volumes(k, 3).values()) == 1 for k in enumerate_valid_keys(3))

    def test_every_present_node_owns_volume(self):
        """Test that no present node ends up with an empty region."""
        rng = random.Random(3)
        for key in rng.sample(enumerate_valid_keys(3), 200):
            volumes = region_volumes(key, 3)
            expected = set(range(8)) | {8 + b for b in range(18) if key >> b & 1}
            assert set(volumes) == expected
            assert all(v > 0 for v in volumes.values())

    def test_invalid_key(self):
        """Test that invalid keys are rejected."""
        with pytest.raises(PatternError):
            region_volumes(1 << 12, 3)


class TestBuildPattern:
    """Test cases for build_pattern."""

    def test_trivial_pattern_faces(self):
        """Test twelve quarter faces between axis-adjacent corners."""
        pattern = build_pattern(0, 3)
        assert pattern.nodes == list(range(8))
        assert len(pattern.internal_faces) == 12
        for face in pattern.internal_faces:
            assert bin(face.a ^ face.b).count("1") == 1
            assert face.polygon.area == Fraction(1, 4)
            assert face.a < face.b

    def test_face_orientation(self):
        """Test that faces point from the lower to the higher node."""
        pattern = build_pattern(0, 3)
        face = next(f for f in pattern.internal_faces if (f.a, f.b) == (0, 1))
        assert face.polygon.normal == (1, 0, 0)
        assert all(v[0] == 24 for v in face.polygon.vertices)

    def test_boundary_traces_of_trivial_pattern(self):
        """Test that every boundary facet goes to a corner of its face."""
        pattern = build_pattern(0, 3)
        assert set(pattern.boundary_traces) == set(range(6))
        for face, subs in pattern.boundary_traces.items():
            axis, side = divmod(face, 2)
            for node in subs.values():
                assert (node >> axis) & 1 == side

    def test_trace_polygons_cover_faces(self):
        """Test that merged traces tile each cell face."""
        pattern = build_pattern(face_edge_masks(3)[4] | 1 << 16, 3)
        area = defaultdict(Fraction)
        for trace in pattern.trace_polygons:
            area[trace.face] += trace.polygon.area
        assert dict(area) == {face: 1 for face in range(6)}

    def test_face_midpoint_pattern(self):
        """Test that a hanging face midpoint gets its own region."""
        pattern = build_pattern(face_edge_masks(3)[4] | 1 << 16, 3)
        assert 24 in pattern.regions
        assert sum(pattern.volumes().values()) == 1

    def test_2d_pattern_segments(self):
        """Test the 2D trivial pattern."""
        pattern = build_pattern(0, 2)
        assert len(pattern.internal_faces) == 4
        assert all(f.polygon.area == Fraction(1, 2) for f in pattern.internal_faces)


class TestSymmetry:
    """Test cases for pattern equivariance."""

    def test_equivariance_on_sampled_pairs(self):
        """Test pattern(g.k) == g.pattern(k) on regions, traces and face areas."""
        _assert_equivariant(pairs=40, seed=5)

    @pytest.mark.slow
    def test_equivariance_on_200_pairs(self):
        """Test equivariance on 200 sampled (key, symmetry) pairs."""
        _assert_equivariant(pairs=200, seed=6)

    def test_canonicalize_maps_back(self):
        """Test that the returned op maps the canonical key to the input."""
        rng = random.Random(9)
        for key in rng.sample(enumerate_valid_keys(3), 100):
            canon, op = canonicalize(key, 3)
            assert canon <= key
            assert transform_key(op, canon) == key

    def test_wrong_dimension(self):
        """Test that a 2D symmetry cannot act on a 3D pattern."""
        with pytest.raises(PatternError):
            apply_symmetry(build_pattern(0, 3), symmetry_group(2)[1])


class TestPatternTable:
    """Test cases for the lookup table."""

    def test_3d_counts(self, table3):
        """Test 227 canonical patterns for 6210 keys."""
        assert len(table3) == 6210
        assert len(table3.canonical) == 227
        sizes = table3.orbit_sizes()
        assert sum(sizes.values()) == 6210
        assert all(48 % s == 0 for s in sizes.values())

    def test_2d_counts(self, table2):
        """Test 6 canonical patterns for 16 keys."""
        assert len(table2) == 16
        assert len(table2.canonical) == 6

    def test_trivial_key_has_full_orbit_of_one(self, table3):
        """Test that key 0 is its own orbit."""
        canon_id, op = table3.lookup(0)
        assert table3.canonical[canon_id].key == 0
        assert table3.orbit_sizes()[canon_id] == 1

    def test_pattern_matches_direct_construction(self, table3):
        """Test table patterns against build_pattern."""
        rng = random.Random(1)
        for key in rng.sample(sorted(table3.index), 30):
            pattern = table3.pattern(key)
            assert pattern.key == key
            assert pattern.region_signature() == build_pattern(key, 3).region_signature()

    def test_lookup_missing_key(self, table3):
        """Test that an invalid key is reported."""
        with pytest.raises(PatternError):
            table3.lookup(1 << 12)

    def test_2d_traces_depend_only_on_face_nodes(self, table2):
        """Test trace matching across every pair of keys agreeing on a face."""
        face_bits = {0: 1 << 2, 1: 1 << 3, 2: 1 << 0, 3: 1 << 1}
        for face, bit in face_bits.items():
            for first in range(16):
                for second in range(16):
                    if first & bit == second & bit:
                        assert (table2.pattern(first).boundary_traces[face]
                                == table2.pattern(second).boundary_traces[face])


class TestTableFiles:
    """Test cases for table serialization."""

    def test_save_and_load(self, table2):
        """Test that a saved table loads back identically."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "patterns2d.json")
            save_table(table2, path)
            loaded = load_table(path)
            assert table_to_dict(loaded) == table_to_dict(table2)
            assert loaded.pattern(15).region_signature() == table2.pattern(15).region_signature()

    def test_saved_file_is_deterministic(self, table2):
        """Test byte-identical files for the same table."""
        with tempfile.TemporaryDirectory() as tmpdir:
            first, second = os.path.join(tmpdir, "a.json"), os.path.join(tmpdir, "b.json")
            save_table(table2, first)
            save_table(table2, second)
            with open(first, "rb") as f1, open(second, "rb") as f2:
                assert f1.read() == f2.read()

    def test_index_in_key_order(self, table2):
        """Test ascending keys in the serialized index."""
        data = table_to_dict(table2)
        keys = [entry["key"] for entry in data["index"]]
        assert keys == sorted(keys)

    def test_load_missing(self):
        """Test that a missing file raises PatternError."""
        with pytest.raises(PatternError):
            load_table("/nonexistent/patterns.json")

    def test_load_malformed(self):
        """Test that malformed data raises PatternError."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "bad.json")
            with open(path, "w") as f:
                json.dump({"dim": 3, "canonical": [{"id": 0}], "index": []}, f)
            with pytest.raises(PatternError):
                load_table(path)

    def test_load_dangling_reference(self, table2):
        """Test that an index entry pointing past the canonical list is rejected."""
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, "bad.json")
            data = table_to_dict(table2)
            data["index"][0]["canon_id"] = 99
            with open(path, "w") as f:
                json.dump(data, f)
            with pytest.raises(PatternError):
                load_table(path)


class TestOracle:
    """Test cases for the lattice-sampling oracle."""

    def test_trivial_key_exact(self):
        """Test exact octants at a lattice aligned with the cell centre."""
        assert local_voronoi_oracle(0, 3, resolution=24) == {n: Fraction(1, 8) for n in range(8)}

    @pytest.mark.parametrize("key", range(16))
    def test_2d_keys_agree_with_exact_volumes(self, key):
        """Test every 2D key against its exact region volumes."""
        exact = region_volumes(key, 2)
        sampled = local_voronoi_oracle(key, 2, resolution=96)
        for node in set(exact) | set(sampled):
            assert abs(float(exact.get(node, 0)) - float(sampled.get(node, 0))) <= 0.02

    def test_invalid_resolution(self):
        """Test that resolutions off the 24-lattice are rejected."""
        with pytest.raises(PatternError):
            local_voronoi_oracle(0, 3, resolution=10)

    def test_refined_neighbour_nodes_leave_assignment_unchanged(self):
        """Test that nodes of a refined x-neighbour win no sample point of the cell."""
        key = face_config_masks(3)[1]
        assert is_valid_key(key, 3)
        extra = [(100 + i, (x, y, z)) for i, (x, y, z) in enumerate(
            (x, y, z) for x in (72, 96) for y in (0, 24, 48) for z in (0, 24, 48)
        )]
        assert np.array_equal(oracle_assignment(key, 3, 24), oracle_assignment(key, 3, 24, extra))
        assert local_voronoi_oracle(key, 3, 24, extra) == local_voronoi_oracle(key, 3, 24)

    def test_node_inside_cell_changes_assignment(self):
        """Test that an extra node inside the cell takes over sample points."""
        alone = oracle_assignment(0, 3, 24)
        joined = oracle_assignment(0, 3, 24, [(100, (36, 24, 24))])
        assert np.count_nonzero(alone != joined) > 0
        assert 100 in local_voronoi_oracle(0, 3, 24, [(100, (36, 24, 24))])
