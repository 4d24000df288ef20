"""Tests for the table verifier module."""

import random

import numpy as np
import pytest

from stagger_mesh.pattern_engine import PatternTable, oracle_assignment
from stagger_mesh.primal_grid import PrimalGrid, random_refinement
from stagger_mesh.table_verifier import (
    TableVerifier, VerificationError, _nearest_node_violations, face_config_masks, refined_neighbour_nodes,
)


SUITES = ["counting", "partition", "equivariance", "trace_matching", "nearest_node", "oracle"]


class TestTableVerifier:
    """Test cases for TableVerifier."""

    def test_2d_table_passes(self, table2):
        """Test that the complete 2D table passes every suite."""
        results = TableVerifier(table2, samples=50, seed=1).run()
        assert [r["name"] for r in results["results"]] == SUITES
        assert results["failed"] == 0
        assert results["passed"] == 6
        assert (results["keys"], results["canonical"]) == (16, 6)

    def test_3d_table_passes(self, table3):
        """Test a sampled 3D verification."""
        results = TableVerifier(table3, samples=20, seed=2).run()
        failed = [r["name"] for r in results["results"] if not r["passed"]]
        assert failed == []

    @pytest.mark.slow
    def test_3d_table_passes_on_200_samples(self, table3):
        """Test the 3D verification with 200 sampled pairs per suite."""
        results = TableVerifier(table3, samples=200, seed=3).run()
        by_name = {r["name"]: r for r in results["results"]}
        assert all(r["passed"] for r in results["results"])
        assert by_name["trace_matching"]["checks"][0]["actual"] == 200
        assert "over 200 pairs" in by_name["equivariance"]["checks"][0]["check"]

    def test_incomplete_table_fails_counting(self, table2):
        """Test that a table missing one key is caught."""
        index = {k: v for k, v in table2.index.items() if k != 15}
        results = TableVerifier(PatternTable(2, table2.canonical, index), samples=20).run()
        by_name = {r["name"]: r for r in results["results"]}
        assert not by_name["counting"]["passed"]
        assert by_name["partition"]["passed"]
        report = TableVerifier(table2).generate_report(results)
        assert "❌ FAIL - counting" in report
        assert "✅ PASS - partition" in report

    def test_report_layout(self, table2):
        """Test the report header lines."""
        verifier = TableVerifier(table2, samples=10)
        report = verifier.generate_report(verifier.run())
        assert report.startswith("# Pattern Table Verification Report (2D)")
        assert "**Canonical patterns**: 6" in report
        assert "**Suites Passed**: 6/6" in report

    def test_bad_sample_count(self, table2):
        """Test that a nonpositive sample count is rejected."""
        with pytest.raises(VerificationError):
            TableVerifier(table2, samples=0)


class TestHelpers:
    """Test cases for the verification helpers."""

    def test_face_config_masks_2d(self):
        """Test one midpoint bit per 2D face."""
        assert face_config_masks(2) == [1 << 2, 1 << 3, 1 << 0, 1 << 1]

    def test_face_config_masks_3d(self):
        """Test four edge bits and one face bit per 3D face."""
        masks = face_config_masks(3)
        assert all(bin(m).count("1") == 5 for m in masks)
        assert all(m >> (12 + face) & 1 for face, m in enumerate(masks))

    def test_nearest_node_on_graded_grids(self):
        """Test the nearest-node property on random graded grids."""
        rng = random.Random(4)
        for _ in range(5):
            grid = random_refinement(PrimalGrid.uniform(3, 1, max_level=3), rng, rounds=2)
            for cell in grid.leaves[:10]:
                violations, count = _nearest_node_violations(grid, cell, 3)
                assert count == 27
                assert violations == 0

    def test_refined_neighbour_nodes_3d(self):
        """Test the nodes of a refined x-neighbour."""
        key = face_config_masks(3)[1]
        nodes = refined_neighbour_nodes(key, 3)
        assert len(nodes) == 18
        assert all(position[0] in (72, 96) for _, position in nodes)
        assert [node_id for node_id, _ in nodes] == list(range(26, 44))
        assert refined_neighbour_nodes(0, 3) == []

    @pytest.mark.parametrize("key", range(16))
    def test_refined_neighbours_keep_2d_assignment(self, key):
        """Test that refined face neighbours reassign no lattice point of a 2D cell."""
        extra = refined_neighbour_nodes(key, 2)
        assert np.array_equal(oracle_assignment(key, 2, 96), oracle_assignment(key, 2, 96, extra))
