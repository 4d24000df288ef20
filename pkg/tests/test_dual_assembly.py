"""Tests for the dual assembly module."""

from fractions import Fraction

import numpy as np
import pytest

from stagger_mesh.config import DEFAULT_EXPERIMENTS
from stagger_mesh.dual_assembly import (
    AssemblyError, FluxPieces, assemble, dual_node_count, gauss_check, mesh_stats, merged_faces,
    sampling_oracle_check, vertex_clearance,
)
from stagger_mesh.indicators import make_indicator
from stagger_mesh.pattern_engine import PatternTable
from stagger_mesh.primal_grid import CellIndex, PrimalGrid, refine, refine_by_indicator


class TestAssemble:
    """Test cases for assemble."""

    def test_single_cell(self, table3):
        """Test eight corner cells of volume 1/8 on the root grid."""
        mesh = assemble(PrimalGrid.uniform(3, 0), table3)
        assert mesh.num_cells == 8
        assert all(mesh.exact_volume(i) == Fraction(1, 8) for i in range(8))

    def test_uniform_level_one(self, table3):
        """Test 27 cells with the centre cell [1/4, 3/4]^3."""
        mesh = assemble(PrimalGrid.uniform(3, 1), table3)
        assert mesh.num_cells == 27
        assert mesh.exact_volume(mesh.node_index((1, 1, 1))) == Fraction(1, 8)
        assert mesh.exact_volume(mesh.node_index((0, 0, 0))) == Fraction(1, 64)
        assert mesh.exact_volume(mesh.node_index((1, 0, 0))) == Fraction(1, 32)

    def test_volumes_sum_to_one(self, table3, graded_grid_3d):
        """Test the volume partition on a graded grid."""
        mesh = assemble(graded_grid_3d, table3)
        assert mesh.num_cells == graded_grid_3d.num_nodes
        assert sum(mesh.exact_volume(i) for i in range(mesh.num_cells)) == 1
        assert (mesh.volume_int > 0).all()

    def test_2d(self, table2, graded_grid_2d):
        """Test the 2D path."""
        mesh = assemble(graded_grid_2d, table2)
        assert mesh.num_cells == graded_grid_2d.num_nodes
        assert mesh.volumes.sum() == pytest.approx(1.0)

    def test_dimension_mismatch(self, table2):
        """Test that a 2D table cannot assemble a 3D grid."""
        with pytest.raises(AssemblyError):
            assemble(PrimalGrid.uniform(3, 1), table2)

    def test_key_missing_from_table(self, table3):
        """Test that keys outside the table are reported."""
        partial = PatternTable(3, table3.canonical, {0: table3.index[0]})
        grid = refine(PrimalGrid.uniform(3, 1, max_level=2), [CellIndex(1, (0, 0, 0))])
        with pytest.raises(AssemblyError):
            assemble(grid, partial)

    def test_unknown_node(self, table3):
        """Test node lookup of a non-node."""
        mesh = assemble(PrimalGrid.uniform(3, 0, max_level=1), table3)
        with pytest.raises(AssemblyError):
            mesh.node_index((1, 1, 1))


class TestGaussCheck:
    """Test cases for the divergence identity."""

    def test_uniform(self, table3):
        """Test residuals on a uniform grid."""
        report = gauss_check(assemble(PrimalGrid.uniform(3, 2), table3))
        assert report.passed()
        assert report.boundary_total == pytest.approx(1.0, abs=1e-12)

    def test_graded_3d(self, table3, graded_grid_3d):
        """Test residuals on a randomly refined grid."""
        report = gauss_check(assemble(graded_grid_3d, table3))
        assert report.max_residual <= 1e-12
        assert report.max_closure <= 1e-12
        assert report.boundary_total == pytest.approx(1.0, abs=1e-12)

    def test_paraboloid_grid(self, table3):
        """Test residuals on an indicator-refined grid."""
        indicator = make_indicator("paraboloid", 3, DEFAULT_EXPERIMENTS)
        grid = refine_by_indicator(PrimalGrid.uniform(3, 0, max_level=4), indicator, 4)
        mesh = assemble(grid, table3)
        assert gauss_check(mesh).passed()
        assert mesh.volumes.sum() == pytest.approx(1.0)

    def test_graded_2d(self, table2, graded_grid_2d):
        """Test residuals in 2D."""
        assert gauss_check(assemble(graded_grid_2d, table2)).passed()

    def test_corrupted_normals_fail(self, table3):
        """Test that flipped normals are detected."""
        mesh = assemble(PrimalGrid.uniform(3, 1), table3)
        terms = mesh.surface_terms
        corrupted = FluxPieces(
            terms.leaf, terms.owner, terms.neighbor, terms.on_boundary, -terms.normal, terms.area,
            terms.point_piece, terms.points, terms.weights,
        )
        report = gauss_check(mesh, corrupted)
        assert report.max_residual > 1e-12
        assert not report.passed()


class TestMergedFaces:
    """Test cases for merged dual faces and dual cells."""

    def test_centre_cell_is_a_cube(self, table3):
        """Test six square faces around the centre node."""
        mesh = assemble(PrimalGrid.uniform(3, 1), table3)
        cell = mesh.cell((1, 1, 1))
        assert len(cell.faces) == 6
        assert cell.boundary_patches == []
        assert all(face.area == pytest.approx(0.25) for face in cell.faces)
        assert np.allclose(cell.closure(), 0.0)
        assert len(cell.contributing_leaves) == 8
        for face in cell.faces:
            centroid = face.vertices.mean(axis=0)
            assert np.dot(face.normal, centroid - 0.5) > 0

    def test_face_and_patch_counts(self, table3):
        """Test 54 inner faces and 54 boundary patches on the level-1 grid."""
        faces = merged_faces(assemble(PrimalGrid.uniform(3, 1), table3))
        inner = [f for f in faces if f.neighbor is not None]
        assert len(inner) == 54
        assert len(faces) - len(inner) == 54

    def test_vertices_interior_or_on_boundary(self, table3):
        """Test that face vertices are cell centres or lie on the domain boundary."""
        mesh = assemble(PrimalGrid.uniform(3, 1), table3)
        for face in mesh.merged:
            for v in face.vertices:
                on_boundary = np.any((v == 0.0) | (v == 1.0))
                assert on_boundary or set(v.tolist()) <= {0.25, 0.75}

    def test_closure_on_graded_grid(self, table3, graded_grid_3d):
        """Test closed surfaces of every dual cell."""
        mesh = assemble(graded_grid_3d, table3)
        for cell in mesh.cells.values():
            assert np.linalg.norm(cell.closure()) <= 1e-12

    def test_dual_node_counts(self, table3, table2):
        """Test the distinct vertices of the merged faces."""
        assert dual_node_count(assemble(PrimalGrid.uniform(3, 1), table3)) == 64
        assert dual_node_count(assemble(PrimalGrid.uniform(3, 2), table3)) == 216
        assert dual_node_count(assemble(PrimalGrid.uniform(2, 1), table2)) == 16

    def test_2d_cell(self, table2):
        """Test the four segments around the 2D centre node."""
        mesh = assemble(PrimalGrid.uniform(2, 1), table2)
        cell = mesh.cell((1, 1))
        assert len(cell.faces) == 4
        assert sum(face.area for face in cell.faces) == pytest.approx(2.0)
        assert np.allclose(cell.closure(), 0.0)


class TestClearanceAndOracle:
    """Test cases for vertex clearance and the sampling oracle."""

    def test_uniform_clearance(self, table3):
        """Test a quarter of the cell width on a uniform grid."""
        assert vertex_clearance(assemble(PrimalGrid.uniform(3, 2), table3)) == pytest.approx(0.0625)

    def test_oracle_exact_on_uniform(self, table3):
        """Test that an aligned lattice reproduces uniform volumes exactly."""
        grid = PrimalGrid.uniform(3, 1)
        assert sampling_oracle_check(grid, assemble(grid, table3), 2) <= 1e-12

    def test_oracle_graded_3d(self, table3, graded_grid_3d):
        """Test the volume agreement on a graded grid."""
        error = sampling_oracle_check(graded_grid_3d, assemble(graded_grid_3d, table3), 4)
        assert error <= 2.0 / 4

    def test_oracle_graded_2d(self, table2, graded_grid_2d):
        """Test the volume agreement in 2D."""
        error = sampling_oracle_check(graded_grid_2d, assemble(graded_grid_2d, table2), 8)
        assert error <= 2.0 / 8

    def test_oracle_resolution(self, table3):
        """Test that a nonpositive resolution is rejected."""
        grid = PrimalGrid.uniform(3, 0)
        with pytest.raises(AssemblyError):
            sampling_oracle_check(grid, assemble(grid, table3), 0)

    @pytest.mark.slow
    def test_oracle_resolution_32_3d(self, table3):
        """Test the volume agreement at resolution 32 on a graded grid of at most 500 leaves."""
        grid = refine(PrimalGrid.uniform(3, 2, max_level=3), [CellIndex(2, (0, 0, 0)), CellIndex(2, (1, 2, 1))])
        assert grid.finest_level == 3 and grid.num_leaves <= 500
        error = sampling_oracle_check(grid, assemble(grid, table3), 32)
        assert error <= 2.0 / 32


class TestMeshStats:
    """Test cases for mesh_stats."""

    def test_uniform_stats(self, table3):
        """Test the statistics of a uniform level-2 grid."""
        grid = PrimalGrid.uniform(3, 2)
        stats = mesh_stats(grid, assemble(grid, table3))
        assert stats == {
            "leaves": 64,
            "primal_faces": 240,
            "primal_nodes": 125,
            "dual_cells": 125,
            "dual_nodes": 216,
            "distinct_patterns": 1,
            "trivial_fraction": 1.0,
        }
