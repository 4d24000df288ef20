"""Report generator - CSV tables, the pattern catalog and verification reports."""

import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Optional, Sequence

from stagger_mesh.cost_model import CENSUS_HEADER, FLUX_HEADER, CensusRow, FluxCountReport
from stagger_mesh.pattern_engine import KEY_BITS, PatternTable
from stagger_mesh.staggered_solver import REPORT_HEADER, AdvectionResult
from stagger_mesh.utils import FileError, ParseError, read_csv, write_csv, write_file


logger = logging.getLogger(__name__)

STATS_HEADER = [
    "leaves", "primal_faces", "primal_nodes", "dual_cells", "dual_nodes", "distinct_patterns", "trivial_fraction",
]


class ReportGeneratorError(Exception):
    """Custom exception for report generator errors."""
    pass


class ReportGenerator:
    """Writes CSV and markdown reports under a results directory."""

    def __init__(self, results_dir: Optional[str] = None):
        """Initialize the report generator.

        Args:
            results_dir: Directory for relative report paths (default: paths are used as given)
        """
        self.results_dir = results_dir

    def _path(self, filepath: str) -> str:
        if self.results_dir and not os.path.isabs(filepath):
            return os.path.join(self.results_dir, filepath)
        return filepath

    def _csv(self, filepath: str, header: Sequence[str], rows: List[List[Any]]) -> str:
        target = self._path(filepath)
        try:
            write_csv(target, header, rows)
        except FileError as e:
            raise ReportGeneratorError(f"Failed to write report: {e}")
        logger.info("Wrote %s", target)
        return target

    def write_stats(self, filepath: str, stats: Dict[str, Any]) -> str:
        """Write one row of mesh statistics."""
        return self._csv(filepath, STATS_HEADER, [[stats[name] for name in STATS_HEADER]])

    def read_stats(self, filepath: str) -> Dict[str, int]:
        """
        Read the mesh statistics written by write_stats.

        Args:
            filepath: Statistics CSV path

        Returns:
            dict: Integer count columns of the first row, keyed by header

        Raises:
            ReportGeneratorError: If the file is missing, empty or lacks a column
        """
        target = self._path(filepath)
        try:
            rows = read_csv(target)
        except (FileNotFoundError, ParseError) as e:
            raise ReportGeneratorError(f"Failed to read statistics: {e}")
        if not rows:
            raise ReportGeneratorError(f"Statistics file '{target}' has no data row")
        try:
            return {name: int(rows[0][name]) for name in STATS_HEADER if name != "trivial_fraction"}
        except (KeyError, TypeError, ValueError) as e:
            raise ReportGeneratorError(f"Malformed statistics file '{target}': {e}")

    def write_census(self, filepath: str, rows: Sequence[CensusRow]) -> str:
        return self._csv(filepath, CENSUS_HEADER, [row.to_list() for row in rows])

    def write_flux_count(self, filepath: str, report: FluxCountReport) -> str:
        return self._csv(filepath, FLUX_HEADER, report.rows())

    def write_advection(self, filepath: str, result: AdvectionResult) -> str:
        """Write the per-step advection rows; the profile note goes to the log."""
        logger.info("Advection report: %s", result.note)
        return self._csv(filepath, REPORT_HEADER, result.rows)

    def generate_pattern_catalog(self, filepath: str, table: PatternTable) -> str:
        """
        Write a markdown gallery of the canonical patterns.

        Args:
            filepath: Output path
            table: Pattern table

        Returns:
            str: Path to the written catalog

        Raises:
            ReportGeneratorError: If the catalog cannot be written
        """
        sizes = table.orbit_sizes()
        bits = KEY_BITS[table.dim]
        lines = [
            f"# Canonical Local Patterns ({table.dim}D)\n",
            f"**Generated**: {datetime.now().isoformat()}\n",
            f"**Keys**: {len(table)}  ",
            f"**Canonical patterns**: {len(table.canonical)}\n",
            "| id | key | bits | orbit | nodes | faces | region volumes |",
            "|----|-----|------|-------|-------|-------|----------------|",
        ]
        for canon_id, pattern in enumerate(table.canonical):
            volumes = ", ".join(f"{node}: {volume}" for node, volume in sorted(pattern.volumes().items()))
            lines.append(
                f"| {canon_id} | {pattern.key} | `{pattern.key:0{bits}b}` | {sizes.get(canon_id, 0)} "
                f"| {len(pattern.regions)} | {len(pattern.internal_faces)} | {volumes} |"
            )
        target = self._path(filepath)
        try:
            write_file(target, "\n".join(lines) + "\n")
        except FileError as e:
            raise ReportGeneratorError(f"Failed to write pattern catalog: {e}")
        return target

    def write_verification_report(self, filepath: str, markdown: str) -> str:
        target = self._path(filepath)
        try:
            write_file(target, markdown)
        except FileError as e:
            raise ReportGeneratorError(f"Failed to write verification report: {e}")
        return target
