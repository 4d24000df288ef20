"""Table verification framework - checks a pattern table against its structural requirements."""

import itertools
import logging
import random
from fractions import Fraction
from typing import Any, Callable, Dict, List, Tuple

import numpy as np
from scipy.spatial import cKDTree

from stagger_mesh.config import Config
from stagger_mesh.local_geometry import HALF, SCALE, corner_count, reference_nodes
from stagger_mesh.pattern_engine import (
    KEY_BITS, PatternTable, apply_symmetry, build_pattern, enumerate_valid_keys, is_valid_key,
    local_voronoi_oracle, oracle_assignment, region_volumes,
)
from stagger_mesh.primal_grid import PrimalGrid, boundary_nodes, random_refinement
from stagger_mesh.symmetry import symmetry_group, transform_key


logger = logging.getLogger(__name__)

# (valid keys, canonical patterns)
EXPECTED_COUNTS = {2: (16, 6), 3: (6210, 227)}

ORACLE_TOLERANCE = 0.02
NEAREST_NODE_GRIDS = 20
NEAREST_NODE_SAMPLES = 4


class VerificationError(Exception):
    """Custom exception for table verification errors."""
    pass


def face_config_masks(dim: int) -> List[int]:
    """Key bits of the midpoints lying on each cell face."""
    nodes = reference_nodes(dim)
    offset = corner_count(dim)
    masks = []
    for face in range(2 * dim):
        axis, side = divmod(face, 2)
        mask = 0
        for b in range(KEY_BITS[dim]):
            if nodes[offset + b][axis] == SCALE * side:
                mask |= 1 << b
        masks.append(mask)
    return masks


def refined_neighbour_nodes(key: int, dim: int) -> List[Tuple[int, Tuple[int, ...]]]:
    """Nodes of once-refined face neighbours, for every face whose hanging nodes are all set in key.

    Positions are reference coordinates outside the cell; ids start past the local node ids.
    """
    masks = face_config_masks(dim)
    positions = set()
    for face, mask in enumerate(masks):
        if key & mask != mask:
            continue
        axis, side = divmod(face, 2)
        across = (SCALE + HALF, 2 * SCALE) if side else (-HALF, -SCALE)
        for point in itertools.product(*[across if a == axis else (0, HALF, SCALE) for a in range(dim)]):
            positions.add(point)
    first = len(reference_nodes(dim))
    return [(first + i, p) for i, p in enumerate(sorted(positions))]


class TableVerifier:
    """Runs the verification suites on a pattern table."""

    def __init__(self, table: PatternTable, samples: int = None, seed: int = 0,
                 oracle_resolution: int = None):
        """Initialize the verifier.

        Args:
            table: Pattern table to verify
            samples: Random cases per sampled suite (default: Config.VERIFY_SAMPLES)
            seed: Seed for all sampling
            oracle_resolution: Lattice resolution of the local oracle (default: Config.ORACLE_RESOLUTION)

        Raises:
            VerificationError: If the table dimension or the sample count is unsupported
        """
        if table.dim not in EXPECTED_COUNTS:
            raise VerificationError(f"No reference counts for {table.dim}D tables")
        if samples is not None and samples < 1:
            raise VerificationError(f"Sample count must be positive, got {samples}")
        self.table = table
        self.dim = table.dim
        self.samples = samples or Config.VERIFY_SAMPLES
        self.seed = seed
        self.oracle_resolution = oracle_resolution or Config.ORACLE_RESOLUTION
        self.keys = sorted(table.index)

    def run(self) -> Dict[str, Any]:
        """Run every suite.

        Returns:
            dict: Verification results with pass/fail counts and per-suite details
        """
        suites = [
            ("counting", "Key and orbit counts match the enumeration", self._check_counts),
            ("partition", "Region volumes of every key sum to one", self._check_partition),
            ("equivariance", "Transformed patterns equal directly built ones", self._check_equivariance),
            ("trace_matching", "Keys agreeing on a face share its boundary traces", self._check_traces),
            ("nearest_node", "Nearest node of a leaf's boundary set is a nearest grid node", self._check_nearest_node),
            ("oracle", "Region volumes agree with lattice sampling", self._check_oracle),
        ]
        results = [self._run_suite(name, description, check) for name, description, check in suites]
        passed = sum(1 for r in results if r["passed"])
        return {
            "dim": self.dim,
            "keys": len(self.table),
            "canonical": len(self.table.canonical),
            "results": results,
            "passed": passed,
            "failed": len(results) - passed,
        }

    def _run_suite(self, name: str, description: str, check: Callable[[], List[Dict[str, Any]]]) -> Dict[str, Any]:
        logger.info("Running verification suite '%s'", name)
        try:
            checks = check()
            return {
                "name": name,
                "description": description,
                "passed": all(c["passed"] for c in checks),
                "checks": checks,
                "error": None,
            }
        except Exception as e:
            logger.error("Suite '%s' raised: %s", name, e)
            return {"name": name, "description": description, "passed": False, "checks": [], "error": str(e)}

    @staticmethod
    def _check(check: str, expected: Any, actual: Any, passed: bool = None) -> Dict[str, Any]:
        return {
            "check": check,
            "expected": expected,
            "actual": actual,
            "passed": expected == actual if passed is None else passed,
        }

    def _check_counts(self) -> List[Dict[str, Any]]:
        n_keys, n_canonical = EXPECTED_COUNTS[self.dim]
        sizes = self.table.orbit_sizes()
        return [
            self._check("brute-force valid keys", n_keys, len(enumerate_valid_keys(self.dim))),
            self._check("table keys", n_keys, len(self.table)),
            self._check("canonical patterns", n_canonical, len(self.table.canonical)),
            self._check("orbit sizes sum", n_keys, sum(sizes.values())),
            self._check(
                "orbit sizes divide group order", True,
                all(len(symmetry_group(self.dim)) % s == 0 for s in sizes.values()),
            ),
        ]

    def _check_partition(self) -> List[Dict[str, Any]]:
        bad = [k for k in self.keys if sum(region_volumes(k, self.dim).values()) != 1]
        trivial = sorted(region_volumes(0, self.dim).values())
        corner = Fraction(1, corner_count(self.dim))
        return [
            self._check("keys with volume sum != 1", 0, len(bad)),
            self._check("key-0 volumes", [str(corner)] * corner_count(self.dim), [str(v) for v in trivial]),
        ]

    def _check_equivariance(self) -> List[Dict[str, Any]]:
        rng = random.Random(self.seed)
        group = symmetry_group(self.dim)
        mismatches = 0
        for _ in range(self.samples):
            key = rng.choice(self.keys)
            op = rng.choice(group)
            direct = build_pattern(transform_key(op, key), self.dim)
            mapped = apply_symmetry(build_pattern(key, self.dim), op)
            if direct.region_signature() != mapped.region_signature():
                mismatches += 1
        table_mismatches = sum(
            1 for key in rng.sample(self.keys, min(self.samples, len(self.keys)))
            if self.table.pattern(key).region_signature() != build_pattern(key, self.dim).region_signature()
        )
        return [
            self._check(f"pattern(g.k) == g.pattern(k) over {self.samples} pairs", 0, mismatches),
            self._check("table patterns equal direct construction", 0, table_mismatches),
        ]

    def _check_traces(self) -> List[Dict[str, Any]]:
        rng = random.Random(self.seed + 1)
        masks = face_config_masks(self.dim)
        mismatches = 0
        pairs = 0
        attempts = 0
        while pairs < self.samples and attempts < 100 * self.samples:
            attempts += 1
            face = rng.randrange(2 * self.dim)
            first, second = rng.choice(self.keys), rng.choice(self.keys)
            second = (second & ~masks[face]) | (first & masks[face])
            if not is_valid_key(second, self.dim):
                continue
            pairs += 1
            traces_a = self.table.pattern(first).boundary_traces[face]
            traces_b = self.table.pattern(second).boundary_traces[face]
            if traces_a != traces_b:
                mismatches += 1
        return [
            self._check("sampled key pairs", self.samples, pairs),
            self._check("face traces differing between matching keys", 0, mismatches),
        ]

    def _check_nearest_node(self) -> List[Dict[str, Any]]:
        rng = random.Random(self.seed + 2)
        violations = 0
        points_checked = 0
        for _ in range(NEAREST_NODE_GRIDS):
            grid = random_refinement(PrimalGrid.uniform(self.dim, 1, max_level=3), rng, rounds=2)
            violations_here, count = _nearest_node_violations(grid, rng.choice(grid.leaves), NEAREST_NODE_SAMPLES)
            violations += violations_here
            points_checked += count

        candidates = [k for k in self.keys if refined_neighbour_nodes(k, self.dim)]
        keys = rng.sample(candidates, min(len(candidates), max(1, self.samples // 20)))
        changed = 0
        for key in keys:
            alone = oracle_assignment(key, self.dim, self.oracle_resolution)
            with_neighbours = oracle_assignment(
                key, self.dim, self.oracle_resolution, refined_neighbour_nodes(key, self.dim),
            )
            changed += int(np.count_nonzero(alone != with_neighbours))
        return [
            self._check("sample points checked", True, points_checked > 0),
            self._check("points whose nearest grid node is closer than the cell's", 0, violations),
            self._check(f"lattice points reassigned by refined neighbours over {len(keys)} keys", 0, changed),
        ]

    def _check_oracle(self) -> List[Dict[str, Any]]:
        rng = random.Random(self.seed + 3)
        canonical = [p.key for p in self.table.canonical]
        keys = rng.sample(canonical, min(len(canonical), max(1, self.samples // 20)))
        worst = 0.0
        for key in keys:
            exact = region_volumes(key, self.dim)
            sampled = local_voronoi_oracle(key, self.dim, self.oracle_resolution)
            for node in set(exact) | set(sampled):
                worst = max(worst, abs(float(exact.get(node, 0)) - float(sampled.get(node, 0))))
        return [
            self._check(
                f"max volume fraction error over {len(keys)} canonical keys", f"<= {ORACLE_TOLERANCE}",
                round(worst, 6), worst <= ORACLE_TOLERANCE,
            ),
        ]

    def generate_report(self, verification_results: Dict[str, Any]) -> str:
        """Generate a markdown report from verification results.

        Args:
            verification_results: Results from run()

        Returns:
            str: Markdown report
        """
        report = []
        total = verification_results["passed"] + verification_results["failed"]
        report.append(f"# Pattern Table Verification Report ({verification_results['dim']}D)\n")
        report.append(f"**Keys**: {verification_results['keys']}  ")
        report.append(f"**Canonical patterns**: {verification_results['canonical']}  ")
        report.append(f"**Suites Passed**: {verification_results['passed']}/{total}\n")

        report.append("## Suite Results\n")
        for result in verification_results["results"]:
            status = "✅ PASS" if result["passed"] else "❌ FAIL"
            report.append(f"### {status} - {result['name']}\n")
            report.append(f"**Description**: {result['description']}\n")
            if result.get("error"):
                report.append(f"**Error**: {result['error']}\n")
            else:
                report.append("**Checks**:")
                for check in result.get("checks", []):
                    mark = "✓" if check["passed"] else "✗"
                    report.append(f"- {mark} {check['check']}: expected `{check['expected']}`, got `{check['actual']}`")
                report.append("")
        return "\n".join(report)


def _nearest_node_violations(grid: PrimalGrid, cell, resolution: int) -> tuple:
    """Compare nearest-node L-infinity distances of sample points in one leaf.

    Returns:
        tuple: (number of points where the grid has a strictly closer node, points checked)
    """
    dim = grid.dim
    s = 1 << (grid.max_level - cell.level)
    factor = 2 * resolution
    offsets = (2 * np.arange(resolution) + 1) * s
    lattice = np.stack(np.meshgrid(*([offsets] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    points = np.asarray(cell.coords, dtype=np.int64) * s * factor + lattice

    local = np.array([key for _, key in boundary_nodes(grid, cell)], dtype=np.int64) * factor
    local_d = np.abs(points[:, None, :] - local[None]).max(axis=2).min(axis=1)
    global_d, _ = cKDTree(grid.node_array.astype(float) * factor).query(points.astype(float), k=1, p=np.inf)
    return int(np.count_nonzero(global_d < local_d - 0.5)), len(points)
