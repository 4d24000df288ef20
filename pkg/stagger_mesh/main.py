"""Main entry point - command-line front end for grids, patterns, dual meshes, advection and cost analysis."""

import argparse
import logging
import sys
from typing import Optional, Sequence

from stagger_mesh.config import Config, ConfigError, load_experiments
from stagger_mesh.cost_model import FluxCountInputs, census_rows, flux_count, format_millions
from stagger_mesh.dual_assembly import GAUSS_TOLERANCE, assemble, gauss_check, mesh_stats, sampling_oracle_check
from stagger_mesh.indicators import INDICATOR_NAMES, make_indicator
from stagger_mesh.pattern_engine import PatternTable, build_table, load_table, save_table
from stagger_mesh.primal_grid import PrimalGrid, refine_by_indicator
from stagger_mesh.report_generator import ReportGenerator
from stagger_mesh.staggered_solver import RotatingVelocity, SchemeConfig, run_advection
from stagger_mesh.table_verifier import TableVerifier
from stagger_mesh.utils import series_path, setup_logging
from stagger_mesh.vtk_export import write_dual_vtk, write_faces_vtk, write_primal_vtk


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand group per concern."""
    parser = argparse.ArgumentParser(prog="stagger_mesh", description="Staggered dual meshes on adaptive Cartesian grids")
    parser.add_argument("--debug", action="store_true", help="log at DEBUG level")
    parser.add_argument("--experiments", help="experiment parameter YAML file")
    groups = parser.add_subparsers(dest="group", required=True)

    grid = groups.add_parser("grid").add_subparsers(dest="command", required=True)
    build = grid.add_parser("build", help="refine a grid along a built-in indicator")
    build.add_argument("--indicator", choices=INDICATOR_NAMES, required=True)
    build.add_argument("--level", type=int, required=True)
    build.add_argument("--dim", type=int, choices=(2, 3), default=3)
    build.add_argument("--out", required=True)
    build.add_argument("--vtk", help="also write the leaves as VTK")

    patterns = groups.add_parser("patterns").add_subparsers(dest="command", required=True)
    generate = patterns.add_parser("generate", help="build the pattern table")
    generate.add_argument("--dim", type=int, choices=(2, 3), default=3)
    generate.add_argument("--out", required=True)
    generate.add_argument("--catalog", help="markdown gallery of canonical patterns")
    generate.add_argument("--seed", type=int, default=0)
    verify_table = patterns.add_parser("verify", help="run the table verification suites")
    verify_table.add_argument("--in", dest="table", required=True)
    verify_table.add_argument("--seed", type=int, default=0)
    verify_table.add_argument("--samples", type=int, default=None)
    verify_table.add_argument("--report", help="markdown verification report")

    dual = groups.add_parser("dual").add_subparsers(dest="command", required=True)
    dual_assemble = dual.add_parser("assemble", help="assemble the dual mesh")
    dual_assemble.add_argument("--grid", required=True)
    dual_assemble.add_argument("--patterns", required=True)
    dual_assemble.add_argument("--out", required=True)
    dual_assemble.add_argument("--stats", help="mesh statistics CSV")
    dual_assemble.add_argument("--faces", help="merged dual faces as VTK POLYDATA")
    dual_assemble.add_argument("--leaves", help="primal leaves as VTK with their canonical pattern ids")

    verify = groups.add_parser("verify").add_subparsers(dest="command", required=True)
    gauss = verify.add_parser("gauss", help="divergence identity per dual cell")
    gauss.add_argument("--grid", required=True)
    gauss.add_argument("--patterns", required=True)
    oracle = verify.add_parser("oracle", help="sample-lattice dual volumes")
    oracle.add_argument("--grid", required=True)
    oracle.add_argument("--patterns", required=True)
    oracle.add_argument("--resolution", type=int, default=32)

    advect = groups.add_parser("advect").add_subparsers(dest="command", required=True)
    cone = advect.add_parser("cone", help="rotating cone with the staggered scheme")
    cone.add_argument("--level", type=int, required=True)
    cone.add_argument("--dim", type=int, choices=(2, 3), default=3)
    cone.add_argument("--cfl", type=float, default=None)
    cone.add_argument("--tend", type=float, default=None)
    cone.add_argument("--grid", dest="grid_kind", choices=("uniform", "adaptive"), default="uniform")
    cone.add_argument("--boundary", choices=("zero_inflow", "extrapolate"), default="zero_inflow")
    cone.add_argument("--patterns", help="pattern table (built when omitted)")
    cone.add_argument("--out", required=True, help="VTK series pattern, e.g. series_%%04d.vtk")
    cone.add_argument("--report", help="per-step CSV report")
    cone.add_argument("--every", type=int, default=1, help="write every n-th primal step")

    analyze = groups.add_parser("analyze").add_subparsers(dest="command", required=True)
    fluxes = analyze.add_parser("fluxcount", help="flux evaluations of two timesteps")
    fluxes.add_argument("--stats", help="mesh statistics CSV from dual assemble, instead of the counts")
    fluxes.add_argument("--primal-cells", type=int)
    fluxes.add_argument("--primal-faces", type=int)
    fluxes.add_argument("--primal-nodes", type=int)
    fluxes.add_argument("--dual-nodes", type=int)
    fluxes.add_argument("--out", required=True)
    census = analyze.add_parser("census", help="staggered vs non-staggered counts per level")
    census.add_argument("--indicator", choices=INDICATOR_NAMES, default="paraboloid")
    census.add_argument("--levels", type=int, nargs="+", required=True)
    census.add_argument("--dim", type=int, choices=(2, 3), default=3)
    census.add_argument("--patterns", help="pattern table (built when omitted)")
    census.add_argument("--out", required=True)
    return parser


class MeshOrchestrator:
    """Runs one parsed CLI command."""

    def __init__(self, args: argparse.Namespace):
        """
        Initialize the orchestrator.

        Args:
            args: Parsed command-line arguments
        """
        self.args = args
        self.config = Config
        self.reports = ReportGenerator()
        self.handlers = {
            ("grid", "build"): self._grid_build,
            ("patterns", "generate"): self._patterns_generate,
            ("patterns", "verify"): self._patterns_verify,
            ("dual", "assemble"): self._dual_assemble,
            ("verify", "gauss"): self._verify_gauss,
            ("verify", "oracle"): self._verify_oracle,
            ("advect", "cone"): self._advect_cone,
            ("analyze", "fluxcount"): self._analyze_fluxcount,
            ("analyze", "census"): self._analyze_census,
        }

    def run(self) -> int:
        """
        Run the command.

        Returns:
            int: Exit code (0 for success, 1 for failure)
        """
        try:
            self.config.validate()
            self.experiments = load_experiments(self.args.experiments)
            return self.handlers[(self.args.group, self.args.command)]()
        except Exception as e:
            print(f"Error: {e}", file=sys.stderr)
            if self.config.DEBUG_MODE or self.args.debug:
                import traceback
                traceback.print_exc()
            return EXIT_FAILED

    def _table(self, path: Optional[str], dim: int) -> PatternTable:
        if path:
            table = load_table(path)
            if table.dim != dim:
                raise ConfigError(f"Pattern table {path} is {table.dim}D, expected {dim}D")
            return table
        logger.info("No pattern table given; building the %dD table", dim)
        return build_table(dim)

    def _grid_build(self) -> int:
        args = self.args
        indicator = make_indicator(args.indicator, args.dim, self.experiments)
        if indicator is None:
            grid = PrimalGrid.uniform(args.dim, args.level)
        else:
            grid = refine_by_indicator(PrimalGrid.uniform(args.dim, 0, max_level=args.level), indicator, args.level)
        grid.validate()
        grid.save(args.out)
        if args.vtk:
            write_primal_vtk(args.vtk, grid)
        print(f"{grid.num_leaves} leaves, {grid.num_nodes} nodes")
        return EXIT_OK

    def _patterns_generate(self) -> int:
        args = self.args
        table = build_table(args.dim, seed=args.seed)
        save_table(table, args.out)
        if args.catalog:
            self.reports.generate_pattern_catalog(args.catalog, table)
        print(f"{len(table.canonical)} canonical / {len(table)} keys")
        return EXIT_OK

    def _patterns_verify(self) -> int:
        args = self.args
        table = load_table(args.table)
        verifier = TableVerifier(table, samples=args.samples, seed=args.seed)
        results = verifier.run()
        if args.report:
            self.reports.write_verification_report(args.report, verifier.generate_report(results))
        for result in results["results"]:
            if not result["passed"]:
                logger.error("Suite '%s' failed", result["name"])
        print(f"{results['canonical']} canonical / {results['keys']} keys")
        return EXIT_OK if results["failed"] == 0 else EXIT_FAILED

    def _load_mesh(self):
        grid = PrimalGrid.load(self.args.grid)
        return grid, assemble(grid, self._table(self.args.patterns, grid.dim))

    def _dual_assemble(self) -> int:
        args = self.args
        grid, mesh = self._load_mesh()
        report = gauss_check(mesh)
        write_dual_vtk(args.out, mesh, {"residual": report.residuals})
        if args.faces:
            write_faces_vtk(args.faces, mesh)
        if args.leaves:
            write_primal_vtk(args.leaves, grid, {"pattern": mesh.leaf_canon})
        if args.stats:
            self.reports.write_stats(args.stats, mesh_stats(grid, mesh))
        print(f"{mesh.num_cells} dual cells")
        return EXIT_OK

    def _verify_gauss(self) -> int:
        _, mesh = self._load_mesh()
        report = gauss_check(mesh)
        print(f"max residual {report.max_residual:.3e}")
        print(f"max closure {report.max_closure:.3e}")
        print(f"boundary flux {report.boundary_total:.15f}")
        return EXIT_OK if report.passed(GAUSS_TOLERANCE) else EXIT_FAILED

    def _verify_oracle(self) -> int:
        args = self.args
        grid, mesh = self._load_mesh()
        error = sampling_oracle_check(grid, mesh, args.resolution)
        bound = 2.0 / args.resolution
        print(f"max volume error {error:.3e} (bound {bound:.3e})")
        return EXIT_OK if error <= bound else EXIT_FAILED

    def _advect_cone(self) -> int:
        args = self.args
        cone = self.experiments["cone"]
        scheme = SchemeConfig(
            cfl=self.config.CFL_SAFETY if args.cfl is None else args.cfl,
            end_time=cone["end_time"] if args.tend is None else args.tend,
            boundary=args.boundary,
        )
        if args.grid_kind == "uniform":
            grid = PrimalGrid.uniform(args.dim, args.level)
        else:
            base = PrimalGrid.uniform(args.dim, max(args.level - 2, 0), max_level=args.level)
            grid = refine_by_indicator(base, make_indicator("cone", args.dim, self.experiments), args.level)
        table = self._table(args.patterns, args.dim)

        def snapshot(step, t, state):
            if state.tag == "primal" and (step // 2) % args.every == 0:
                write_primal_vtk(series_path(args.out, step), grid, {"value": state.values})

        result = run_advection(grid, table, scheme, cone, RotatingVelocity.from_experiments(cone, args.dim), snapshot)
        if args.report:
            self.reports.write_advection(args.report, result)
        print(f"L1 error {result.l1_error:.6e}, Linf error {result.linf_error:.6e}")
        print(f"mass drift {result.mass_drift:.3e}, envelope [{result.envelope[0]:.6f}, {result.envelope[1]:.6f}]")
        return EXIT_OK

    def _analyze_fluxcount(self) -> int:
        args = self.args
        if args.stats:
            stats = self.reports.read_stats(args.stats)
            inputs = FluxCountInputs(stats["leaves"], stats["primal_faces"], stats["primal_nodes"], stats["dual_nodes"])
        else:
            inputs = FluxCountInputs(args.primal_cells, args.primal_faces, args.primal_nodes, args.dual_nodes)
        report = flux_count(inputs)
        self.reports.write_flux_count(args.out, report)
        for name, count in report.counts.items():
            print(f"{name}: {format_millions(count.first_step)} / {format_millions(count.second_step)} "
                  f"/ {format_millions(count.total)}")
        return EXIT_OK

    def _analyze_census(self) -> int:
        args = self.args
        table = self._table(args.patterns, args.dim)
        indicator = make_indicator(args.indicator, args.dim, self.experiments)
        rows = census_rows(args.levels, table, indicator, args.dim)
        self.reports.write_census(args.out, rows)
        for row in rows:
            print(f"level {row.level}: {row.primal_cells} cells, {row.dual_cells} dual cells, "
                  f"fluxes {row.fluxes_non_staggered} / {row.fluxes_staggered}")
        return EXIT_OK


def cli_dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments and run one command.

    Returns:
        int: 0 on success, 1 on failure, 2 on usage errors
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        counts = ("primal_cells", "primal_faces", "primal_nodes", "dual_nodes")
        if (args.group, args.command) == ("analyze", "fluxcount") and not args.stats:
            missing = [name for name in counts if getattr(args, name) is None]
            if missing:
                parser.error(f"fluxcount needs --stats or all counts (missing: {', '.join(missing)})")
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE
    setup_logging(Config.DEBUG_MODE or args.debug)
    return MeshOrchestrator(args).run()


def main():
    """Main entry point for the stagger_mesh CLI."""
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
