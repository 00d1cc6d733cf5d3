"""
Command line surface

    ksns run <config>
    ksns verify <suite>
    ksns sweep-eps <config> --eps 1e-1,1e-2
    ksns residual <config> <snapshot-dir>
    ksns convergence <config> --levels 3 --case heat
    ksns scan-m <config> --m 2.5,3,4

Exit codes: 0 success, 1 validation/config/storage failure, 2 PDE runtime
failure, 64 usage error. The last line of stdout is always
``RESULT <subcommand> <pass|fail>``.
"""

import argparse
import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence

from ksns import __version__
from ksns.api.config_file import RunConfig, build_initial_state, load_config
from ksns.api.storage import (
    read_snapshot_dir,
    snapshot_name,
    write_diagnostics,
    write_snapshot,
    write_table,
)
from ksns.core.config import get_settings
from ksns.core.dynamics import Hook, run
from ksns.core.errors import KsnsError, UsageError
from ksns.services.diagnostics import DiagnosticsRecorder, check_apriori
from ksns.services.experiments import (
    CompareNorm,
    ConvergenceReport,
    ManufacturedCase,
    ScanRow,
    SweepPlan,
    SweepReport,
    epsilon_sweep,
    m_threshold_scan,
    manufactured_convergence,
)
from ksns.services.verification import SUITES, run_suite
from ksns.services.weak_form import (
    CosineMode,
    CurlMode,
    ScalarTest,
    TemporalWindow,
    VectorTest,
    weak_residual_c,
    weak_residual_n,
    weak_residual_u,
)
from ksns.utils.logging import setup_logging

logger = logging.getLogger(__name__)

USAGE_EXIT = 64


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting"""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _float_list(text: str) -> List[float]:
    try:
        values = [float(item) for item in text.split(",") if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got '{text}'")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ksns", description="Regularized chemotaxis-fluid simulator and verification harness")
    parser.add_argument("--version", action="version", version=f"ksns {__version__}")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ERROR")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="integrate a configuration")
    p.add_argument("config")

    p = sub.add_parser("verify", help="run a verification suite")
    p.add_argument("suite", choices=sorted(SUITES))

    p = sub.add_parser("sweep-eps", help="epsilon continuation study")
    p.add_argument("config")
    p.add_argument("--eps", type=_float_list, required=True)
    p.add_argument("--t-compare", type=float, default=1.0)
    p.add_argument("--norm", choices=[n.value for n in CompareNorm], default="L2")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("residual", help="weak-form residuals of stored snapshots")
    p.add_argument("config")
    p.add_argument("snapshot_dir")

    p = sub.add_parser("convergence", help="manufactured-solution refinement study")
    p.add_argument("config")
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--case", choices=[c.value for c in ManufacturedCase], default="heat")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("scan-m", help="diffusion exponent scan")
    p.add_argument("config")
    p.add_argument("--m", type=_float_list, required=True)
    p.add_argument("--workers", type=int, default=None)
    return parser


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def _out_dir(cfg: RunConfig) -> Path:
    return Path(cfg.output.out_dir)


def cmd_run(args) -> bool:
    cfg = load_config(args.config)
    grid = cfg.make_grid()
    params = cfg.model_params(grid)
    out_dir = _out_dir(cfg)
    recorder = DiagnosticsRecorder(params, cfg.output.diagnostics_every)
    counter = {"index": 0}

    def save(state, _elapsed):
        write_snapshot(state, out_dir / "snapshots" / snapshot_name(counter["index"]))
        counter["index"] += 1

    hooks = recorder.hooks() + [Hook(save, cfg.output.snapshot_every)]
    try:
        run(build_initial_state(cfg, grid), params, cfg.step_control(), cfg.stepping.t_end,
            cfg.solver_settings(), hooks)
    finally:
        write_diagnostics(recorder.records, out_dir / "diagnostics.csv")

    report = check_apriori(recorder.records, params)
    for check in report.checks:
        mark = "pass" if check.passed else "FAIL"
        print(f"{check.name:32s} {check.value:.6e}  limit {check.limit:.6e}  {mark}")
    print(f"snapshots: {counter['index']}  diagnostics rows: {len(recorder.records)}  out: {out_dir}")
    return report.passed


def cmd_verify(args) -> bool:
    results = run_suite(args.suite)
    for name, status, error in results.results:
        print(f"{status:5s} {name}" + (f": {error}" if error else ""))
    return results.ok


def cmd_sweep(args) -> bool:
    cfg = load_config(args.config)
    plan = SweepPlan(eps_list=tuple(args.eps), scenario=cfg, compare_norm=CompareNorm(args.norm),
                     t_compare=args.t_compare)
    report: SweepReport = epsilon_sweep(plan, workers=args.workers)
    path = _out_dir(cfg) / "sweep.csv"
    write_table(path, SweepReport.HEADER, report.rows())
    for row in report.rows():
        print("eps %.3g -> %.3g  d_n %.3e  d_c %.3e  d_u %.3e" % tuple(row[:5]))
    print(f"sweep table: {path}")
    return report.passed


def cmd_residual(args) -> bool:
    """Weak residuals of a stored trajectory; fails when any exceeds RESIDUAL_TOL"""
    cfg = load_config(args.config)
    snapshots = read_snapshot_dir(args.snapshot_dir)
    if len(snapshots) < 2:
        raise UsageError(f"need at least two snapshots in {args.snapshot_dir}")
    grid = snapshots[0].grid
    params = cfg.model_params(grid)
    window = TemporalWindow(t_start=snapshots[0].t, t_end=snapshots[-1].t, include_initial=True)
    # even-even test modes integrate to zero against plumes symmetric about the box centre
    curl_modes = (2,) * grid.dim if grid.periodic else (2,) + (1,) * (grid.dim - 1)
    scalar = ScalarTest(spatial=CosineMode(modes=(2,) * grid.dim), window=window)
    vector = VectorTest(spatial=CurlMode(modes=curl_modes), window=window)
    values = {
        "n": weak_residual_n(snapshots, scalar, params),
        "c": weak_residual_c(snapshots, scalar, params),
        "u": weak_residual_u(snapshots, vector, params, settings=cfg.solver_settings()),
    }
    tolerance = get_settings().RESIDUAL_TOL
    write_table(_out_dir(cfg) / "residuals.csv", ["field", "residual"], [[k, v] for k, v in values.items()])
    for name, value in values.items():
        mark = "pass" if math.isfinite(value) and value <= tolerance else "FAIL"
        print(f"residual_{name} {value:.6e}  limit {tolerance:.6e}  {mark}")
    return all(math.isfinite(v) and v <= tolerance for v in values.values())


def cmd_convergence(args) -> bool:
    cfg = load_config(args.config)
    report: ConvergenceReport = manufactured_convergence(args.case, args.levels, base_cells=cfg.grid.cells[0],
                                                         workers=args.workers)
    write_table(_out_dir(cfg) / f"convergence_{report.case.value}.csv", ConvergenceReport.HEADER, report.rows())
    for row in report.rows():
        print("cells %d  h %.4e  dt %.4e  error %.6e  order %.3f" % tuple(row))
    if report.decay_rate is not None:
        print(f"decay rate {report.decay_rate:.6f} (expected {report.expected_decay_rate:.6f})")
    return report.passed


def cmd_scan(args) -> bool:
    cfg = load_config(args.config)
    rows: List[ScanRow] = m_threshold_scan(args.m, cfg, workers=args.workers)
    write_table(_out_dir(cfg) / "scan_m.csv", ScanRow.HEADER, [r.as_row() for r in rows])
    for r in rows:
        print(f"m {r.m:g}  {r.outcome}  t {r.t_reached:.4g}  max n {r.final_max_n:.4e}")
    return True


COMMANDS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "sweep-eps": cmd_sweep,
    "residual": cmd_residual,
    "convergence": cmd_convergence,
    "scan-m": cmd_scan,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code"""
    parser = build_parser()
    command = "usage"
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage())
        command = args.command
        setup_logging(args.log_level)
        passed = COMMANDS[command](args)
        code = 0 if passed else 1
    except SystemExit as exc:
        # --help and --version
        code = exc.code if isinstance(exc.code, int) else 0
    except UsageError as exc:
        print(f"usage error: {exc}")
        code = USAGE_EXIT
    except KsnsError as exc:
        logger.error(f"❌ {command}: {type(exc).__name__}: {exc}")
        print(f"error: {type(exc).__name__}: {exc}")
        code = exc.exit_code
    print(f"RESULT {command} {'pass' if code == 0 else 'fail'}")
    return code
