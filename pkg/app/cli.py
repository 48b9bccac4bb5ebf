# app/cli.py
import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from prometheus_client import start_http_server

from app import __version__
from app.api import codec
from app.config import Settings
from app.errors import (
    CertificateError, CvhiError, GridBudgetError, InputError, NonConvergenceError, NumericalError,
    PreconditionError,
)
from app.services.gap import GapOptions, gap_report
from app.services.hypotheses import HypothesisReport, audit
from app.services.inner_solver import InnerParams
from app.services.instances import random_instance
from app.services.oracle import Region, enumerate_solutions, set_probes
from app.services.outer_solver import OuterParams, SolveTrace, solve_coupled
from app.services.problem import CoupledProblem
from app.utils.logging import setup_logging

logger = logging.getLogger(__name__)

PROG = "cvhi"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGENCE = 2
EXIT_VERIFY = 3

BENCH_COLUMNS = ["instance", "status", "outer_iters", "inner_iters_total", "final_gap1", "final_gap2", "wall_time"]
DEFAULT_GRID = 1e-2


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 1), not argparse's exit 2."""

    def error(self, message):
        raise InputError(f"{self.prog}: {message}")


# ——————————————————————————————————————————————
# helpers
# ——————————————————————————————————————————————

def _pick(flag, file_default, fallback):
    if flag is not None:
        return flag
    if file_default is not None:
        return file_default
    return fallback


def _read_problem(path: str) -> Tuple[CoupledProblem, bytes]:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read problem file: {e.strerror}", path=str(p)) from e
    return codec.parse_problem(raw, name=p.stem), raw


def _emit(text: str, output: Optional[str]) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
        logger.info("wrote %s", output)
    else:
        sys.stdout.write(text)


def _to_json(doc) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(f"not JSON serializable: {type(o).__name__}")
    return json.dumps(doc, indent=2, default=default) + "\n"


def _gap_options(args, prob: CoupledProblem, settings: Settings) -> GapOptions:
    tol = _pick(getattr(args, "tol", None), prob.solver_defaults.get("tol"), settings.gap_tol)
    return GapOptions(
        gap_tol=tol,
        multistarts=settings.multistarts,
        seed=args.seed,
        activity_tol=settings.activity_tol,
    )


def _outer_params(args, prob: CoupledProblem, settings: Settings, report: Optional[HypothesisReport]) -> OuterParams:
    sd = prob.solver_defaults
    gap = _gap_options(args, prob, settings)
    inner = InnerParams(
        lam=_pick(args.lam, sd.get("lam"), 1.0),
        gap_tol=min(gap.gap_tol, InnerParams().gap_tol),
        gap=gap,
    )
    return OuterParams(
        damping=_pick(args.damping, sd.get("damping"), 0.5),
        max_outer=_pick(args.max_outer, sd.get("max_outer"), 500),
        joint_tol=gap.gap_tol,
        inner=inner,
        seed=args.seed,
        invariance_radius=report.invariance_radius if report is not None else None,
    )


def _best_pair(prob: CoupledProblem, err: NonConvergenceError) -> Tuple[np.ndarray, np.ndarray, Optional[SolveTrace], str]:
    trace = err.trace
    if trace is None:
        u, w = prob.initial_point()
        return u, w, None, "inner_failure"
    status = "nonconvergent" if trace.status == "nonconvergent" else "inner_failure"
    best = trace.best_record()
    if best is not None:
        return np.array(best.u), np.array(best.w), trace, status
    return np.asarray(trace.u), np.asarray(trace.w), trace, status


def _solve(prob: CoupledProblem, params: OuterParams, executor) -> Tuple[np.ndarray, np.ndarray, Optional[SolveTrace], str, Optional[str]]:
    try:
        u, w, trace = solve_coupled(prob, params=params, executor=executor)
        return u, w, trace, "certified", None
    except NonConvergenceError as e:
        u, w, trace, status = _best_pair(prob, e)
        return u, w, trace, status, str(e)


# ——————————————————————————————————————————————
# subcommands
# ——————————————————————————————————————————————

def cmd_solve(args, settings: Settings, executor) -> int:
    prob, raw = _read_problem(args.problem)
    report = audit(prob, samples=args.samples, seed=args.seed, activity_tol=settings.activity_tol, executor=executor)
    params = _outer_params(args, prob, settings, report)
    u, w, trace, status, failure = _solve(prob, params, executor)
    gaps = gap_report(prob, u, w, params.inner.gap, minty=True)
    result = codec.build_result(prob, u, w, gaps, codec.input_digest(raw), status, trace, report)
    _emit(codec.dump_result(result), args.output)
    if failure is not None:
        print(f"{PROG}: {failure}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    if args.output:
        print(f"certified {prob.name}: u={result.u} w={result.w} gap1={gaps.cert1:.3g} gap2={gaps.cert2:.3g}")
    return EXIT_OK


def cmd_verify(args, settings: Settings, executor) -> int:
    prob, raw = _read_problem(args.problem)
    result = codec.load_result(args.result)
    opts = _gap_options(args, prob, settings)
    try:
        verification = codec.verify_result(prob, result, opts, digest=codec.input_digest(raw))
    except PreconditionError as e:
        raise CertificateError(f"certificate failed: {e}") from e
    codec.require_certified(verification)
    r = verification.report
    print(f"certificate ok: gap1 {r.cert1:.6g}, gap2 {r.cert2:.6g} (tol {r.tol_cert:.3g})")
    return EXIT_OK


def cmd_oracle(args, settings: Settings, executor) -> int:
    prob, _ = _read_problem(args.problem)
    report = audit(prob, samples=args.samples, seed=args.seed, activity_tol=settings.activity_tol, executor=executor)
    region = Region.cube(args.radius, prob.layout.nV, prob.layout.nE) if args.radius else None
    step = _pick(args.grid, prob.solver_defaults.get("grid"), DEFAULT_GRID)
    result = enumerate_solutions(
        prob, region=region, grid_step=step, accept_tol=args.accept_tol,
        report=report, opts=_gap_options(args, prob, settings), executor=executor,
    )
    probes = set_probes(result, report)
    doc = {
        "problem": prob.name,
        "grid_step": result.grid_step,
        "region": {
            "u_lo": result.region.u_lo, "u_hi": result.region.u_hi,
            "w_lo": result.region.w_lo, "w_hi": result.region.w_hi,
        },
        "accept_tol": result.accept_tol,
        "nodes_screened": result.nodes_screened,
        "survivors": result.survivors,
        "accepted": [{"u": p.u, "w": p.w, "gap1": p.gap1, "gap2": p.gap2} for p in result.accepted],
        "min_joint_gap": result.min_joint_gap,
        "nonempty": result.nonempty,
        "enclosing_radius": result.enclosing_radius,
        "near_misses": result.near_misses,
        "probes": {
            "nonempty": probes.nonempty, "contained": probes.contained, "closed": probes.closed,
            "skipped": probes.skipped, "suite_failure": probes.suite_failure, "passed": probes.passed,
        },
    }
    _emit(_to_json(doc), args.output)
    if not probes.passed:
        print(f"{PROG}: solution-set probe failed for {prob.name}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_check(args, settings: Settings, executor) -> int:
    prob, _ = _read_problem(args.problem)
    report = audit(prob, samples=args.samples, seed=args.seed, activity_tol=settings.activity_tol, executor=executor)
    doc = {"problem": prob.name, "passed": report.passed, "falsified": report.falsified, **report.to_dict()}
    _emit(_to_json(doc), args.output)
    if report.falsified:
        failed = [k for k, v in report.statuses.items() if v == "fail"]
        print(f"{PROG}: hypotheses falsified for {prob.name}: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_gen(args, settings: Settings, executor) -> int:
    if args.count < 1:
        raise InputError(f"--count must be positive, got {args.count}")
    if args.count > 1 and not args.output:
        raise InputError("--output directory is required when --count > 1")
    out_dir = Path(args.output) if args.output and args.count > 1 else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    for seed in range(args.seed, args.seed + args.count):
        prob = random_instance(dims=tuple(args.dims), coupling=args.coupling, pieces=args.pieces, seed=seed)
        text = codec.serialize_problem(prob)
        if out_dir is not None:
            path = out_dir / f"{prob.name}.json"
            path.write_text(text, encoding="utf-8")
            print(path)
        else:
            _emit(text, args.output)
    return EXIT_OK


def _bench_sources(paths: Sequence[str]) -> List[Path]:
    files: List[Path] = []
    for p in map(Path, paths):
        if p.is_dir():
            files.extend(sorted(p.glob("*.json")))
        elif p.is_file():
            files.append(p)
        else:
            raise InputError("no such file or directory", path=str(p))
    return files


def _bench_row(name: str, prob: CoupledProblem, args, settings: Settings, executor) -> dict:
    params = _outer_params(args, prob, settings, None)
    t0 = time.perf_counter()
    _, _, trace, status, _ = _solve(prob, params, executor)
    elapsed = time.perf_counter() - t0
    last = trace.records[-1] if trace is not None and trace.records else None
    return {
        "instance": name,
        "status": status,
        "outer_iters": trace.iterations if trace is not None else 0,
        "inner_iters_total": trace.inner_iterations if trace is not None else 0,
        "final_gap1": last.gap1 if last else np.nan,
        "final_gap2": last.gap2 if last else np.nan,
        "wall_time": elapsed,
    }


def cmd_bench(args, settings: Settings, executor) -> int:
    rows = []
    paths = args.paths or ([] if args.random else [settings.suite_dir])
    for path in _bench_sources(paths):
        try:
            prob, _ = _read_problem(str(path))
        except InputError as e:
            logger.error("skipping %s: %s", path, e)
            rows.append({"instance": path.stem, "status": "input_error"})
            continue
        rows.append(_bench_row(path.stem, prob, args, settings, executor))
    for seed in range(args.seed, args.seed + args.random):
        prob = random_instance(dims=tuple(args.dims), coupling=args.coupling, pieces=args.pieces, seed=seed)
        rows.append(_bench_row(prob.name, prob, args, settings, executor))
    if not rows:
        raise InputError("nothing to benchmark: pass problem files, directories or --random N")

    df = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    if not args.timing:
        df["wall_time"] = np.nan
    df.to_csv(args.output or sys.stdout, index=False)
    certified = int((df["status"] == "certified").sum())
    logger.info("bench: %d of %d instances certified", certified, len(df))
    return EXIT_OK if certified == len(df) else EXIT_NONCONVERGENCE


# ——————————————————————————————————————————————
# parser
# ——————————————————————————————————————————————

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--log-level", default=argparse.SUPPRESS, help="overrides LOG_LEVEL")
    common.add_argument("--metrics-port", type=int, default=argparse.SUPPRESS, help="serve Prometheus metrics on this port")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="overrides CVHI_THREADS")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--samples", type=int, default=200, help="audit sample budget")
    common.add_argument("--output", "-o", default=None)

    solving = _Parser(add_help=False)
    solving.add_argument("--tol", "--joint-tol", dest="tol", type=float, default=None, help="certification tolerance")
    solving.add_argument("--max-outer", type=int, default=None)
    solving.add_argument("--damping", type=float, default=None)
    solving.add_argument("--lam", type=float, default=None, help="inner proximal step")

    random_opts = _Parser(add_help=False)
    random_opts.add_argument("--dims", type=int, nargs=2, default=[1, 1], metavar=("NV", "NE"))
    random_opts.add_argument("--coupling", type=float, default=0.3)
    random_opts.add_argument("--pieces", type=int, default=3)

    parser = _Parser(prog=PROG, description="Solve, certify and audit coupled variational-hemivariational inequalities.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None)
    parser.add_argument("--metrics-port", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common, solving], help="solve and write a result file")
    p.add_argument("problem")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("verify", parents=[common, solving], help="re-certify a stored result")
    p.add_argument("problem")
    p.add_argument("result")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("oracle", parents=[common, solving], help="grid-enumerate the solution set")
    p.add_argument("problem")
    p.add_argument("--grid", type=float, default=None, help=f"grid step (default {DEFAULT_GRID})")
    p.add_argument("--accept-tol", type=float, default=None)
    p.add_argument("--radius", type=float, default=None, help="search the cube of this radius")
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("check", parents=[common], help="audit the hypotheses")
    p.add_argument("problem")
    p.set_defaults(handler=cmd_check)

    p = sub.add_parser("gen", parents=[common, random_opts], help="write seeded random instances")
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("bench", parents=[common, solving, random_opts], help="solve many instances, emit CSV")
    p.add_argument("paths", nargs="*", help="problem files or directories (default: CVHI_SUITE_DIR)")
    p.add_argument("--random", type=int, default=0, help="also solve this many random instances")
    p.add_argument(
        "--timing", action="store_true",
        help="fill the wall_time column; without it the table is byte-identical across runs",
    )
    p.set_defaults(handler=cmd_bench)
    return parser


def run_cli(argv: Optional[Sequence[str]] = None, settings: Optional[Settings] = None) -> int:
    settings = settings or Settings()
    try:
        args = build_parser().parse_args(argv)
    except InputError as e:
        print(str(e), file=sys.stderr)
        return EXIT_INPUT

    if args.log_level:
        setup_logging(args.log_level)
    port = args.metrics_port or settings.metrics_port
    if port:
        start_http_server(port)
        logger.info("Prometheus metrics server started on :%d", port)
    workers = args.threads if args.threads and args.threads > 0 else settings.worker_count

    with ThreadPoolExecutor(max_workers=workers) as executor:
        try:
            return args.handler(args, settings, executor)
        except CertificateError as e:
            print(f"{PROG}: {e}", file=sys.stderr)
            return EXIT_VERIFY
        except (NonConvergenceError, NumericalError) as e:
            print(f"{PROG}: {e}", file=sys.stderr)
            return EXIT_NONCONVERGENCE
        except GridBudgetError as e:
            print(f"{PROG}: {e}", file=sys.stderr)
            return EXIT_INPUT
        except CvhiError as e:
            logger.debug("command failed", exc_info=True)
            print(f"{PROG}: {e}", file=sys.stderr)
            return EXIT_INPUT
