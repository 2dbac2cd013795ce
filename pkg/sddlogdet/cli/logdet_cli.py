from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from typing import List, Optional, Sequence, Tuple

from pydantic import ValidationError

from sddlogdet.adapters.matrix_market import read_matrix_market, write_matrix_market
from sddlogdet.adapters.report_writer import write_bench_table, write_report
from sddlogdet.config.environments import config
from sddlogdet.core.errors import InvalidParameter, LogDetError, OracleTooLarge
from sddlogdet.core.sparse import SymmetricSparse
from sddlogdet.models.reports import BenchRow, EstimateReport, RunConfig, VerifyReport
from sddlogdet.services.direct_solvers import dense_logdet
from sddlogdet.services.generators import generate
from sddlogdet.services.logdet_api import estimate
from sddlogdet.telemetry.error_handler import default_error_handler
from sddlogdet.telemetry.logging_config import configure_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 2
EXIT_INVALID_INPUT = 3
EXIT_DEGRADED = 4

# rounding slack when checking that the oracle lies inside the sandwich
_BOUNDS_SLACK = 1e-12


def _parse_size(text: str) -> Tuple[int, ...]:
    parts = [p for p in re.split(r"[x,]", text.strip()) if p]
    try:
        values = tuple(int(p) for p in parts)
    except ValueError as exc:
        raise InvalidParameter(f"size must look like 16x16, 50,4 or 100, got {text!r}") from exc
    if not values or any(v <= 0 for v in values):
        raise InvalidParameter(f"size entries must be positive, got {text!r}")
    return values


def _parse_weights(text: str) -> Optional[Tuple[float, float]]:
    if text == "unit":
        return None
    match = re.fullmatch(r"uniform:([^,]+),(.+)", text.strip())
    if not match:
        raise InvalidParameter(f"weights must be 'unit' or 'uniform:a,b', got {text!r}")
    return float(match.group(1)), float(match.group(2))


def _add_common(p: argparse.ArgumentParser, method: bool = True, methods: Sequence[str] = ("tree", "ultra", "fast")) -> None:
    p.add_argument("--input", required=True, help="Matrix Market file (coordinate real symmetric)")
    if method:
        p.add_argument("--method", choices=list(methods), default="tree")
    p.add_argument("--eps", type=float, default=config.get("estimation.eps", 0.1))
    p.add_argument("--eta", type=float, default=config.get("estimation.eta", 0.1))
    p.add_argument("--seed", type=int, default=config.get("estimation.seed", 42))
    p.add_argument("--out", default=None, help="Output path (default: stdout)")
    p.add_argument("--threads", type=int, default=config.get("estimation.threads", 1))
    p.add_argument("--dense-threshold", type=int, default=config.get("solver.dense_threshold", 100))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sddlogdet", description="Log-determinants of SDD matrices")
    p.add_argument(
        "--log-level",
        default=os.getenv("SDDLOGDET_LOG_LEVEL", config.get("log_level", "INFO")),
        help="Root logging level (default: INFO)",
    )
    p.add_argument("--log-file", default=os.getenv("SDDLOGDET_LOG_PATH"), help="Optional log file")
    p.add_argument("--config", default=None, help="YAML overlay on the default configuration")
    sub = p.add_subparsers(dest="cmd", required=True)

    ep = sub.add_parser("estimate", help="Estimate n^-1 ln|A|")
    _add_common(ep)

    bp = sub.add_parser("bounds", help="Deterministic stretch bounds on n^-1 ln|A|")
    _add_common(bp, method=False)

    vp = sub.add_parser("verify", help="Compare an estimate with the dense oracle")
    _add_common(vp, methods=("tree", "ultra", "fast", "bounds"))
    vp.add_argument("--dense-cap", type=int, default=config.get("verify.dense_cap", 2000))

    gp = sub.add_parser("gen", help="Generate an SDD workload as Matrix Market")
    gp.add_argument("--kind", choices=["grid", "torus", "regular", "tree", "path"], required=True)
    gp.add_argument("--size", required=True, help="16x16 (grid, torus), 50,4 (regular), 100 (tree, path)")
    gp.add_argument("--weights", default="unit", help="unit or uniform:a,b")
    gp.add_argument("--shift", type=float, default=1.0)
    gp.add_argument("--seed", type=int, default=config.get("estimation.seed", 42))
    gp.add_argument("--out", required=True)

    hp = sub.add_parser("bench", help="Run methods over generated workloads, write CSV")
    hp.add_argument("--kind", choices=["grid", "torus", "regular", "tree", "path"], default="grid")
    hp.add_argument("--sizes", default="8x8;16x16", help="Semicolon-separated sizes, e.g. 8x8;16x16")
    hp.add_argument("--methods", default="tree,ultra,fast")
    hp.add_argument("--weights", default="unit")
    hp.add_argument("--shift", type=float, default=1.0)
    hp.add_argument("--seeds", type=int, default=3, help="Number of seeds starting at --seed")
    hp.add_argument("--seed", type=int, default=config.get("estimation.seed", 42))
    hp.add_argument("--eps", type=float, default=config.get("estimation.eps", 0.1))
    hp.add_argument("--eta", type=float, default=config.get("estimation.eta", 0.1))
    hp.add_argument("--threads", type=int, default=config.get("estimation.threads", 1))
    hp.add_argument("--dense-cap", type=int, default=config.get("verify.dense_cap", 2000))
    hp.add_argument("--out", default=None)
    return p


def _run_config(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.cmd,
        input=getattr(args, "input", None),
        method=getattr(args, "method", "bounds" if args.cmd == "bounds" else "tree"),
        eps=getattr(args, "eps", config.get("estimation.eps", 0.1)),
        eta=getattr(args, "eta", config.get("estimation.eta", 0.1)),
        seed=args.seed,
        out=args.out,
        dense_cap=getattr(args, "dense_cap", config.get("verify.dense_cap", 2000)),
        dense_threshold=getattr(args, "dense_threshold", config.get("solver.dense_threshold", 100)),
        threads=getattr(args, "threads", 1),
    )


def _estimate(run: RunConfig, A: SymmetricSparse) -> EstimateReport:
    return estimate(
        A,
        method=run.method,
        eps=run.eps,
        eta=run.eta,
        seed=run.seed,
        threads=run.threads,
        dense_threshold=run.dense_threshold,
    )


def _oracle(A: SymmetricSparse, cap: int) -> float:
    if A.n > cap:
        raise OracleTooLarge(f"dense oracle capped at n={cap}, input has n={A.n}")
    return dense_logdet(A) / A.n


def verify(run: RunConfig, A: SymmetricSparse) -> VerifyReport:
    dense = _oracle(A, run.dense_cap)
    report = _estimate(run, A)
    if run.method == "bounds":
        assert report.lower is not None and report.upper is not None
        slack = _BOUNDS_SLACK * max(1.0, abs(dense))
        passed = report.lower - slack <= dense <= report.upper + slack
    else:
        # fast reports its own fixed precision
        tolerance = report.eps if run.method == "fast" and report.eps is not None else run.eps
        passed = abs(report.estimate - dense) <= tolerance
    result = VerifyReport(
        method=run.method,
        n=A.n,
        estimate=report.estimate,
        dense=dense,
        error=abs(report.estimate - dense),
        eps=run.eps,
        lower=report.lower,
        upper=report.upper,
        passed=passed,
        degraded=report.degraded,
    )
    logger.info("verify method=%s n=%d error=%.3e passed=%s", run.method, A.n, result.error, passed)
    return result


def bench(args: argparse.Namespace) -> List[BenchRow]:
    weights = _parse_weights(args.weights)
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    rows: List[BenchRow] = []
    for size_text in [s for s in args.sizes.split(";") if s.strip()]:
        size = _parse_size(size_text)
        A = generate(args.kind, size, shift=args.shift, weights=weights, seed=args.seed)
        dense = _oracle(A, args.dense_cap) if A.n <= args.dense_cap else None
        for method in methods:
            for seed in range(args.seed, args.seed + args.seeds):
                report = estimate(A, method=method, eps=args.eps, eta=args.eta, seed=seed, threads=args.threads)  # type: ignore[arg-type]
                rows.append(
                    BenchRow(
                        kind=args.kind,
                        n=report.n,
                        m=report.m,
                        method=report.method,
                        seed=seed,
                        estimate=report.estimate,
                        dense=dense,
                        error=None if dense is None else abs(report.estimate - dense),
                        lower=report.lower,
                        upper=report.upper,
                        levels=len(report.levels),
                        samples=report.samples,
                        degraded=report.degraded,
                        time_ms=report.time_ms,
                    )
                )
    return rows


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging(args.log_level, args.log_file)
    except ValueError as exc:
        print(f"Invalid log level '{args.log_level}': {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    if args.config:
        config.load_overlay(args.config)

    try:
        if args.cmd == "gen":
            A = generate(
                args.kind, _parse_size(args.size), shift=args.shift, weights=_parse_weights(args.weights), seed=args.seed
            )
            write_matrix_market(A, args.out, comment=f"{args.kind} {args.size} shift={args.shift} seed={args.seed}")
            return EXIT_OK
        if args.cmd == "bench":
            write_bench_table(bench(args), args.out)
            return EXIT_OK

        run = _run_config(args)
        A = read_matrix_market(run.input or "")
        if args.cmd == "verify":
            result = verify(run, A)
            write_report(result, run.out)
            if not result.passed:
                return EXIT_VERIFY_FAILED
            return EXIT_DEGRADED if result.degraded else EXIT_OK

        report = _estimate(run, A)
        write_report(report, run.out)
        return EXIT_DEGRADED if report.degraded else EXIT_OK
    except (LogDetError, ValidationError, FileNotFoundError) as exc:
        default_error_handler.handle_input_error(exc, source=getattr(args, "input", None))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID_INPUT


if __name__ == "__main__":
    sys.exit(main())
