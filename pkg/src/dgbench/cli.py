"""``dgbench`` command line: verify, bench, convergence, roofline."""
from __future__ import annotations

import argparse
import os
import re
import sys

from .basis import BasisKind, UnsupportedBasisError
from .bench import OPERATOR_NAMES, append_csv, format_roofline, read_csv, roofline, run_bench
from .geometry import ADVECTION, LAPLACIAN, GeometryVariant
from .tensor_kernels import EVEN_ODD, LANE_WIDTHS, PLAIN

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _positive_float(text: str) -> float:
    v = float(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def parse_levels(text: str) -> list[int]:
    """``A..B`` (inclusive) or a comma-separated list."""
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if m:
        a, b = int(m.group(1)), int(m.group(2))
        levels = list(range(a, b + 1))
    else:
        try:
            levels = [int(t) for t in text.split(",")]
        except ValueError:
            levels = []
    if len(levels) < 1 or any(v < 0 for v in levels) or levels != sorted(set(levels)):
        raise argparse.ArgumentTypeError(f"levels must look like A..B with A <= B, got {text!r}")
    return levels


def build_parser() -> argparse.ArgumentParser:
    from .verify import SUITES

    parser = argparse.ArgumentParser(prog="dgbench", description="Matrix-free DG operator kernels and benchmarks.")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="run verification suites")
    v.add_argument("--suite", action="append", choices=sorted(SUITES),
                   help="suite to run (repeatable); default: all")
    v.add_argument("--dim", type=int, choices=(2, 3))
    v.add_argument("--degree", type=_positive)

    b = sub.add_parser("bench", help="time operator applications and append a CSV record")
    b.add_argument("--operator", required=True, choices=sorted(OPERATOR_NAMES))
    b.add_argument("--dim", type=int, choices=(2, 3), default=3)
    b.add_argument("--degree", type=_positive, default=4)
    b.add_argument("--cells", type=_positive, default=4, help="cells per direction")
    b.add_argument("--geometry", choices=[g.value for g in GeometryVariant], default="g3")
    b.add_argument("--lanes", type=int, choices=LANE_WIDTHS, default=4)
    b.add_argument("--ranks", type=_positive, default=1)
    b.add_argument("--reps", type=_positive, default=5)
    b.add_argument("--form", choices=(PLAIN, EVEN_ODD), default=PLAIN)
    b.add_argument("--basis", choices=[k.value for k in BasisKind])
    b.add_argument("--warmup", type=float, default=0.5, help="warm-up seconds before timing")
    b.add_argument("--csv", help="append the record to this CSV file")

    c = sub.add_parser("convergence", help="manufactured-solution convergence study")
    c.add_argument("--operator", required=True, choices=("advection", "laplace"))
    c.add_argument("--dim", type=int, choices=(2, 3), default=2)
    c.add_argument("--degree", type=_positive, default=2)
    c.add_argument("--levels", type=parse_levels, default=parse_levels("2..4"),
                   help="refinement levels A..B (2**level cells per direction)")
    c.add_argument("--tol", type=_positive_float, default=1e-10)

    r = sub.add_parser("roofline", help="classify CSV records against a roofline")
    r.add_argument("--peak", type=_positive_float, required=True, help="peak flop/s")
    r.add_argument("--bw", type=_positive_float, required=True, help="memory bandwidth in B/s")
    r.add_argument("--csv", required=True)
    return parser


def cmd_verify(args, out) -> int:
    from .verify import all_passed, run_suites

    dims = (args.dim,) if args.dim else None
    degrees = (args.degree,) if args.degree else None
    results = run_suites(args.suite, dims, degrees, report=lambda res: print(res.line(), file=out, flush=True))
    failed = [res for res in results if not res.passed and not res.soft]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed", file=out)
    return EXIT_OK if all_passed(results) else EXIT_FAIL


def cmd_bench(args, out) -> int:
    try:
        rec = run_bench(args.operator, args.dim, args.degree, args.cells, geometry=args.geometry,
                        lanes=args.lanes, ranks=args.ranks, reps=args.reps, form=args.form,
                        warmup=args.warmup, basis=args.basis)
    except (UnsupportedBasisError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    print(f"{rec.operator} d={rec.dim} p={rec.degree} cells={rec.cells} geometry={rec.geometry} "
          f"W={rec.lanes} ranks={rec.ranks}", file=out)
    print(f"  n_dofs {rec.n_dofs}, median apply {rec.time_s * 1e3:.3f} ms, {rec.dofs_per_s:.4e} dofs/s", file=out)
    model = f", schedule model {rec.flops_model}" if rec.flops_model is not None else ""
    print(f"  flops counted {rec.flops}{model}", file=out)
    print(f"  bytes (model) {rec.bytes}, intensity {rec.intensity:.4f} flop/B", file=out)
    if args.csv:
        append_csv(args.csv, [rec])
    return EXIT_OK


def cmd_convergence(args, out) -> int:
    from .convergence import convergence_study

    eq = LAPLACIAN if args.operator == "laplace" else ADVECTION
    try:
        table = convergence_study(eq, args.dim, args.degree, args.levels, tol=args.tol)
    except (UnsupportedBasisError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    print("level,cells,n_dofs,iterations,converged,l2_error,rate", file=out)
    for r in table:
        rate = "" if r.rate is None else f"{r.rate:.3f}"
        print(f"{r.level},{r.cells},{r.n_dofs},{r.iterations},{r.converged},{r.error:.6e},{rate}", file=out)
    if not all(r.converged for r in table):
        print("solver did not converge", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_roofline(args, out) -> int:
    if not os.path.exists(args.csv):
        raise UsageError(f"no such CSV file: {args.csv}")
    try:
        records = read_csv(args.csv)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    print(format_roofline(roofline(records, args.peak, args.bw), args.peak, args.bw), file=out)
    return EXIT_OK


COMMANDS = {"verify": cmd_verify, "bench": cmd_bench, "convergence": cmd_convergence, "roofline": cmd_roofline}


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"dgbench {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
