"""Command-line benchmark and verification harness.

Subcommands `spmm`, `sddmm` and `attention` run sweeps over the requested
grid; `verify` checks a single cell against the dense reference. Exit code
is 0 only if every executed cell verified (or --no-verify was passed).
"""

from __future__ import annotations

import argparse
import sys
from typing import List

from . import bench
from .emulation import precision_name
from .sparse_format import read_dlmc


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t]


def _float_list(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t]


def _add_common(p: argparse.ArgumentParser, op: str):
    p.add_argument("--m", type=int, default=64,
                   help="rows (spmm/sddmm) or sequence length (attention)")
    p.add_argument("--n", type=int, default=64,
                   help="output columns (spmm/sddmm) or head count (attention)")
    p.add_argument("--k", type=int, default=128,
                   help="reduction size (spmm/sddmm) or head dimension (attention)")
    p.add_argument("--vlen", type=_int_list, default=[8],
                   help="comma-separated vector lengths from {2,4,8}")
    p.add_argument("--sparsity", type=_float_list,
                   default=list(bench.DEFAULT_SPARSITIES),
                   help="comma-separated sparsities")
    p.add_argument("--lhs-bits", type=_int_list, default=[8],
                   help="LHS precisions (softmax bits for attention)")
    p.add_argument("--rhs-bits", type=_int_list, default=[8],
                   help="RHS precisions (Q/K/V bits for attention)")
    p.add_argument("--bsn", type=int, choices=(64, 128), default=64)
    p.add_argument("--pipeline", choices=("on", "off"), default="off")
    p.add_argument("--reps", type=int, default=bench.DEFAULT_REPETITIONS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dlmc", type=str, default=None,
                   help="path to a DLMC text file; synthetic matrices otherwise")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", type=str, default=None, help="report output path")
    p.add_argument("--no-verify", action="store_true",
                   help="skip oracle comparison for executed cells")
    p.set_defaults(op=op)


def _build_spec(args) -> bench.SweepSpec:
    precisions = [precision_name(l, r) for l in args.lhs_bits for r in args.rhs_bits]
    dlmc = None
    if args.dlmc:
        with open(args.dlmc) as f:
            dlmc = read_dlmc(f)
    op = getattr(args, "target_op", args.op)
    # attention sweeps use (seq_len, head_dim, heads) shape tuples
    shape = (args.m, args.k, args.n) if op == "attention" else (args.m, args.n, args.k)
    return bench.SweepSpec(
        op=args.op,
        shapes=[shape],
        sparsities=args.sparsity,
        vector_lengths=args.vlen,
        precisions=precisions,
        bs_n=args.bsn,
        pipeline=args.pipeline == "on",
        repetitions=args.reps,
        seed=args.seed,
        dlmc=dlmc,
    )


def _cmd_sweep(args) -> int:
    spec = _build_spec(args)
    records = bench.run_sweep(spec, verify_cells=not args.no_verify)
    for r in records:
        if r.status == "skipped":
            print(f"{r.op} {r.precision} V={r.vector_length} sp={r.sparsity}: "
                  f"skipped ({r.reason})")
            continue
        flag = "-" if r.verified is None else ("ok" if r.verified else "FAIL")
        if r.op == "attention":
            dims = f"L={r.m} d_k={r.n} heads={r.k}"
        else:
            dims = f"M={r.m} N={r.n} K={r.k}"
        print(f"{r.op} {dims} V={r.vector_length} "
              f"sp={r.sparsity} {r.precision} bsn={r.bs_n} "
              f"pipe={'on' if r.pipeline else 'off'}: "
              f"median {r.median_s * 1e3:.3f} ms  p95 {r.p95_s * 1e3:.3f} ms  "
              f"verify={flag}")
    if args.out:
        bench.report(records, args.format, args.out)
        print(f"wrote {len(records)} records to {args.out}")
    executed = [r for r in records if r.status == "ok"]
    if args.no_verify:
        return 0
    return 0 if all(r.verified for r in executed) else 1


def _cmd_verify(args) -> int:
    spec = _build_spec(args)
    code = 0
    for v in spec.vector_lengths:
        for sp in spec.sparsities:
            for prec in spec.precisions:
                outcome = bench.verify(args.target_op, spec.shapes[0], v, sp, prec,
                                       bs_n=spec.bs_n, pipeline=spec.pipeline,
                                       seed=spec.seed, dlmc=spec.dlmc)
                status = "pass" if outcome.passed else f"FAIL: {outcome.message}"
                print(f"{args.target_op} {prec} V={v} sp={sp}: {status}")
                code |= 0 if outcome.passed else 1
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="qsparse-bench",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for op in ("spmm", "sddmm", "attention"):
        _add_common(sub.add_parser(op, help=f"sweep the {op} kernel"), op)
    pv = sub.add_parser("verify", help="verify one cell against the dense reference")
    pv.add_argument("target_op", choices=("spmm", "sddmm", "attention"))
    _add_common(pv, "verify")
    args = parser.parse_args(argv)
    if args.command == "verify":
        return _cmd_verify(args)
    return _cmd_sweep(args)


if __name__ == "__main__":
    sys.exit(main())
