"""Command-line interface: verification, dimension tables, convergence
sweeps, Friedrichs sweeps, and interpolant export.

Exit status: 0 when every invoked check passes, 1 on a failed check, 2 on
usage errors (argparse's convention).
"""

import argparse
import json
import sys

import numpy as np

from . import projectors as pj
from . import spectra as spc
from . import studies as st
from .refsimplex import quadrature


def _load_config(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line: {line!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = val
    return out


def _apply_config(args, parser):
    if getattr(args, "config", None):
        cfg = _load_config(args.config)
        for key, val in cfg.items():
            if not hasattr(args, key):
                parser.error(f"unknown config key {key!r}")
            cur = getattr(args, key)
            if isinstance(cur, bool):
                val = val.lower() in ("1", "true", "yes")
            elif isinstance(cur, int):
                val = int(val)
            elif isinstance(cur, float):
                val = float(val)
            elif isinstance(cur, (list, tuple)):
                val = type(cur)(type(cur[0])(v) for v in val.split(",")) if cur else val.split(",")
            setattr(args, key, val)
    return args


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _common_flags(sub, p_min=0, p_max=6):
    sub.add_argument("--config", help="flat key = value file mirroring the flags")
    sub.add_argument("--p-min", type=int, default=p_min, dest="p_min")
    sub.add_argument("--p-max", type=int, default=p_max, dest="p_max")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--out", default=None)
    sub.add_argument("--format", choices=("csv", "json"), default="csv",
                     dest="fmt")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="exseq",
        description="discrete complexes and commuting interpolation on simplices",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_verify = subs.add_parser("verify", help="run the verification suite")
    _common_flags(p_verify)
    p_verify.set_defaults(fmt="json")

    p_dims = subs.add_parser("dims", help="dimension table vs closed forms")
    _common_flags(p_dims, p_max=8)

    p_conv = subs.add_parser("convergence", help="p-convergence sweep")
    _common_flags(p_conv, p_min=2, p_max=6)
    p_conv.add_argument("--operator", action="append", default=None,
                        choices=sorted(pj.OPERATORS))
    p_conv.add_argument("--suite", default="entire",
                        choices=("entire", "singular", "poly", "mixed"))
    p_conv.add_argument("--s", action="append", type=float, default=None)
    p_conv.add_argument("--dual-offset", type=int, default=6,
                        dest="dual_offset")
    p_conv.add_argument("--timing", action="store_true")

    p_fried = subs.add_parser("friedrichs", help="discrete Friedrichs sweep")
    _common_flags(p_fried, p_min=1, p_max=8)

    p_proj = subs.add_parser("project", help="interpolate suite fields, export")
    _common_flags(p_proj, p_max=3)
    p_proj.add_argument("--operator", default="grad3d",
                        choices=sorted(pj.OPERATORS))
    p_proj.add_argument("--suite", default="entire",
                        choices=("entire", "singular", "poly", "mixed"))

    args = parser.parse_args(argv)
    args = _apply_config(args, parser)
    try:
        return _dispatch(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args):
    if args.command == "verify":
        report = st.run_verification(p_max=args.p_max, seed=args.seed)
        _emit(st.format_report(report, args.fmt), args.out)
        return 0 if report["ok"] else 1

    if args.command == "dims":
        rows = st._dims_table(args.p_max)
        _emit(st.format_rows(rows, args.fmt), args.out)
        return 0 if all(r["match"] for r in rows) else 1

    if args.command == "convergence":
        ops = tuple(args.operator or ["curl3d"])
        svals = tuple(args.s if args.s is not None else [0.0])
        cfg = st.StudyConfig(
            operators=ops,
            p_min=args.p_min,
            p_max=args.p_max,
            suite=args.suite,
            s_values=svals,
            dual_offset=args.dual_offset,
            seed=args.seed,
        )
        records, slopes = st.run_convergence(cfg)
        rows = st.records_to_rows(records, timing=args.timing)
        for s in slopes:
            rows.append(
                {
                    "operator": s["operator"],
                    "p": -1,
                    "field": s["field"],
                    "s": s["s"],
                    "norm": s["norm"],
                    "error": float("nan"),
                    "denominator": float("nan"),
                    "ratio": s["slope"],
                    "pstab": float("nan"),
                }
            )
        _emit(st.format_rows(rows, args.fmt), args.out)
        finite = all(np.isfinite(r.error) for r in records)
        return 0 if finite else 1

    if args.command == "friedrichs":
        rows = []
        ok = True
        for case in spc.FRIEDRICHS_CASES:
            for p in range(max(args.p_min, 0), args.p_max + 1):
                C, lam, dim = spc.friedrichs_constant(case, p)
                if dim == 0:
                    continue
                ok = ok and C > 0 and np.isfinite(C)
                rows.append(
                    {
                        "case": case,
                        "p": p,
                        "constant": float(C),
                        "min_singular_value": float(np.sqrt(max(lam, 0.0))),
                        "dim": dim,
                    }
                )
        _emit(st.format_rows(rows, args.fmt), args.out)
        return 0 if ok else 1

    if args.command == "project":
        op = args.operator
        dim, vd = st.OPERATOR_SHAPE[op]
        plan = pj.build_plan(op, args.p_max)
        docs = []
        rows = []
        for f in st.fields_for(op, args.suite):
            slots = plan.apply(f)
            if args.fmt == "json":
                docs.append(
                    {
                        "operator": op,
                        "p": args.p_max,
                        "field": f.name,
                        "value_dim": plan.target.value_dim,
                        "modal_degree": plan.target.degree,
                        "coefficients": [float(c) for c in slots],
                    }
                )
            else:
                cell = plan.target.cell
                q = quadrature(cell, 2 * plan.target.degree)
                vals = plan.target.evaluate(slots, q.points)
                for i, pt in enumerate(q.points):
                    row = {"field": f.name}
                    for k in range(dim):
                        row[f"x{k}"] = float(pt[k])
                    v = np.atleast_1d(vals[i])
                    for k in range(len(v)):
                        row[f"value{k}"] = float(v[k])
                    rows.append(row)
        if args.fmt == "json":
            _emit(json.dumps(docs, indent=1) + "\n", args.out)
        else:
            _emit(st.format_rows(rows, "csv"), args.out)
        return 0

    raise ValueError(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
