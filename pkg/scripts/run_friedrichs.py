#!/usr/bin/env python3
"""Sweep the discrete Friedrichs constants over p and print the stability
window per constrained case.

Usage: python scripts/run_friedrichs.py [p_max] [out.csv]
"""

import sys

from exseq import spectra as spc
from exseq import studies as st


def main():
    p_max = int(sys.argv[1]) if len(sys.argv) > 1 else 8
    out = sys.argv[2] if len(sys.argv) > 2 else "friedrichs.csv"
    rows = []
    for case in spc.FRIEDRICHS_CASES:
        vals = []
        for p in range(1, p_max + 1):
            C, lam, dim = spc.friedrichs_constant(case, p)
            if dim == 0:
                continue
            vals.append(C)
            rows.append(
                {"case": case, "p": p, "constant": C,
                 "min_singular_value": float(lam) ** 0.5, "dim": dim}
            )
        if vals:
            print(f"{case:18s} C in [{min(vals):.4f}, {max(vals):.4f}] "
                  f"window {max(vals) / min(vals):.3f}")
    st.write_rows(rows, out, "csv")
    print(f"records written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
