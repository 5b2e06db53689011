#!/usr/bin/env python3
"""Run the full verification report and write it as JSON.

Usage: python scripts/run_verification.py [p_max] [out.json]
"""

import json
import sys

from exseq import studies as st


def main():
    p_max = int(sys.argv[1]) if len(sys.argv) > 1 else 6
    out = sys.argv[2] if len(sys.argv) > 2 else "verification.json"
    report = st.run_verification(p_max=p_max, seed=0)
    with open(out, "w") as fh:
        fh.write(st.format_report(report, "json"))
    print(st.format_report(report, "text"))
    print(f"report written to {out}")
    return 0 if report["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
