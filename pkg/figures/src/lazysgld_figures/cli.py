"""Command line front end.

    lazysgld-figures render --summary PATH --kind {loss|distance|lambda_min}
                            --out PATH [--logy] [--logx]

Exit codes: 0 figure written, 1 unusable summary data, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .figures import KINDS, EmptyDataError, FigureSpec, SchemaError, render


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lazysgld-figures",
        description="Render figures from a scaled-SGLD sweep summary.")
    sub = parser.add_subparsers(dest="command", required=True)
    rend = sub.add_parser("render", help="render one figure kind to a file")
    rend.add_argument("--summary", required=True, type=Path,
                      help="path to a sweep summary.json")
    rend.add_argument("--kind", required=True, choices=sorted(KINDS))
    rend.add_argument("--out", required=True, type=Path,
                      help="output image path (.svg or .png)")
    rend.add_argument("--logy", action="store_true",
                      help="log scale on the value axis")
    rend.add_argument("--logx", action="store_true",
                      help="log scale on the time axis")
    args = parser.parse_args(argv)
    spec = FigureSpec(summary=args.summary, kind=args.kind, out=args.out,
                      logy=args.logy, logx=args.logx)
    try:
        out = render(spec)
    except (SchemaError, EmptyDataError) as exc:
        print(f"figure error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"figure error: cannot read summary: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"figure error: summary is not valid JSON: {exc}",
              file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
