"""Command line: figviz render --spec spec.json"""

import argparse
import sys

from figviz.render import MissingArtifact, SchemaMismatch, render


def main(argv=None):
    parser = argparse.ArgumentParser(prog="figviz", description="Render tubenet run artifacts")
    subs = parser.add_subparsers(dest="command", required=True)
    rend = subs.add_parser("render", help="render one figure from a plot spec")
    rend.add_argument("--spec", required=True, help="plot spec JSON")
    args = parser.parse_args(argv)
    try:
        png, svg = render(args.spec)
    except (MissingArtifact, SchemaMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(png)
    print(svg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
