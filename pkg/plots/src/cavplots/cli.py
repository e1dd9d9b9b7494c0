"""Command line front end for rendering run artifacts."""

from __future__ import annotations

import argparse
import sys

from cavplots.io import MissingArtifactError
from cavplots.render import render_convergence, render_profiles, render_snapshots


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="cavgame-plots", description="Render figures from a run directory"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_snap = sub.add_parser("snapshots", help="scene images at chosen times")
    p_snap.add_argument("--run-dir", required=True)
    p_snap.add_argument("--times", type=float, nargs="*", default=[])
    p_snap.add_argument("--out-dir", default=None)

    p_prof = sub.add_parser("profiles", help="velocity/acceleration/steering panels")
    p_prof.add_argument("--run-dir", required=True)
    p_prof.add_argument("--out-dir", default=None)

    p_conv = sub.add_parser("convergence", help="average cost per solver step")
    p_conv.add_argument("--run-dir", required=True)
    p_conv.add_argument("--out-dir", default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "snapshots":
            written = render_snapshots(args.run_dir, args.times, args.out_dir)
            for path in written:
                print(path)
        elif args.command == "profiles":
            print(render_profiles(args.run_dir, args.out_dir))
        else:
            print(render_convergence(args.run_dir, args.out_dir))
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
