"""Command-line entry points for the study harness.

``lace-study run`` replays a session script (embedded by default, or against a
running server) and prints the outcome as JSON. ``lace-study stats`` turns a
long-format Likert CSV into the omnibus + pairwise statistics report.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .replay import bundled_scripts, load_script, run_script
from .stats import analyze, parse_likert_csv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lace-study", description="Replay scripts and analyze ratings.")
    sub = parser.add_subparsers(dest="command", required=True)

    run_cmd = sub.add_parser("run", help="replay a session script")
    run_cmd.add_argument("script", help="path to a script JSON file, or the name of a bundled script")
    group = run_cmd.add_mutually_exclusive_group()
    group.add_argument("--server", metavar="URL", help="replay through a running lace-server")
    group.add_argument("--embedded", action="store_true", help="replay in-process (default)")
    run_cmd.add_argument("--out", type=Path, help="write the outcome JSON here as well")

    stats_cmd = sub.add_parser("stats", help="analyze a Likert ratings CSV")
    stats_cmd.add_argument("csv", type=Path, help="CSV with participant,workflow,measure,score rows")
    stats_cmd.add_argument("--measure", action="append", default=None, help="restrict to these measures")
    sided = stats_cmd.add_mutually_exclusive_group()
    sided.add_argument("--one-sided", dest="alternative", action="store_const", const="less", default="less")
    sided.add_argument("--two-sided", dest="alternative", action="store_const", const="two-sided")
    stats_cmd.add_argument("--out", type=Path, help="write the report JSON here")
    stats_cmd.add_argument("--csv-out", type=Path, help="write the report as CSV here")

    list_cmd = sub.add_parser("scripts", help="list bundled scripts")
    del list_cmd
    return parser


def _resolve_script(ref: str):
    path = Path(ref)
    if path.is_file():
        return load_script(path)
    bundled = bundled_scripts()
    if ref in bundled:
        return bundled[ref]
    raise SystemExit(f"no script file or bundled script named {ref!r}")


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)

    if args.command == "scripts":
        for name, script in sorted(bundled_scripts().items()):
            print(f"{name}\t{script.workflow.value}\t{script.width}x{script.height}\tseed={script.seed}")
        return

    if args.command == "run":
        script = _resolve_script(args.script)
        outcome = run_script(script, server_url=args.server)
        text = json.dumps(outcome.to_json(), indent=2)
        print(text)
        if args.out:
            args.out.write_text(text + "\n")
        return

    if args.command == "stats":
        tables = parse_likert_csv(args.csv.read_text())
        selected = args.measure or sorted(tables)
        missing = [m for m in selected if m not in tables]
        if missing:
            raise SystemExit(f"measures not in CSV: {', '.join(missing)}")
        report = analyze([tables[m] for m in selected], alternative=args.alternative)
        print(report.to_json())
        if args.out:
            args.out.write_text(report.to_json() + "\n")
        if args.csv_out:
            args.csv_out.write_text(report.to_csv())
        return


if __name__ == "__main__":
    main()
