"""Command-line entry points: run a scenario, replay a recorded run, or
post-process a recording directory."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _host_port(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected host:port, got {value!r}")
    return host, int(port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamtrack",
        description="Beam-alignment platform and channel-sounder simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario")
    p_run.add_argument("--scenario", type=Path, required=True)
    p_run.add_argument("--out", type=Path, required=True)
    p_run.add_argument("--realtime", action="store_true", help="pace against the wall clock")
    p_run.add_argument("--serve", type=_host_port, metavar="HOST:PORT")
    p_run.add_argument("--speed", type=float, default=1.0, help="realtime pacing factor")

    p_replay = sub.add_parser("replay", help="re-stream a recorded run")
    p_replay.add_argument("--in", dest="in_dir", type=Path, required=True)
    p_replay.add_argument("--speed", type=float, default=1.0)
    p_replay.add_argument("--serve", type=_host_port, required=True, metavar="HOST:PORT")

    p_post = sub.add_parser("postproc", help="post-process a recording directory")
    p_post.add_argument("--in", dest="in_dir", type=Path, required=True)
    p_post.add_argument("--telemetry", type=Path, required=True)
    p_post.add_argument("--cal", type=Path, help="calibration JSON (default: generated)")
    p_post.add_argument("--out", type=Path, required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "run":
        from .orchestrator import load_scenario, run_scenario

        scenario = load_scenario(args.scenario)
        if args.realtime or args.serve:
            from .operator import LiveRun, serve_operator

            run = LiveRun(scenario, args.out, speed=args.speed)
            if args.serve:
                host, port = args.serve
                serve_operator(run, host, port)
            else:
                run.start()
                run.join()
            if run.outputs:
                print(json.dumps(run.outputs.stats, sort_keys=True, indent=1))
        else:
            outputs = run_scenario(scenario, args.out)
            print(json.dumps(outputs.stats, sort_keys=True, indent=1))
        return 0

    if args.command == "replay":
        from .operator import ReplayRun, serve_operator

        host, port = args.serve
        serve_operator(ReplayRun(args.in_dir, speed=args.speed), host, port)
        return 0

    if args.command == "postproc":
        from .postproc import Calibration, make_calibration, run_postproc

        cal = (
            Calibration.from_json(args.cal.read_text())
            if args.cal
            else make_calibration()
        )
        summary = run_postproc(args.in_dir, args.telemetry, cal, args.out)
        print(json.dumps(summary, sort_keys=True, indent=1))
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
