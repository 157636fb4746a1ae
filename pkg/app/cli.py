"""
Command line entry point: python -m app.cli <command> ...

  simulate         run a scenario closed loop and write its record
  plan-envelope    plan blocks on a boundary CSV or a generated road
  summarize        table + JSON over one or more run directories
  render           SVG of a run directory
  tracks           export the built-in tracks as boundary CSVs
  compare-planners heuristic vs naive block seeding on generated roads

ENV:
  ENVMPC_LOG_LEVEL   log verbosity (see app/settings.py for the rest)
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional, Sequence

from loguru import logger

from .compose import render_svg, summarize
from .envelope import load_envelope, save_envelope
from .errors import EnvelopeMpcError
from .pipeline import ENVELOPE_FILE, RECORD_FILE, TRACK_FILE, load_record, run_scenario
from .planner import PlannerConfig, compare_planners, design_envelope
from .road import generate_road, load_track, save_track
from .scenario import load_scenario
from .settings import configure_logging, load_yaml
from .tracks import export_tracks


def _cmd_simulate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario, args.vehicle)
    if args.seed is not None:
        scenario = scenario.model_copy(update={"seed": args.seed})
    record = run_scenario(
        scenario,
        args.out,
        realtime_strict=True if args.realtime_strict else None,
        deterministic=args.deterministic,
    )
    print(json.dumps(record.metrics(), indent=2))
    return 0 if record.status == "completed" else 2


def _cmd_plan(args: argparse.Namespace) -> int:
    if args.road:
        road = load_track(args.road)
    else:
        road = generate_road(
            args.generate,
            n_stations=args.stations,
            width_range=(args.width_min, args.width_max),
            curvature_scale=args.curvature,
        )
    config = PlannerConfig.from_mapping(load_yaml(args.planner_config) if args.planner_config else None)
    plan = design_envelope(road, args.p, args.rho, config)
    save_envelope(plan.envelope, args.out)
    if args.save_road:
        save_track(road, args.save_road)
    if args.report:
        Path(args.report).write_text(json.dumps([asdict(r) for r in plan.reports], indent=2), encoding="utf-8")
    logger.info("Envelope with {} blocks written to {}", len(plan.designs), args.out)
    return 0


def _run_dirs(paths: Sequence[str]) -> List[Path]:
    out = []
    for p in map(Path, paths):
        if (p / RECORD_FILE).exists():
            out.append(p)
        else:
            out.extend(sorted(d for d in p.iterdir() if (d / RECORD_FILE).exists()))
    return out


def _cmd_summarize(args: argparse.Namespace) -> int:
    dirs = _run_dirs(args.runs)
    if not dirs:
        logger.error("No run records found under {}", ", ".join(args.runs))
        return 1
    text, data = summarize([load_record(d) for d in dirs])
    print(text)
    if args.json:
        Path(args.json).write_text(json.dumps(data, indent=2), encoding="utf-8")
    return 0


def _cmd_render(args: argparse.Namespace) -> int:
    run = Path(args.record)
    record = load_record(run)
    road = load_track(args.track or run / TRACK_FILE, spacing=None)
    envelope = None
    env_path = run / ENVELOPE_FILE
    if not args.no_blocks and env_path.exists():
        envelope = load_envelope(env_path)
    Path(args.out).write_text(render_svg(record, road, envelope, show_blocks=not args.no_blocks), encoding="utf-8")
    return 0


def _cmd_tracks(args: argparse.Namespace) -> int:
    for p in export_tracks(args.out):
        print(p)
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    roads = [generate_road(seed, n_stations=args.stations) for seed in range(args.seeds)]
    results = compare_planners(roads)
    wins = sum(r.heuristic_faster for r in results)
    print(json.dumps({"roads": len(results), "heuristic_faster": wins, "runs": [asdict(r) for r in results]}, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="envmpc", description="Spatial-envelope MPC toolkit")
    parser.add_argument("--log-level", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario closed loop")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vehicle", default="vehicle.yaml")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--realtime-strict", action="store_true")
    p.add_argument("--deterministic", action="store_true", help="no wall-clock solve budget")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("plan-envelope", help="plan an envelope for a road")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--road")
    src.add_argument("--generate", type=int, metavar="SEED")
    p.add_argument("--stations", type=int, default=120)
    p.add_argument("--width-min", type=float, default=3.0)
    p.add_argument("--width-max", type=float, default=6.0)
    p.add_argument("--curvature", type=float, default=0.02)
    p.add_argument("--p", type=int, default=4)
    p.add_argument("--rho", type=float, default=-15.0)
    p.add_argument("--planner-config", default=None)
    p.add_argument("--save-road", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_plan)

    p = sub.add_parser("summarize", help="summarize run directories")
    p.add_argument("runs", nargs="+")
    p.add_argument("--json", default=None)
    p.set_defaults(func=_cmd_summarize)

    p = sub.add_parser("render", help="render a run directory as SVG")
    p.add_argument("record")
    p.add_argument("--out", required=True)
    p.add_argument("--track", default=None)
    p.add_argument("--no-blocks", action="store_true")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("tracks", help="export built-in tracks")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_tracks)

    p = sub.add_parser("compare-planners", help="heuristic vs naive seeding")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--stations", type=int, default=120)
    p.set_defaults(func=_cmd_compare)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return args.func(args)
    except EnvelopeMpcError as e:
        logger.exception("{} failed: {}", args.command, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
