"""Command-line interface.

Stage subcommands (synth, triangulate, ekf, fte, score, export-scene) run
against a pipeline config; `run` executes the config's whole stage list.
apply-corrections works directly on exported files. All logging goes to
stderr; artifacts go only to files. Exit codes: 0 success, 2 validation
error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import io_formats, pipeline
from .pipeline import EXIT_OK, EXIT_STAGE_FAILURE, EXIT_VALIDATION


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="pipeline config (YAML)")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config's RNG seed")
    p.add_argument("--out-dir", default=None,
                   help="override the config's output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skeltraj",
        description="3D articulated-skeleton trajectory reconstruction toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    for stage, blurb in [
            ("run", "run every stage listed in the config"),
            ("synth", "generate the synthetic dataset grid"),
            ("triangulate", "per-frame robust triangulation"),
            ("ekf", "extended Kalman filter estimation"),
            ("fte", "full trajectory estimation"),
            ("score", "score estimates against ground truth"),
            ("export-scene", "write a viewer scene document")]:
        p = sub.add_parser(stage, help=blurb)
        _add_config_args(p)

    p = sub.add_parser("apply-corrections",
                       help="apply viewer corrections to a scene export")
    p.add_argument("--scene", required=True, help="scene document (JSON)")
    p.add_argument("--corrections", required=True, help="corrections file (JSON)")
    p.add_argument("--out-dir", required=True, help="output directory")
    return parser


def _cmd_stage(args, stage: str | None) -> int:
    stages = None if stage is None else [stage]
    result = pipeline.run_pipeline(args.config, seed=args.seed,
                                   out_dir=args.out_dir, stages=stages)
    return result.exit_code


def _cmd_apply_corrections(args) -> int:
    try:
        scene = io_formats.read_scene(args.scene)
        corrections = io_formats.read_corrections(args.corrections)
    except (OSError, io_formats.FormatError) as err:
        logging.getLogger("skeltraj").error("%s", err)
        return EXIT_VALIDATION
    try:
        payload, summary = pipeline.apply_corrections(scene, corrections)
        os.makedirs(args.out_dir, exist_ok=True)
        io_formats.write_ground_truth(
            os.path.join(args.out_dir, "ground_truth_corrected.json"),
            payload["marker_names"], payload["marker_positions"],
            payload["frame_rate"])
        io_formats.write_json_atomic(
            summary, os.path.join(args.out_dir, "corrections_summary.json"))
    except Exception as err:
        logging.getLogger("skeltraj").error("apply-corrections failed: %s", err)
        return EXIT_STAGE_FAILURE
    return EXIT_OK


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "apply-corrections":
        return _cmd_apply_corrections(args)
    stage = None if args.command == "run" else args.command
    return _cmd_stage(args, stage)


if __name__ == "__main__":
    sys.exit(main())
