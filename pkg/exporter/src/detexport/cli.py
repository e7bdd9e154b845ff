"""Command-line entry point; flags mirror the ExportConfig fields."""

from __future__ import annotations

import argparse
import json
import sys

from .adapters import UnsupportedArchitectureError, supported_models
from .export import ExportConfig, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detexport",
        description="Run a one-stage detector over a dataset once and dump its "
        "decoded pre-NMS predictions tagged by producing anchor.",
    )
    parser.add_argument("--model", required=True, help=f"one of: {', '.join(supported_models())}")
    parser.add_argument("--checkpoint", default=None, help="state-dict .pt path")
    parser.add_argument("--num-classes", type=int, default=None,
                        help="score outputs per anchor (default: the model family's)")
    parser.add_argument("--gt", required=True, help="COCO-style ground-truth JSON")
    parser.add_argument("--images", required=True,
                        help="directory with <file_name> or <image_id>.png/.jpg")
    parser.add_argument("--score-floor", type=float, default=0.05)
    parser.add_argument("--out-head", required=True)
    parser.add_argument("--out-dets", required=True)
    return parser


def cli(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        report = export(
            ExportConfig(
                model=args.model,
                checkpoint=args.checkpoint,
                num_classes=args.num_classes,
                gt=args.gt,
                images=args.images,
                score_floor=args.score_floor,
                out_head=args.out_head,
                out_dets=args.out_dets,
            )
        )
    except (UnsupportedArchitectureError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2
    print(json.dumps(report, indent=2))
    return 0


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
