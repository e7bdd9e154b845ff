"""Command-line surface: validate, cost, eval, search, oracle, baselines,
synth, plot and overanchorize subcommands.

Artifact-producing subcommands write a run manifest next to their outputs
recording the tool version, input digests and parameters; reruns on
unchanged inputs reproduce every output byte for byte (manifests differ only
in the timestamp). Exit codes: 0 success, 1 input/validation error, 2
internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .errors import ValidationError
from .evaluation import MetricSpec, PreparedEvaluation, Protocol
from .heads import (
    AnchorConfiguration,
    HeadSpec,
    NeighborMode,
    bbox_count,
    generate_overanchorized,
    head_from_json,
    head_to_json,
    head_flops,
)
from .ingest import (
    dataset_summary,
    detections_to_jsonl,
    ground_truth_to_json,
    parse_detections,
    parse_ground_truth,
)
from .plots import frontier_svg, shape_distribution_svg
from .search import (
    Frontier,
    ResourceMetric,
    SearchParams,
    anchor_pruning_search,
    brute_force_frontier,
    export_frontier,
    import_frontier,
    layerwise_prune_baseline,
    random_prune_baseline,
    trajectory_to_json,
)
from .synth import generate, shape_distribution, synth_spec_from_json

_METRICS = {"coco": Protocol.COCO, "voc50": Protocol.VOC50}
_RESOURCES = {"flops": ResourceMetric.HEAD_FLOPS, "bboxes": ResourceMetric.BBOX_COUNT}
_MODES = {"per-anchor": NeighborMode.PER_ANCHOR, "shared": NeighborMode.SHARED_SLOT_OR_LAYER}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are input errors, not crashes
        raise ValidationError(message, "usage")


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as err:
        raise ValidationError(str(err), path) from None


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _load_head(path: str) -> tuple[HeadSpec, bytes]:
    data = _read(path)
    return head_from_json(data), data


def _load_bound(args) -> tuple:
    head, head_bytes = _load_head(args.head)
    gt_bytes = _read(args.gt)
    gt = parse_ground_truth(gt_bytes)
    dets_bytes = _read(args.dets)
    dets = parse_detections(dets_bytes, head, gt)
    digests = {args.head: _sha256(head_bytes), args.gt: _sha256(gt_bytes), args.dets: _sha256(dets_bytes)}
    return head, gt, dets, digests


def _config(head: HeadSpec, text: str) -> AnchorConfiguration:
    if text == "full":
        return AnchorConfiguration.full(head)
    return AnchorConfiguration.from_encoding(head, text)


def _metric_spec(args) -> MetricSpec:
    return MetricSpec(protocol=_METRICS[args.metric])


def _search_params(args, with_mode: bool = True) -> SearchParams:
    return SearchParams(
        resource_metric=_RESOURCES[args.resource],
        mode=_MODES[args.mode] if with_mode else NeighborMode.PER_ANCHOR,
        theta=args.theta,
        metric_spec=_metric_spec(args),
        seed=getattr(args, "seed", 0),
    )


def _write_outputs(out_dir: str, files: dict[str, bytes], manifest: dict) -> None:
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    for name, data in files.items():
        (directory / name).write_bytes(data)
    manifest = dict(manifest)
    manifest["tool"] = "anchorprune"
    manifest["version"] = __version__
    manifest["created_utc"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    manifest["outputs"] = sorted(files)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _cmd_validate(args) -> int:
    head, gt, dets, _ = _load_bound(args)
    summary = dataset_summary(gt, dets, head)
    doc = {
        "images": len(gt.images),
        "annotations": len(gt.annotations),
        "categories": len(gt.categories),
        "records": len(dets.records),
        "records_per_anchor": {
            f"{a.layer_index}/{a.slot_index}": n
            for a, n in sorted(summary.records_per_anchor.items())
        },
        "annotations_per_class": {str(k): v for k, v in sorted(summary.annotations_per_class.items())},
        "annotations_per_bucket": summary.annotations_per_bucket,
    }
    print(json.dumps(doc, indent=2))
    return 0


def _cmd_cost(args) -> int:
    head, _ = _load_head(args.head)
    config = _config(head, args.config)
    boxes = bbox_count(config)
    flops = head_flops(config)
    print(f"anchors: {len(config)}")
    print(f"bbox_count: {boxes}")
    print(f"head_flops: {flops} ({flops // 10**6}M)")
    return 0


def _cmd_eval(args) -> int:
    head, gt, dets, digests = _load_bound(args)
    config = _config(head, args.config)
    prepared = PreparedEvaluation(dets, gt, head, _metric_spec(args))
    result = prepared.evaluate(config)
    body = json.dumps(result.to_dict(), indent=2)
    print(body)
    if args.out_dir:
        _write_outputs(
            args.out_dir,
            {"eval.json": (body + "\n").encode("utf-8")},
            {"subcommand": "eval", "inputs": digests,
             "params": {"config": config.encoding, "metric": args.metric}},
        )
    return 0


def _frontier_files(frontier: Frontier) -> dict[str, bytes]:
    return {
        "frontier.json": export_frontier(frontier, "json"),
        "frontier.csv": export_frontier(frontier, "csv"),
    }


def _cmd_search(args) -> int:
    head, gt, dets, digests = _load_bound(args)
    params = _search_params(args)
    frontier = anchor_pruning_search(dets, gt, head, params, threads=args.threads)
    _write_outputs(
        args.out_dir,
        _frontier_files(frontier),
        {"subcommand": "search", "inputs": digests,
         "params": {"resource": args.resource, "mode": args.mode,
                    "theta": args.theta, "metric": args.metric, "threads": args.threads}},
    )
    print(f"frontier entries: {len(frontier)}")
    return 0


def _cmd_oracle(args) -> int:
    head, gt, dets, digests = _load_bound(args)
    params = _search_params(args, with_mode=False)
    frontier = brute_force_frontier(dets, gt, head, params)
    _write_outputs(
        args.out_dir,
        _frontier_files(frontier),
        {"subcommand": "oracle", "inputs": digests,
         "params": {"resource": args.resource, "theta": args.theta, "metric": args.metric}},
    )
    print(f"frontier entries: {len(frontier)}")
    return 0


def _cmd_baseline(args) -> int:
    head, gt, dets, digests = _load_bound(args)
    params = _search_params(args, with_mode=False)
    if args.kind == "random":
        trajectory = random_prune_baseline(dets, gt, head, params, steps=args.steps)
        files = {"trajectory.json": trajectory_to_json(trajectory)}
        extra = {"seed": args.seed, "steps": args.steps}
    else:
        entry = layerwise_prune_baseline(dets, gt, head, params, args.target)
        doc = {
            "encoding": entry.encoding,
            "kept": [[a.layer_index, a.slot_index] for a in entry.config.kept_sorted],
            "accuracy": entry.accuracy,
            "cost": entry.cost,
        }
        files = {"layerwise.json": (json.dumps(doc, indent=2) + "\n").encode("utf-8")}
        extra = {"target": args.target}
    _write_outputs(
        args.out_dir,
        files,
        {"subcommand": f"baseline {args.kind}", "inputs": digests,
         "params": {"resource": args.resource, "metric": args.metric, **extra}},
    )
    return 0


def _cmd_synth(args) -> int:
    spec_bytes = _read(args.spec)
    spec = synth_spec_from_json(spec_bytes)
    head, gt, dets = generate(spec)
    _write_outputs(
        args.out_dir,
        {
            "head.json": head_to_json(head).encode("utf-8"),
            "gt.json": ground_truth_to_json(gt).encode("utf-8"),
            "dets.jsonl": detections_to_jsonl(dets).encode("utf-8"),
        },
        {"subcommand": "synth", "inputs": {args.spec: _sha256(spec_bytes)},
         "params": {"seed": spec.seed, "num_images": spec.num_images}},
    )
    print(f"images: {len(gt.images)} annotations: {len(gt.annotations)} records: {len(dets.records)}")
    return 0


def _cmd_plot(args) -> int:
    if args.what == "frontier":
        head, head_bytes = _load_head(args.head)
        frontier_bytes = _read(args.frontier)
        frontier = import_frontier(frontier_bytes, head)
        svg = frontier_svg(frontier, x_label=args.x_label)
        inputs = {args.head: _sha256(head_bytes), args.frontier: _sha256(frontier_bytes)}
    else:
        head, gt, dets, inputs = _load_bound(args)
        dist = shape_distribution(dets, head)
        svg = shape_distribution_svg(dist)
    out = Path(args.out)
    name = out.name
    _write_outputs(
        str(out.parent),
        {name: svg.encode("utf-8")},
        {"subcommand": f"plot {args.what}", "inputs": inputs, "params": {}},
    )
    print(f"wrote {out}")
    return 0


def _cmd_overanchorize(args) -> int:
    head, head_bytes = _load_head(args.head)
    scales = [
        [float(s) for s in group.split(",") if s]
        for group in args.scales.split(";")
    ]
    if ";" in args.ratios:
        ratios = [[float(r) for r in group.split(",") if r] for group in args.ratios.split(";")]
    else:
        ratios = [float(r) for r in args.ratios.split(",") if r]
    dense = generate_overanchorized(
        head.layers,
        scales,
        ratios,
        num_classes=head.num_classes,
        style=head.style,
        box_outputs=head.box_outputs,
        kernel=head.kernel,
        tower=head.tower,
    )
    out = Path(args.out)
    _write_outputs(
        str(out.parent),
        {out.name: head_to_json(dense).encode("utf-8")},
        {"subcommand": "overanchorize", "inputs": {args.head: _sha256(head_bytes)},
         "params": {"scales": args.scales, "ratios": args.ratios}},
    )
    full = AnchorConfiguration.full(dense)
    print(f"anchors: {dense.num_anchors} bbox_count: {bbox_count(full)}")
    return 0


def _add_bound_inputs(parser):
    parser.add_argument("--head", required=True, help="head spec JSON")
    parser.add_argument("--gt", required=True, help="ground-truth JSON")
    parser.add_argument("--dets", required=True, help="detection dump (line-delimited JSON)")


def _add_metric(parser):
    parser.add_argument("--metric", choices=sorted(_METRICS), default="coco")


def _add_search_args(parser):
    parser.add_argument("--resource", choices=sorted(_RESOURCES), default="flops")
    parser.add_argument("--theta", type=float, default=0.0, help="accuracy threshold")
    parser.add_argument("--out-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="anchorprune", description=__doc__)
    parser.add_argument("--version", action="version", version=f"anchorprune {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and cross-check inputs")
    _add_bound_inputs(p)
    p.set_defaults(fn=_cmd_validate)

    p = sub.add_parser("cost", help="bbox count and head FLOPs of a configuration")
    p.add_argument("--head", required=True)
    p.add_argument("--config", default="full", help="hex bitmask or 'full'")
    p.set_defaults(fn=_cmd_cost)

    p = sub.add_parser("eval", help="score one configuration")
    _add_bound_inputs(p)
    p.add_argument("--config", default="full")
    _add_metric(p)
    p.add_argument("--out-dir", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("search", help="greedy anchor-pruning Pareto search")
    _add_bound_inputs(p)
    _add_metric(p)
    _add_search_args(p)
    p.add_argument("--mode", choices=sorted(_MODES), default="per-anchor")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(fn=_cmd_search)

    p = sub.add_parser("oracle", help="exhaustive Pareto frontier (small heads)")
    _add_bound_inputs(p)
    _add_metric(p)
    _add_search_args(p)
    p.set_defaults(fn=_cmd_oracle)

    p = sub.add_parser("baseline", help="random or layer-wise pruning baseline")
    p.add_argument("kind", choices=["random", "layerwise"])
    _add_bound_inputs(p)
    _add_metric(p)
    _add_search_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--target", type=int, default=2, help="layerwise: anchors kept per layer")
    p.set_defaults(fn=_cmd_baseline)

    p = sub.add_parser("synth", help="generate a synthetic instance")
    p.add_argument("--spec", required=True, help="synth spec JSON")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("plot", help="render SVG figures")
    p.add_argument("what", choices=["frontier", "shapes"])
    p.add_argument("--head", required=True)
    p.add_argument("--frontier", help="frontier JSON (plot frontier)")
    p.add_argument("--gt", help="ground truth (plot shapes)")
    p.add_argument("--dets", help="detections (plot shapes)")
    p.add_argument("--x-label", default="head FLOPs (multiply-adds)")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot)

    p = sub.add_parser("overanchorize", help="emit a dense anchor head")
    p.add_argument("--head", required=True, help="template head providing layer geometry")
    p.add_argument("--scales", required=True,
                   help="per-layer scale lists, ';' between layers, ',' within")
    p.add_argument("--ratios", required=True,
                   help="aspect ratios, one list or per-layer lists with ';'")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_overanchorize)
    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "plot":
            if args.what == "frontier" and not args.frontier:
                raise ValidationError("plot frontier requires --frontier", "usage")
            if args.what == "shapes" and not (args.gt and args.dets):
                raise ValidationError("plot shapes requires --gt and --dets", "usage")
        return args.fn(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0
    except Exception as err:  # internal failure
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
