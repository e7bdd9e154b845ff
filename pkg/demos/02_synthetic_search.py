"""End-to-end pruning search on a synthetic instance.

Generates a deterministic 10-anchor instance with an exact-duplicate anchor,
scores the full configuration, then runs the greedy Pareto search and prints
the frontier. The duplicate anchor is pruned at zero accuracy loss, so the
full configuration itself ends up dominated.
"""

from anchorprune import (
    AnchorConfiguration,
    AnchorId,
    AnchorShape,
    MetricSpec,
    PreparedEvaluation,
    ResourceMetric,
    ScoreModel,
    SearchParams,
    SynthClass,
    SynthSpec,
    anchor_pruning_search,
    generate,
)

spec = SynthSpec(
    seed=42,
    num_images=40,
    anchors=(
        (0, 0, AnchorShape(28.0, 1.0)),   # clone of (0, 1)
        (0, 1, AnchorShape(28.0, 1.0)),
        (0, 2, AnchorShape(28.0, 2.0)),
        (0, 3, AnchorShape(28.0, 0.5)),
        (0, 4, AnchorShape(52.0, 1.0)),
        (1, 0, AnchorShape(90.0, 1.0)),
        (1, 1, AnchorShape(90.0, 2.0)),
        (1, 2, AnchorShape(90.0, 0.5)),
        (2, 0, AnchorShape(170.0, 1.0)),
        (2, 1, AnchorShape(170.0, 2.0)),
    ),
    objects_per_image=(2, 4),
    classes=(SynthClass(1, "object", (18.0, 220.0), (18.0, 220.0)),),
    responsiveness_radius=0.75,
    localization_noise=0.06,
    score_model=ScoreModel(base=0.9, distance_penalty=0.35, noise=0.04),
    false_positive_rate=0.25,
    duplicate_slots=((AnchorId(0, 1), AnchorId(0, 0)),),
)

head, gt, dets = generate(spec)
print(f"instance: {len(gt.images)} images, {len(gt.annotations)} objects, "
      f"{len(dets.records)} cached detections, {head.num_anchors} anchors")

metric = MetricSpec.voc50()
prepared = PreparedEvaluation(dets, gt, head, metric)
full = AnchorConfiguration.full(head)
print(f"full configuration: accuracy {prepared.accuracy(full):.4f}")

params = SearchParams(resource_metric=ResourceMetric.BBOX_COUNT, metric_spec=metric)
frontier = anchor_pruning_search(dets, gt, head, params)

print(f"\nPareto frontier ({len(frontier)} entries, cost = bbox count)")
print(f"{'encoding':>10} {'anchors':>8} {'boxes':>8} {'accuracy':>9}")
for entry in frontier:
    print(f"{entry.encoding:>10} {len(entry.config):>8} {entry.cost:>8} {entry.accuracy:>9.4f}")

clone = AnchorId(0, 0)
best = frontier.entries[-1]
print(f"\nmost accurate entry keeps the clone: {clone in best.config.kept}")
print(f"full configuration on the frontier: "
      f"{any(e.encoding == full.encoding for e in frontier)}")
