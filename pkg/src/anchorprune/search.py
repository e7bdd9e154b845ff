"""Greedy anchor-pruning Pareto search, exhaustive oracle and baselines.

The search starts from the full configuration and repeatedly expands the
best-accuracy unexplored configuration by removing one anchor (or, for
shared heads, one slot everywhere or one whole layer). Children are scored
on the cached detections; a child joins the frontier and the worklist only
if it is Pareto-optimal among the entries found so far and clears the
accuracy threshold. Costs come from the exact resource models, so no model
is ever re-run.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

from .errors import ValidationError
from .evaluation import MetricSpec, PreparedEvaluation
from .heads import (
    AnchorConfiguration,
    AnchorId,
    HeadSpec,
    NeighborMode,
    bbox_count,
    head_digest,
    head_flops,
    neighbors,
)
from .ingest import GroundTruthSet, RawDetectionSet

BRUTE_FORCE_ANCHOR_CAP = 20

FRONTIER_FORMAT = "anchor-frontier/v1"


class ResourceMetric(str, Enum):
    HEAD_FLOPS = "head_flops"
    BBOX_COUNT = "bbox_count"


_COST_FN: dict[ResourceMetric, Callable[[AnchorConfiguration], int]] = {
    ResourceMetric.HEAD_FLOPS: head_flops,
    ResourceMetric.BBOX_COUNT: bbox_count,
}


@dataclass(frozen=True)
class SearchParams:
    """Knobs of the pruning search.

    The worklist policy is fixed: best accuracy first, ties broken by
    canonical encoding. `seed` only feeds the random baseline.
    """

    resource_metric: ResourceMetric = ResourceMetric.HEAD_FLOPS
    mode: NeighborMode = NeighborMode.PER_ANCHOR
    theta: float = 0.0
    metric_spec: MetricSpec = field(default_factory=MetricSpec.coco)
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.theta <= 1.0):
            raise ValidationError(f"theta must lie in [0,1], got {self.theta}")

    def cost(self, config: AnchorConfiguration) -> int:
        return _COST_FN[self.resource_metric](config)


@dataclass(frozen=True)
class FrontierEntry:
    config: AnchorConfiguration
    accuracy: float
    cost: int
    parent: str | None = None

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0):
            raise ValidationError(f"accuracy must lie in [0,1], got {self.accuracy}")

    @property
    def encoding(self) -> str:
        return self.config.encoding


@dataclass(frozen=True)
class Frontier:
    """Mutually non-dominated entries, ascending in both cost and accuracy."""

    entries: tuple[FrontierEntry, ...] = ()

    def __post_init__(self):
        costs = [e.cost for e in self.entries]
        accs = [e.accuracy for e in self.entries]
        if costs != sorted(costs) or len(set(costs)) != len(costs):
            raise ValidationError("frontier costs must be strictly increasing")
        if accs != sorted(accs) or len(set(accs)) != len(accs):
            raise ValidationError("frontier accuracies must be strictly increasing")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


def dominates(a: FrontierEntry, b: FrontierEntry) -> bool:
    """Weak dominance: no worse on either axis, better on at least one."""
    return (
        a.cost <= b.cost
        and a.accuracy >= b.accuracy
        and (a.cost < b.cost or a.accuracy > b.accuracy)
    )


def frontier_insert(frontier: Frontier, entry: FrontierEntry) -> tuple[Frontier, bool]:
    """Insert `entry` unless dominated or a duplicate (cost, accuracy) point.

    Entries the new point dominates are dropped; the first entry to claim a
    point keeps it.
    """
    for existing in frontier.entries:
        if dominates(existing, entry):
            return frontier, False
        if existing.cost == entry.cost and existing.accuracy == entry.accuracy:
            return frontier, False
    kept = [e for e in frontier.entries if not dominates(entry, e)]
    kept.append(entry)
    kept.sort(key=lambda e: e.cost)
    return Frontier(tuple(kept)), True


def frontier_from_entries(entries: Iterable[FrontierEntry]) -> Frontier:
    """Non-dominated subset of arbitrary points (first entry claims ties)."""
    frontier = Frontier()
    for entry in entries:
        frontier, _ = frontier_insert(frontier, entry)
    return frontier


def _evaluate_children(
    prepared: PreparedEvaluation,
    children: Sequence[AnchorConfiguration],
    threads: int,
) -> list[float]:
    """Accuracies of `children`, in order, regardless of thread count."""
    if threads <= 1 or len(children) <= 1:
        return [prepared.accuracy(child) for child in children]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(prepared.accuracy, children))


def anchor_pruning_search(
    dets: RawDetectionSet,
    gt: GroundTruthSet,
    head: HeadSpec,
    params: SearchParams,
    threads: int = 1,
) -> Frontier:
    """Greedy Pareto search over anchor subsets on cached detections.

    The full configuration seeds both the worklist and the frontier
    unconditionally. Each configuration is evaluated at most once; children
    are applied in canonical order, so the result is independent of the
    degree of parallelism.
    """
    prepared = PreparedEvaluation(dets, gt, head, params.metric_spec)
    full = AnchorConfiguration.full(head)
    full_entry = FrontierEntry(full, prepared.accuracy(full), params.cost(full), None)
    frontier, _ = frontier_insert(Frontier(), full_entry)
    worklist: list[tuple[float, str, AnchorConfiguration]] = [
        (-full_entry.accuracy, full.encoding, full)
    ]
    visited = {full.encoding}
    while worklist:
        _, parent_encoding, current = heapq.heappop(worklist)
        fresh = [
            child
            for child in neighbors(current, params.mode)
            if child.encoding not in visited
        ]
        visited.update(child.encoding for child in fresh)
        accuracies = _evaluate_children(prepared, fresh, threads)
        for child, accuracy in zip(fresh, accuracies):
            if accuracy < params.theta:
                continue
            entry = FrontierEntry(child, accuracy, params.cost(child), parent_encoding)
            frontier, inserted = frontier_insert(frontier, entry)
            if inserted:
                heapq.heappush(worklist, (-accuracy, child.encoding, child))
    return frontier


def brute_force_frontier(
    dets: RawDetectionSet,
    gt: GroundTruthSet,
    head: HeadSpec,
    params: SearchParams,
) -> Frontier:
    """Exact Pareto frontier over all anchor subsets (desk-scale oracle)."""
    n = head.num_anchors
    if n > BRUTE_FORCE_ANCHOR_CAP:
        raise ValidationError(
            f"brute force refuses {n} anchors (cap {BRUTE_FORCE_ANCHOR_CAP}: "
            f"2^{n} configurations)"
        )
    prepared = PreparedEvaluation(dets, gt, head, params.metric_spec)
    ids = head.anchor_ids
    frontier = Frontier()
    for value in range(1 << n):
        kept = frozenset(
            anchor for pos, anchor in enumerate(ids) if value & (1 << (n - 1 - pos))
        )
        config = AnchorConfiguration(head, kept)
        accuracy = prepared.accuracy(config)
        if accuracy < params.theta:
            continue
        entry = FrontierEntry(config, accuracy, params.cost(config), None)
        frontier, _ = frontier_insert(frontier, entry)
    return frontier


def random_prune_baseline(
    dets: RawDetectionSet,
    gt: GroundTruthSet,
    head: HeadSpec,
    params: SearchParams,
    steps: int | None = None,
) -> list[FrontierEntry]:
    """Trajectory of uniformly random removals, evaluated after each step."""
    prepared = PreparedEvaluation(dets, gt, head, params.metric_spec)
    rng = random.Random(params.seed)
    config = AnchorConfiguration.full(head)
    remaining = head.num_anchors if steps is None else min(steps, head.num_anchors)
    trajectory: list[FrontierEntry] = []
    for _ in range(remaining):
        kept = config.kept_sorted
        parent_encoding = config.encoding
        config = config.remove([kept[rng.randrange(len(kept))]])
        trajectory.append(
            FrontierEntry(
                config, prepared.accuracy(config), params.cost(config), parent_encoding
            )
        )
    return trajectory


def layerwise_prune_baseline(
    dets: RawDetectionSet,
    gt: GroundTruthSet,
    head: HeadSpec,
    params: SearchParams,
    target_per_layer: int,
) -> FrontierEntry:
    """Prune layer by layer, greedily dropping the cheapest-to-lose anchor
    until `target_per_layer` anchors remain in each layer."""
    if target_per_layer < 0:
        raise ValidationError("target_per_layer must be >= 0")
    prepared = PreparedEvaluation(dets, gt, head, params.metric_spec)
    config = AnchorConfiguration.full(head)
    for layer in head.layers:
        while len(config.kept_in_layer(layer.layer_index)) > target_per_layer:
            candidates = [
                config.remove([anchor])
                for anchor in config.kept_in_layer(layer.layer_index)
            ]
            accuracies = [prepared.accuracy(c) for c in candidates]
            best = max(range(len(candidates)), key=lambda i: (accuracies[i], -i))
            config = candidates[best]
    return FrontierEntry(config, prepared.accuracy(config), params.cost(config), None)


def hypervolume(frontier: Frontier, ref_cost: int) -> float:
    """Area dominated by the frontier in (cost, accuracy) space.

    Reference point is (ref_cost, 0); the staircase sums
    (next cost boundary - cost) * accuracy per entry.
    """
    if len(frontier) == 0:
        return 0.0
    costs = [e.cost for e in frontier.entries]
    if ref_cost < costs[-1]:
        raise ValidationError(
            f"ref_cost {ref_cost} below maximum frontier cost {costs[-1]}"
        )
    total = 0.0
    for i, entry in enumerate(frontier.entries):
        upper = costs[i + 1] if i + 1 < len(costs) else ref_cost
        total += (upper - entry.cost) * entry.accuracy
    return total


# --- serialization ----------------------------------------------------------


def export_frontier(frontier: Frontier, fmt: str = "json") -> bytes:
    """Serialize a frontier; JSON round-trips, CSV is for spreadsheets."""
    if fmt == "json":
        digest = (
            head_digest(frontier.entries[0].config.head) if frontier.entries else None
        )
        doc = {
            "format": FRONTIER_FORMAT,
            "head_spec_digest": digest,
            "entries": [
                {
                    "encoding": e.encoding,
                    "kept": [[a.layer_index, a.slot_index] for a in e.config.kept_sorted],
                    "accuracy": e.accuracy,
                    "cost": e.cost,
                    "parent": e.parent,
                }
                for e in frontier.entries
            ],
        }
        return (json.dumps(doc, indent=2) + "\n").encode("utf-8")
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["encoding", "accuracy", "cost"])
        for e in frontier.entries:
            writer.writerow([e.encoding, repr(e.accuracy), e.cost])
        return buffer.getvalue().encode("utf-8")
    raise ValidationError(f"unknown frontier format {fmt!r}")


def import_frontier(data: bytes | str, head: HeadSpec) -> Frontier:
    """Parse a JSON frontier back against its head spec."""
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as err:
        raise ValidationError(f"malformed JSON: {err}", "frontier") from None
    if doc.get("format") != FRONTIER_FORMAT:
        raise ValidationError(f"expected format {FRONTIER_FORMAT!r}", "frontier")
    digest = doc.get("head_spec_digest")
    if doc.get("entries") and digest != head_digest(head):
        raise ValidationError("frontier is bound to a different head", "frontier")
    entries = []
    for i, entry_doc in enumerate(doc.get("entries", [])):
        config = AnchorConfiguration.from_encoding(head, entry_doc["encoding"])
        kept = [AnchorId(l, s) for l, s in entry_doc.get("kept", [])]
        if kept and frozenset(kept) != config.kept:
            raise ValidationError(
                "kept list disagrees with encoding", f"frontier.entries[{i}]"
            )
        entries.append(
            FrontierEntry(
                config,
                float(entry_doc["accuracy"]),
                int(entry_doc["cost"]),
                entry_doc.get("parent"),
            )
        )
    return Frontier(tuple(entries))


def trajectory_to_json(trajectory: list[FrontierEntry]) -> bytes:
    doc = {
        "format": "anchor-trajectory/v1",
        "points": [
            {
                "encoding": e.encoding,
                "accuracy": e.accuracy,
                "cost": e.cost,
                "parent": e.parent,
            }
            for e in trajectory
        ],
    }
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")
