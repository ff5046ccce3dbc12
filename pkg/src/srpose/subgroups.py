"""Fixed-width segmentation-area subgroups with pinned labels.

People are binned by segmentation area into `bin_count` half-open intervals
((k-1)*width, k*width]. Labels are computed once on a reference dataset and
keyed by annotation id, so the same person keeps its subgroup and its
small/medium/large label no matter how the evaluated images were rescaled.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from math import ceil, isfinite
from pathlib import Path

from .coco import Dataset
from .metrics import SENTINEL, EvalConfig, detection_rate, evaluate_selection

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubgroupSpec:
    bin_width: float  # squared pixels: 500 for half-scale, 125 for quarter-scale
    bin_count: int = 24
    reference_dataset_id: str = ""

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError(f"bin width must be positive: {self.bin_width}")
        if self.bin_count < 1:
            raise ValueError(f"bin count must be at least 1: {self.bin_count}")

    def bin_of(self, area: float) -> int | None:
        """Subgroup index in 1..bin_count, or None outside the binned span."""
        if area <= 0 or not isfinite(area):
            return None
        index = ceil(area / self.bin_width)
        if 1 <= index <= self.bin_count:
            return index
        return None

    def bin_span(self, index: int) -> tuple:
        """Half-open area interval ((k-1)*w, k*w] covered by bin `index`."""
        if not 1 <= index <= self.bin_count:
            raise ValueError(f"bin index {index} outside 1..{self.bin_count}")
        return ((index - 1) * self.bin_width, index * self.bin_width)

    def bin_label(self, index: int) -> tuple:
        """Inclusive integer bounds as conventionally printed, e.g. (1, 500)."""
        lo, hi = self.bin_span(index)
        return (int(lo) + 1, int(hi))


@dataclass
class PinnedLabels:
    """Subgroup index and size label per annotation id, fixed at reference time."""

    spec: SubgroupSpec
    subgroup_of: dict = field(default_factory=dict)  # ann id -> 1..count or None
    size_of: dict = field(default_factory=dict)  # ann id -> range label or None

    def population(self) -> dict:
        """Number of pinned people per subgroup index."""
        counts = {k: 0 for k in range(1, self.spec.bin_count + 1)}
        for bin_index in self.subgroup_of.values():
            if bin_index is not None:
                counts[bin_index] += 1
        return counts


def assign_subgroups(
    dataset: Dataset, spec: SubgroupSpec, config: EvalConfig | None = None
) -> PinnedLabels:
    """Pin subgroup and size labels from the reference dataset's areas.

    Crowd regions get no label; non-positive areas get none with a warning.
    """
    ranges = (config or EvalConfig()).area_ranges
    labels = PinnedLabels(spec=spec)
    for ann in dataset.annotations:
        if ann.iscrowd:
            labels.subgroup_of[ann.id] = None
            labels.size_of[ann.id] = None
            continue
        if ann.area <= 0:
            logger.warning("annotation %s: non-positive area, left unbinned", ann.id)
            labels.subgroup_of[ann.id] = None
            labels.size_of[ann.id] = None
            continue
        labels.subgroup_of[ann.id] = spec.bin_of(ann.area)
        labels.size_of[ann.id] = next(
            (label for label, lo, hi in ranges if lo <= ann.area < hi), None
        )
    return labels


def per_subgroup_metrics(
    match_tables,
    labels: PinnedLabels,
    config: EvalConfig,
    metric: str = "ap",
    iou_threshold: float = 0.5,
) -> list:
    """One metric value per subgroup, people outside the bin ignored.

    metric is "ap", "ar", or "detection_rate". Empty bins yield the sentinel.
    """
    if metric not in ("ap", "ar", "detection_rate"):
        raise ValueError(f"unknown metric {metric!r}")
    tables = list(match_tables)
    values = []
    for k in range(1, labels.spec.bin_count + 1):
        in_bin = lambda table, j, k=k: labels.subgroup_of.get(table.gt_ids[j]) == k
        if metric == "detection_rate":
            values.append(detection_rate(tables, iou_threshold, gt_active_fn=in_bin))
        else:
            ap, ar = evaluate_selection(tables, config, in_bin)
            values.append(ap if metric == "ap" else ar)
    return values


def percent_change(baseline, treated) -> list:
    """Per-bin 100*(treated-baseline)/baseline; sentinel propagates."""
    if len(baseline) != len(treated):
        raise ValueError(
            f"vectors differ in length: {len(baseline)} vs {len(treated)}"
        )
    out = []
    for b, t in zip(baseline, treated):
        if b == SENTINEL or t == SENTINEL or b == 0:
            out.append(SENTINEL)
        else:
            out.append(100.0 * (t - b) / b)
    return out


def write_subgroup_csv(
    path,
    labels: PinnedLabels,
    baseline=None,
    treated=None,
) -> None:
    """Write the per-subgroup plot-data CSV.

    Columns: subgroup_index, area_lo, area_hi, metric_baseline,
    metric_treated, percent_change, n_persons. Sentinel cells are left empty.
    """
    spec = labels.spec
    population = labels.population()
    change = None
    if baseline is not None and treated is not None:
        change = percent_change(baseline, treated)

    def cell(vector, i):
        if vector is None:
            return ""
        value = vector[i]
        return "" if value == SENTINEL else f"{value:.6f}"

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            [
                "subgroup_index",
                "area_lo",
                "area_hi",
                "metric_baseline",
                "metric_treated",
                "percent_change",
                "n_persons",
            ]
        )
        for k in range(1, spec.bin_count + 1):
            lo, hi = spec.bin_label(k)
            writer.writerow(
                [
                    k,
                    lo,
                    hi,
                    cell(baseline, k - 1),
                    cell(treated, k - 1),
                    cell(change, k - 1),
                    population[k],
                ]
            )
