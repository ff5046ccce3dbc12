"""COCO-style detection and keypoint evaluation.

Similarity is bbox IoU in detection mode and object keypoint similarity
(OKS) in keypoint mode. Predictions are matched greedily per threshold,
then precision/recall curves are accumulated over the threshold grid with
area-range (or pinned-label) filtering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coco import DetectionRecord, KeypointRecord, PersonAnnotation

SENTINEL = -1.0

# Per-keypoint falloff sigmas for the 17 COCO keypoints (nose, eyes, ears,
# shoulders, elbows, wrists, hips, knees, ankles); falloff constant k = 2*sigma.
COCO_KEYPOINT_SIGMAS = (
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072,
    0.062, 0.062, 0.107, 0.107, 0.087, 0.087, 0.089, 0.089,
)
DEFAULT_OKS_FALLOFF = tuple(2.0 * s for s in COCO_KEYPOINT_SIGMAS)

DEFAULT_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))

# Half-open [lo, hi) ranges in squared pixels.
DEFAULT_AREA_RANGES = (
    ("small", 1.0, 32.0**2),
    ("medium", 32.0**2, 96.0**2),
    ("large", 96.0**2, float("inf")),
)

# Exact hundredths (correctly rounded k/100), so recall values like 3/100
# land on the grid points instead of straddling them.
RECALL_SAMPLES = np.arange(101, dtype=np.float64) / 100.0


class MetricError(Exception):
    pass


class UndefinedSimilarityError(MetricError):
    """OKS is undefined: no visible keypoints or non-positive object scale."""


@dataclass(frozen=True)
class EvalConfig:
    mode: str = "detection"  # "detection" or "keypoint"
    thresholds: tuple = DEFAULT_THRESHOLDS
    area_ranges: tuple = DEFAULT_AREA_RANGES
    oks_falloff: tuple = DEFAULT_OKS_FALLOFF
    max_detections: int = 20

    def __post_init__(self):
        if self.mode not in ("detection", "keypoint"):
            raise MetricError(f"unknown mode {self.mode!r}")
        ts = self.thresholds
        if not ts or any(t <= 0 or t > 1 for t in ts):
            raise MetricError("thresholds must lie in (0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise MetricError("thresholds must be strictly increasing")
        if len(self.oks_falloff) != 17 or any(k <= 0 for k in self.oks_falloff):
            raise MetricError("need 17 positive per-keypoint falloff constants")
        if self.max_detections < 1:
            raise MetricError("max_detections must be at least 1")
        spans = sorted((lo, hi) for _, lo, hi in self.area_ranges)
        for (_, hi_prev), (lo, _) in zip(spans, spans[1:]):
            if lo < hi_prev:
                raise MetricError("area ranges overlap")


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes; 0 on empty union."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw < 0 or ah < 0 or bw < 0 or bh < 0:
        raise MetricError("bbox width/height must be non-negative")
    ix = min(ax + aw, bx + bw) - max(ax, bx)
    iy = min(ay + ah, by + bh) - max(ay, by)
    inter = max(0.0, ix) * max(0.0, iy)
    union = aw * ah + bw * bh - inter
    if union <= 0.0:
        return 0.0
    # corner-form rounding can push inter past union for degenerate slivers
    # at large coordinates; the true ratio never exceeds 1
    return min(inter / union, 1.0)


def oks(prediction: KeypointRecord, gt: PersonAnnotation, falloff=None) -> float:
    """Object keypoint similarity between a predicted and ground-truth pose.

    Mean of exp(-d_i^2 / (2 * s^2 * k_i^2)) over keypoints with visibility
    v_i > 0, where d_i is the Euclidean distance between corresponding
    keypoints and the squared object scale s^2 is the segmentation area.
    """
    k = falloff if falloff is not None else DEFAULT_OKS_FALLOFF
    s2 = gt.area
    if s2 <= 0:
        raise UndefinedSimilarityError(
            f"gt {gt.id}: OKS needs a positive segmentation area"
        )
    total = 0.0
    visible = 0
    for i in range(17):
        v = gt.keypoints[3 * i + 2]
        if v <= 0:
            continue
        dx = prediction.keypoints[3 * i] - gt.keypoints[3 * i]
        dy = prediction.keypoints[3 * i + 1] - gt.keypoints[3 * i + 1]
        total += math.exp(-(dx * dx + dy * dy) / (2.0 * s2 * k[i] * k[i]))
        visible += 1
    if visible == 0:
        raise UndefinedSimilarityError(f"gt {gt.id}: no visible keypoints")
    return total / visible


def _oks_proximity(prediction: KeypointRecord, gt: PersonAnnotation, falloff) -> float:
    """Absorption similarity for gts without visible keypoints.

    Distances are measured from each predicted keypoint to the gt bbox grown
    by one box size on every side, so predictions sitting on the region score
    high and get absorbed by the ignore gt.
    """
    bx, by, bw, bh = gt.bbox
    x0, x1 = bx - bw, bx + 2.0 * bw
    y0, y1 = by - bh, by + 2.0 * bh
    s2 = gt.area + np.spacing(1)
    total = 0.0
    for i in range(17):
        xd = prediction.keypoints[3 * i]
        yd = prediction.keypoints[3 * i + 1]
        dx = max(0.0, x0 - xd) + max(0.0, xd - x1)
        dy = max(0.0, y0 - yd) + max(0.0, yd - y1)
        total += math.exp(-(dx * dx + dy * dy) / (2.0 * s2 * falloff[i] ** 2))
    return total / 17.0


@dataclass
class MatchEntry:
    prediction_id: int
    gt_id: int | None
    score: float
    similarity: float


@dataclass
class MatchTable:
    """Per-image matching state.

    Predictions are stored in descending score order (already truncated to
    max_detections). `matches` and `prediction_ignored` hold the greedy
    assignment per threshold with no area filtering; range- or
    subgroup-restricted assignments are recomputed from the similarity
    matrix via `assign`.
    """

    image_id: int
    mode: str
    thresholds: tuple
    gt_ids: list
    gt_areas: list
    gt_crowd: list
    gt_base_ignore: list  # crowd, or keypoint mode without usable OKS
    prediction_ids: list
    prediction_scores: list
    similarity: np.ndarray  # (n_predictions, n_gts)
    matches: dict = field(default_factory=dict)  # threshold -> [MatchEntry]
    prediction_ignored: dict = field(default_factory=dict)  # threshold -> [bool]

    @property
    def n_predictions(self) -> int:
        return len(self.prediction_ids)

    @property
    def n_gts(self) -> int:
        return len(self.gt_ids)


def assign(table: MatchTable, threshold: float, gt_active) -> tuple:
    """Greedy assignment at one threshold under an activity mask.

    gt_active[j] False marks gt j as ignore: it can still absorb predictions
    (without them counting as true or false positives) but contributes no
    recall. Predictions are visited in descending score; each takes the
    active unmatched gt of highest similarity >= threshold, falling back to
    ignore gts. Equal similarity goes to the lowest gt id. Crowd gts absorb
    any number of predictions.

    Returns (matched_gt_index per prediction with -1 for none,
    prediction_ignored flags, gt_matched flags).
    """
    n_pred, n_gt = table.n_predictions, table.n_gts
    matched = [-1] * n_pred
    ignored = [False] * n_pred
    gt_taken = [False] * n_gt
    # gts are stored in ascending id order, so replacing only on strictly
    # better similarity breaks ties toward the lowest annotation id.
    for p in range(n_pred):
        best, best_sim = -1, -1.0
        best_ignore, best_ignore_sim = -1, -1.0
        for j in range(n_gt):
            if gt_taken[j] and not table.gt_crowd[j]:
                continue
            sim = float(table.similarity[p, j])
            if sim < threshold:
                continue
            if gt_active[j]:
                if sim > best_sim:
                    best, best_sim = j, sim
            elif sim > best_ignore_sim:
                best_ignore, best_ignore_sim = j, sim
        chosen = best if best >= 0 else best_ignore
        if chosen < 0:
            continue
        matched[p] = chosen
        ignored[p] = not gt_active[chosen]
        gt_taken[chosen] = True
    return matched, ignored, gt_taken


def match(predictions, ground_truths, config: EvalConfig, image_id=None) -> MatchTable:
    """Build the per-image match table for one image's records."""
    image_ids = {p.image_id for p in predictions} | {g.image_id for g in ground_truths}
    if len(image_ids) > 1:
        raise MetricError(f"records span multiple images: {sorted(image_ids)}")
    if image_ids:
        found = next(iter(image_ids))
        if image_id is not None and image_id != found:
            raise MetricError(f"records belong to image {found}, not {image_id}")
        image_id = found
    elif image_id is None:
        image_id = -1

    order = sorted(
        range(len(predictions)), key=lambda i: -predictions[i].score
    )[: config.max_detections]
    preds = [predictions[i] for i in order]

    gts = sorted(ground_truths, key=lambda g: g.id)
    base_ignore = []
    for g in gts:
        ign = g.iscrowd
        if config.mode == "keypoint" and (g.visible_count() == 0 or g.area <= 0):
            ign = True
        base_ignore.append(ign)

    sim = np.zeros((len(preds), len(gts)))
    for p, pred in enumerate(preds):
        for j, g in enumerate(gts):
            if config.mode == "detection":
                sim[p, j] = iou(pred.bbox, g.bbox)
            elif g.visible_count() > 0 and g.area > 0:
                sim[p, j] = oks(pred, g, config.oks_falloff)
            else:
                sim[p, j] = _oks_proximity(pred, g, config.oks_falloff)

    table = MatchTable(
        image_id=image_id,
        mode=config.mode,
        thresholds=tuple(config.thresholds),
        gt_ids=[g.id for g in gts],
        gt_areas=[g.area for g in gts],
        gt_crowd=[g.iscrowd for g in gts],
        gt_base_ignore=base_ignore,
        prediction_ids=order,
        prediction_scores=[p.score for p in preds],
        similarity=sim,
    )
    active = [not ign for ign in base_ignore]
    for t in table.thresholds:
        matched, ignored, _ = assign(table, t, active)
        table.matches[t] = [
            MatchEntry(
                prediction_id=table.prediction_ids[p],
                gt_id=table.gt_ids[m] if m >= 0 else None,
                score=table.prediction_scores[p],
                similarity=float(table.similarity[p, m]) if m >= 0 else 0.0,
            )
            for p, m in enumerate(matched)
        ]
        table.prediction_ignored[t] = ignored
    return table


@dataclass
class MetricReport:
    mode: str
    ap: float
    ar: float
    per_range: dict  # label -> {"ap": float, "ar": float}
    n_ground_truths: int
    n_predictions: int
    subgroups: dict | None = None  # subgroup index -> metric value

    def to_dict(self) -> dict:
        out = {
            "mode": self.mode,
            "ap": self.ap,
            "ar": self.ar,
            "per_range": self.per_range,
            "n_ground_truths": self.n_ground_truths,
            "n_predictions": self.n_predictions,
        }
        if self.subgroups is not None:
            out["subgroups"] = {str(k): v for k, v in self.subgroups.items()}
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "MetricReport":
        subgroups = raw.get("subgroups")
        if subgroups is not None:
            subgroups = {int(k): v for k, v in subgroups.items()}
        return cls(
            mode=raw["mode"],
            ap=raw["ap"],
            ar=raw["ar"],
            per_range=raw["per_range"],
            n_ground_truths=raw["n_ground_truths"],
            n_predictions=raw["n_predictions"],
            subgroups=subgroups,
        )


def evaluate_selection(match_tables, config: EvalConfig, gt_active_fn) -> tuple:
    """AP and AR over the threshold grid for one gt selection.

    gt_active_fn(table, j) decides whether gt j of a table counts; inactive
    gts become ignore regions. Returns (ap, ar), each SENTINEL when the
    selection holds no active gts.
    """
    tables = sorted(match_tables, key=lambda t: t.image_id)
    active_masks = [
        [
            (not t.gt_base_ignore[j]) and gt_active_fn(t, j)
            for j in range(t.n_gts)
        ]
        for t in tables
    ]
    npig = sum(sum(mask) for mask in active_masks)
    if npig == 0:
        return SENTINEL, SENTINEL

    ap_per_t = []
    ar_per_t = []
    for t in config.thresholds:
        scores = []
        tps = []
        ignores = []
        for table, mask in zip(tables, active_masks):
            matched, ignored, _ = assign(table, t, mask)
            for p in range(table.n_predictions):
                scores.append(table.prediction_scores[p])
                tps.append(matched[p] >= 0 and not ignored[p])
                ignores.append(ignored[p])
        if not scores:
            ap_per_t.append(0.0)
            ar_per_t.append(0.0)
            continue
        order = np.argsort(-np.asarray(scores), kind="mergesort")
        tp_arr = np.asarray(tps)[order]
        ig_arr = np.asarray(ignores)[order]
        keep = ~ig_arr
        tp_cum = np.cumsum(tp_arr[keep].astype(np.float64))
        fp_cum = np.cumsum((~tp_arr[keep]).astype(np.float64))
        if tp_cum.size == 0:
            ap_per_t.append(0.0)
            ar_per_t.append(0.0)
            continue
        recall = tp_cum / npig
        precision = tp_cum / np.maximum(tp_cum + fp_cum, np.spacing(1))
        # Monotone non-increasing envelope, then 101-point sampling.
        envelope = np.maximum.accumulate(precision[::-1])[::-1]
        idx = np.searchsorted(recall, RECALL_SAMPLES, side="left")
        sampled = np.where(idx < envelope.size, envelope[np.minimum(idx, envelope.size - 1)], 0.0)
        ap_per_t.append(float(np.mean(sampled)))
        ar_per_t.append(float(recall[-1]))
    return float(np.mean(ap_per_t)), float(np.mean(ar_per_t))


def _range_predicate(lo: float, hi: float, label: str, pinned_sizes=None):
    if pinned_sizes is None:
        return lambda table, j: lo <= table.gt_areas[j] < hi
    return lambda table, j: pinned_sizes.get(table.gt_ids[j]) == label


def average_precision(
    match_tables, config: EvalConfig, pinned_sizes: dict | None = None
) -> MetricReport:
    """Accumulate match tables into an overall and per-area-range report.

    `pinned_sizes` (annotation id -> size label) replaces area-based range
    membership when given, so size subgroups stay fixed across rescaled
    evaluations of the same people.
    """
    tables = list(match_tables)
    overall_ap, overall_ar = evaluate_selection(tables, config, lambda t, j: True)
    per_range = {}
    for label, lo, hi in config.area_ranges:
        ap, ar = evaluate_selection(
            tables, config, _range_predicate(lo, hi, label, pinned_sizes)
        )
        per_range[label] = {"ap": ap, "ar": ar}
    n_gts = sum(
        sum(1 for ign in t.gt_base_ignore if not ign) for t in tables
    )
    n_preds = sum(t.n_predictions for t in tables)
    return MetricReport(
        mode=config.mode,
        ap=overall_ap,
        ar=overall_ar,
        per_range=per_range,
        n_ground_truths=n_gts,
        n_predictions=n_preds,
    )


def build_match_tables(dataset, records, config: EvalConfig) -> list:
    """Match a full run: one table per dataset image that has gts or records."""
    by_image: dict[int, list] = {}
    for rec in records:
        by_image.setdefault(rec.image_id, []).append(rec)
    tables = []
    for img in dataset.images:
        gts = dataset.annotations_for_image(img.id)
        preds = by_image.get(img.id, [])
        if not gts and not preds:
            continue
        tables.append(match(preds, gts, config, image_id=img.id))
    return tables


def detection_rate(match_tables, iou_threshold: float = 0.5, gt_active_fn=None) -> float:
    """Fraction of non-ignore gts matched by any prediction at the threshold.

    Score-agnostic recall: every prediction in the tables participates, only
    the match/no-match outcome per gt counts. `gt_active_fn` restricts which
    gts are counted (the rest become ignore regions). SENTINEL with no gts.
    """
    matched_count = 0
    total = 0
    for table in sorted(match_tables, key=lambda t: t.image_id):
        active = [
            not table.gt_base_ignore[j]
            and (gt_active_fn is None or gt_active_fn(table, j))
            for j in range(table.n_gts)
        ]
        _, _, gt_taken = assign(table, iou_threshold, active)
        for j in range(table.n_gts):
            if not active[j]:
                continue
            total += 1
            if gt_taken[j]:
                matched_count += 1
    if total == 0:
        return SENTINEL
    return matched_count / total
