"""
Instance and superpoint metrics against labeled ground-truth points

Predictions are transferred to ground-truth points by nearest neighbour; every metric is
then computed on ground-truth points only. All fractions are in [0, 1]; reports print
them multiplied by 100.
"""

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .core import ClassId, FloatArray, InstanceId, IntArray

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = (0.5, 0.75)


@dataclass(frozen=True, slots=True, eq=False)
class GroundTruth:
    """
    Labeled ground-truth points.

    Attributes:
        points: (N, 3) world points
        semantic_ids: (N,) class per point
        instance_ids: (N,) instance per point, 0 = no instance

    Raises:
        ValueError: On length mismatch or an instance spanning several classes
    """
    points: FloatArray
    semantic_ids: IntArray
    instance_ids: IntArray

    def __post_init__(self) -> None:
        n = len(self.points)
        if len(self.semantic_ids) != n or len(self.instance_ids) != n:
            raise ValueError("Invalid ground truth: points and labels differ in length")
        ids = np.asarray(self.instance_ids)
        sem = np.asarray(self.semantic_ids)
        labeled = ids > 0
        if labeled.any():
            pairs = np.unique(np.stack([ids[labeled], sem[labeled]], axis=1), axis=0)
            if np.unique(pairs[:, 0]).size != pairs.shape[0]:
                raise ValueError("Invalid ground truth: an instance carries several semantic ids")

    def __len__(self) -> int:
        return len(self.points)

    def instance_classes(self) -> dict[InstanceId, ClassId]:
        ids = np.asarray(self.instance_ids)
        sem = np.asarray(self.semantic_ids)
        labeled = ids > 0
        values, first = np.unique(ids[labeled], return_index=True)
        return {int(v): int(sem[labeled][i]) for v, i in zip(values, first, strict=True)}


@dataclass(frozen=True, slots=True, eq=False)
class Prediction:
    """
    Labeled predicted points or mesh vertices.

    Attributes:
        points: (M, 3) world points
        semantic_ids: (M,) class per point
        instance_ids: (M,) instance per point, 0 = none
        instance_scores: Instance -> confidence in [0, 1]
        instance_classes: Instance -> class; derived by majority vote when missing
        superpoint_ids: (M,) superpoint per point, -1 = none
    """
    points: FloatArray
    semantic_ids: IntArray
    instance_ids: IntArray
    instance_scores: Mapping[InstanceId, float] = field(default_factory=dict)
    instance_classes: Mapping[InstanceId, ClassId] = field(default_factory=dict)
    superpoint_ids: IntArray | None = None

    def __post_init__(self) -> None:
        bad = {i: s for i, s in self.instance_scores.items() if not 0.0 <= s <= 1.0}
        if bad:
            raise ValueError(f"Invalid prediction: confidences outside [0, 1] for instances {sorted(bad)}")

    def class_of(self, instance: InstanceId) -> ClassId:
        if instance in self.instance_classes:
            return self.instance_classes[instance]
        sem = np.asarray(self.semantic_ids)[np.asarray(self.instance_ids) == instance]
        if sem.size == 0:
            return 0
        values, counts = np.unique(sem, return_counts=True)
        return int(values[np.argmax(counts)])


@dataclass(frozen=True, slots=True, eq=False)
class TransferredLabels:
    """Prediction labels carried onto every ground-truth point (0 / -1 where unmatched)"""
    semantic_ids: IntArray
    instance_ids: IntArray
    superpoint_ids: IntArray
    matched: NDArray[np.bool_]


def transfer_labels(prediction: Prediction, gt: GroundTruth, max_distance: float = 0.03) -> TransferredLabels:
    """Nearest predicted point within max_distance of each ground-truth point"""
    n = len(gt)
    semantic = np.zeros(n, dtype=np.int64)
    instance = np.zeros(n, dtype=np.int64)
    superpoint = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(prediction.points) == 0:
        return TransferredLabels(semantic, instance, superpoint, np.zeros(n, dtype=bool))
    distances, index = cKDTree(np.asarray(prediction.points)).query(
        np.asarray(gt.points), k=1, distance_upper_bound=max_distance
    )
    matched = np.isfinite(distances)
    semantic[matched] = np.asarray(prediction.semantic_ids)[index[matched]]
    instance[matched] = np.asarray(prediction.instance_ids)[index[matched]]
    if prediction.superpoint_ids is not None:
        superpoint[matched] = np.asarray(prediction.superpoint_ids)[index[matched]]
    return TransferredLabels(semantic, instance, superpoint, matched)


def instance_iou(pred: NDArray[np.bool_] | set[int], gt: NDArray[np.bool_] | set[int]) -> float:
    """|pred ∩ gt| / |pred ∪ gt| for boolean masks or index sets, 0 for two empty sets"""
    if isinstance(pred, set) or isinstance(gt, set):
        a, b = set(pred), set(gt)
        union = len(a | b)
        return len(a & b) / union if union else 0.0
    a = np.asarray(pred, dtype=bool)
    b = np.asarray(gt, dtype=bool)
    union = int(np.count_nonzero(a | b))
    return int(np.count_nonzero(a & b)) / union if union else 0.0


@dataclass(frozen=True, slots=True, eq=False)
class ClassMatching:
    """
    IoU table of one class.

    Attributes:
        gt_ids: Ground-truth instances of the class
        pred_ids: Predicted instances of the class
        scores: Confidence per predicted instance
        iou: (len(gt_ids), len(pred_ids)) IoU matrix
    """
    gt_ids: tuple[InstanceId, ...]
    pred_ids: tuple[InstanceId, ...]
    scores: tuple[float, ...]
    iou: FloatArray

    def ranked(self) -> list[int]:
        """Prediction columns by decreasing score, instance id on ties"""
        return sorted(range(len(self.pred_ids)), key=lambda j: (-self.scores[j], self.pred_ids[j]))


def _overlap_counts(a: IntArray, b: IntArray) -> dict[tuple[int, int], int]:
    keep = (a > 0) & (b > 0)
    if not keep.any():
        return {}
    pairs, counts = np.unique(np.stack([a[keep], b[keep]], axis=1), axis=0, return_counts=True)
    return {(int(p[0]), int(p[1])): int(c) for p, c in zip(pairs, counts, strict=True)}


def build_matchings(
    gt: GroundTruth,
    transferred: TransferredLabels,
    prediction: Prediction,
    classes: Iterable[ClassId] | None = None,
) -> dict[ClassId, ClassMatching]:
    """
    IoU tables per evaluated class.

    Predicted instance point sets are taken on ground-truth points after transfer.
    Classes default to every class with a ground-truth instance.
    """
    gt_ids = np.asarray(gt.instance_ids)
    pred_ids = transferred.instance_ids
    gt_classes = gt.instance_classes()
    evaluated = sorted(set(classes) if classes is not None else set(gt_classes.values()))

    gt_sizes = dict(zip(*np.unique(gt_ids[gt_ids > 0], return_counts=True), strict=True))
    pred_sizes = dict(zip(*np.unique(pred_ids[pred_ids > 0], return_counts=True), strict=True))
    inter = _overlap_counts(gt_ids, pred_ids)
    pred_classes = {int(p): prediction.class_of(int(p)) for p in pred_sizes}

    matchings: dict[ClassId, ClassMatching] = {}
    for category in evaluated:
        g_list = tuple(sorted(g for g, c in gt_classes.items() if c == category))
        p_list = tuple(sorted(p for p, c in pred_classes.items() if c == category))
        iou = np.zeros((len(g_list), len(p_list)))
        for i, g in enumerate(g_list):
            for j, p in enumerate(p_list):
                shared = inter.get((g, p), 0)
                if shared:
                    iou[i, j] = shared / (gt_sizes[g] + pred_sizes[p] - shared)
        scores = tuple(float(prediction.instance_scores.get(p, 1.0)) for p in p_list)
        matchings[category] = ClassMatching(g_list, p_list, scores, iou)
    return matchings


def _greedy_matches(matching: ClassMatching, threshold: float) -> list[bool]:
    """TP flag per prediction in ranked order (one-to-one, IoU >= threshold)"""
    used: set[int] = set()
    flags: list[bool] = []
    for j in matching.ranked():
        best_i, best_iou = -1, -1.0
        for i in range(len(matching.gt_ids)):
            value = matching.iou[i, j]
            if i not in used and value >= threshold and value > best_iou:
                best_i, best_iou = i, value
        if best_i >= 0:
            used.add(best_i)
        flags.append(best_i >= 0)
    return flags


def average_precision(matching: ClassMatching, threshold: float) -> float:
    """All-point interpolated AP of one class"""
    n_gt = len(matching.gt_ids)
    if n_gt == 0:
        return 0.0
    flags = np.array(_greedy_matches(matching, threshold), dtype=bool)
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(~flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def mean_average_precision(
    matchings: Mapping[ClassId, ClassMatching], threshold: float = 0.5
) -> tuple[dict[ClassId, float], float]:
    """Per-class AP and their mean over classes with at least one ground-truth instance"""
    per_class = {c: average_precision(m, threshold) for c, m in matchings.items() if m.gt_ids}
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def count_true_positives(matchings: Mapping[ClassId, ClassMatching], threshold: float = 0.5) -> int:
    """Class-summed one-to-one matches at IoU >= threshold"""
    return sum(sum(_greedy_matches(m, threshold)) for m in matchings.values())


def class_panoptic_quality(matching: ClassMatching, threshold: float) -> float | None:
    """Σ_TP IoU / (|TP| + |FP| / 2 + |FN| / 2); None when the class has no instance at all"""
    n_gt, n_pred = len(matching.gt_ids), len(matching.pred_ids)
    if n_gt + n_pred == 0:
        return None
    candidates = sorted(
        ((matching.iou[i, j], i, j) for i in range(n_gt) for j in range(n_pred) if matching.iou[i, j] > threshold),
        key=lambda item: (-item[0], item[1], item[2]),
    )
    used_g: set[int] = set()
    used_p: set[int] = set()
    total = 0.0
    for value, i, j in candidates:
        if i in used_g or j in used_p:
            continue
        used_g.add(i)
        used_p.add(j)
        total += value
    tp = len(used_g)
    return total / (tp + 0.5 * (n_pred - tp) + 0.5 * (n_gt - tp))


def panoptic_quality(
    matchings: Mapping[ClassId, ClassMatching], threshold: float = 0.5
) -> tuple[dict[ClassId, float], float]:
    """Per-class PQ and their mean over classes with any instance"""
    per_class: dict[ClassId, float] = {}
    for c, m in matchings.items():
        value = class_panoptic_quality(m, threshold)
        if value is not None:
            per_class[c] = value
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return per_class, mean


def superpoint_iou_per_instance(gt_instances: IntArray, superpoints: IntArray) -> dict[InstanceId, float]:
    """Σ over superpoints of IoU(L_S, o), for every ground-truth instance o"""
    gt_instances = np.asarray(gt_instances)
    superpoints = np.asarray(superpoints)
    gt_sizes = dict(zip(*np.unique(gt_instances[gt_instances > 0], return_counts=True), strict=True))
    sp_sizes = dict(zip(*np.unique(superpoints[superpoints >= 0], return_counts=True), strict=True))
    keep = (gt_instances > 0) & (superpoints >= 0)
    result = {int(g): 0.0 for g in gt_sizes}
    if keep.any():
        pairs, counts = np.unique(np.stack([gt_instances[keep], superpoints[keep]], axis=1), axis=0, return_counts=True)
        for (g, s), shared in zip(pairs.tolist(), counts.tolist(), strict=True):
            result[g] += shared / (gt_sizes[g] + sp_sizes[s] - shared)
    return result


def superpoint_iou(gt_instances: IntArray, superpoints: IntArray) -> float:
    """IoU_LS: mean over ground-truth instances of the summed superpoint IoUs"""
    per_instance = superpoint_iou_per_instance(gt_instances, superpoints)
    return float(np.mean(list(per_instance.values()))) if per_instance else 0.0


@dataclass(frozen=True, slots=True)
class ClassMetrics:
    category: ClassId
    ap50: float
    ap75: float
    ntp50: int
    ntp75: int
    pq50: float
    pq75: float
    iou_ls: float


@dataclass(frozen=True, slots=True)
class MetricsReport:
    """Per-class records plus class-averaged aggregates, all fractions in [0, 1]"""
    classes: tuple[ClassMetrics, ...]
    map50: float
    map75: float
    ntp50: int
    ntp75: int
    pq50: float
    pq75: float
    iou_ls: float
    names: Mapping[ClassId, str] = field(default_factory=dict)

    def as_dict(self) -> dict[str, float]:
        return {
            "map50": self.map50, "map75": self.map75, "ntp50": float(self.ntp50), "ntp75": float(self.ntp75),
            "pq50": self.pq50, "pq75": self.pq75, "iou_ls": self.iou_ls,
        }

    def to_text(self) -> str:
        """Metrics document: one line per class plus the aggregate, percentages for AP / PQ / IoU_LS"""
        lines = ["# class name ap50 ap75 ntp50 ntp75 pq50 pq75 iou_ls"]
        for m in self.classes:
            name = self.names.get(m.category, f"class_{m.category}")
            lines.append(
                f"{m.category} {name} {100 * m.ap50:.2f} {100 * m.ap75:.2f} {m.ntp50} {m.ntp75} "
                f"{100 * m.pq50:.2f} {100 * m.pq75:.2f} {100 * m.iou_ls:.2f}"
            )
        lines.append(
            f"all mean {100 * self.map50:.2f} {100 * self.map75:.2f} {self.ntp50} {self.ntp75} "
            f"{100 * self.pq50:.2f} {100 * self.pq75:.2f} {100 * self.iou_ls:.2f}"
        )
        return "\n".join(lines) + "\n"


def evaluate_predictions(
    prediction: Prediction,
    gt: GroundTruth,
    classes: Iterable[ClassId] | None = None,
    transfer_distance: float = 0.03,
    names: Mapping[ClassId, str] | None = None,
) -> MetricsReport:
    """Full metric record at IoU 0.5 and 0.75"""
    transferred = transfer_labels(prediction, gt, transfer_distance)
    matchings = build_matchings(gt, transferred, prediction, classes)
    ap50, map50 = mean_average_precision(matchings, 0.5)
    ap75, map75 = mean_average_precision(matchings, 0.75)
    pq50, mean_pq50 = panoptic_quality(matchings, 0.5)
    pq75, mean_pq75 = panoptic_quality(matchings, 0.75)

    gt_ids = np.asarray(gt.instance_ids)
    evaluated = set(matchings)
    gt_classes = gt.instance_classes()
    in_scope = np.isin(gt_ids, [g for g, c in gt_classes.items() if c in evaluated])
    per_instance = superpoint_iou_per_instance(np.where(in_scope, gt_ids, 0), transferred.superpoint_ids)

    rows = []
    for category, matching in matchings.items():
        values = [per_instance[g] for g in matching.gt_ids if g in per_instance]
        rows.append(ClassMetrics(
            category=category,
            ap50=ap50.get(category, 0.0),
            ap75=ap75.get(category, 0.0),
            ntp50=sum(_greedy_matches(matching, 0.5)),
            ntp75=sum(_greedy_matches(matching, 0.75)),
            pq50=pq50.get(category, 0.0),
            pq75=pq75.get(category, 0.0),
            iou_ls=float(np.mean(values)) if values else 0.0,
        ))
    report = MetricsReport(
        classes=tuple(rows),
        map50=map50,
        map75=map75,
        ntp50=count_true_positives(matchings, 0.5),
        ntp75=count_true_positives(matchings, 0.75),
        pq50=mean_pq50,
        pq75=mean_pq75,
        iou_ls=float(np.mean(list(per_instance.values()))) if per_instance else 0.0,
        names=dict(names or {}),
    )
    logger.debug(f"Evaluated {len(gt)} GT points over {len(matchings)} classes: mAP50={100 * map50:.2f}")
    return report
