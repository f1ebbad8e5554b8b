"""Downstream evaluation metrics.

Pose: mean per-joint position error and PCKh@50 (threshold half of the head
size, where head size is 0.6x the head-to-shoulder-midpoint distance; the
comparison is strict less-than). Detection: PASCAL-VOC-style evaluation with
confidence filtering, greedy NMS, confidence-ordered matching, per-difficulty
recalls, and don't-care regions that absorb detections without counting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volumes import EventStream

GT_LABELS = ("easy", "hard", "dont_care")


# ---------------------------------------------------------------------------
# pose

@dataclass
class PoseSet:
    predicted: np.ndarray  # [J, 2] pixel coordinates
    truth: np.ndarray      # [J, 2]
    head_index: int
    shoulder_indices: tuple[int, int]

    def __post_init__(self):
        self.predicted = np.asarray(self.predicted, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.float64)
        if self.predicted.shape != self.truth.shape or self.predicted.ndim != 2 \
                or self.predicted.shape[1] != 2:
            raise ValueError(
                f"joint arrays must both be [J, 2], got {self.predicted.shape} "
                f"vs {self.truth.shape}")


def mpjpe(predicted: np.ndarray, truth: np.ndarray) -> float:
    """Mean Euclidean distance between predicted and true joints, in pixels."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValueError(f"joint arrays differ: {predicted.shape} vs {truth.shape}")
    return float(np.linalg.norm(predicted - truth, axis=-1).mean())


def pckh50(predicted: np.ndarray, truth: np.ndarray, head_index: int,
           shoulder_indices: tuple[int, int]) -> float:
    """Percentage of joints with error strictly below 50% of the head size."""
    predicted = np.asarray(predicted, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if predicted.shape != truth.shape:
        raise ValueError(f"joint arrays differ: {predicted.shape} vs {truth.shape}")
    a, b = shoulder_indices
    mid_shoulders = 0.5 * (truth[a] + truth[b])
    head_size = 0.6 * np.linalg.norm(truth[head_index] - mid_shoulders)
    threshold = 0.5 * head_size
    errors = np.linalg.norm(predicted - truth, axis=-1)
    return float((errors < threshold).mean() * 100.0)


# ---------------------------------------------------------------------------
# detection

@dataclass
class DetectionSet:
    pred_boxes: np.ndarray   # [N, 4] as (x1, y1, x2, y2)
    pred_scores: np.ndarray  # [N] confidences in [0, 1]
    gt_boxes: np.ndarray     # [M, 4]
    gt_labels: list[str]     # easy | hard | dont_care

    def __post_init__(self):
        self.pred_boxes = np.asarray(self.pred_boxes, dtype=np.float64).reshape(-1, 4)
        self.pred_scores = np.asarray(self.pred_scores, dtype=np.float64).reshape(-1)
        self.gt_boxes = np.asarray(self.gt_boxes, dtype=np.float64).reshape(-1, 4)
        if len(self.pred_boxes) != len(self.pred_scores):
            raise ValueError("prediction boxes and scores must align")
        if len(self.gt_boxes) != len(self.gt_labels):
            raise ValueError("ground-truth boxes and labels must align")
        for boxes, name in ((self.pred_boxes, "prediction"), (self.gt_boxes, "ground-truth")):
            if len(boxes) and (np.any(boxes[:, 0] >= boxes[:, 2])
                               or np.any(boxes[:, 1] >= boxes[:, 3])):
                raise ValueError(f"malformed {name} box: need x1 < x2 and y1 < y2")
        if len(self.pred_scores) and (np.any(self.pred_scores < 0)
                                      or np.any(self.pred_scores > 1)):
            raise ValueError("confidences must lie in [0, 1]")
        bad = [l for l in self.gt_labels if l not in GT_LABELS]
        if bad:
            raise ValueError(f"unknown ground-truth labels {bad}; expected {GT_LABELS}")


@dataclass
class DetectionEvalConfig:
    conf_thresh: float = 0.2
    nms_iou: float = 0.2
    match_iou: float = 0.5
    eleven_point_ap: bool = False


@dataclass
class DetectionMetrics:
    precision: float
    recall_easy: float
    recall_hard: float
    recall_combined: float
    ap: float
    f1: float
    # flags: False when the corresponding denominator was empty (value reported as 0)
    precision_defined: bool = True
    easy_defined: bool = True
    hard_defined: bool = True
    combined_defined: bool = True
    # cumulative PR points in confidence order (for curve rendering)
    pr_recall: np.ndarray | None = field(default=None, repr=False, compare=False)
    pr_precision: np.ndarray | None = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall_easy": self.recall_easy,
            "recall_hard": self.recall_hard,
            "recall_combined": self.recall_combined,
            "ap": self.ap,
            "f1": self.f1,
        }


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between [N, 4] and [M, 4] boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    x1 = np.maximum(a[:, None, 0], b[None, :, 0])
    y1 = np.maximum(a[:, None, 1], b[None, :, 1])
    x2 = np.minimum(a[:, None, 2], b[None, :, 2])
    y2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(x2 - x1, 0, None) * np.clip(y2 - y1, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    """Greedy non-maximum suppression; returns kept indices, highest score first.

    A box is suppressed when its IoU with an already-kept box exceeds
    iou_thresh.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.argsort(-scores, kind="stable")
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        if order.size == 1:
            break
        rest = order[1:]
        ious = box_iou(boxes[i][None], boxes[rest])[0]
        order = rest[ious <= iou_thresh]
    return np.array(keep, dtype=np.int64)


def _average_precision(recall: np.ndarray, precision: np.ndarray,
                       eleven_point: bool) -> float:
    if eleven_point:
        total = 0.0
        for r in np.linspace(0, 1, 11):
            mask = recall >= r
            total += precision[mask].max() if mask.any() else 0.0
        return total / 11.0
    r = np.concatenate([[0.0], recall, [1.0]])
    p = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(p) - 2, -1, -1):
        p[i] = max(p[i], p[i + 1])
    changes = np.flatnonzero(r[1:] != r[:-1]) + 1
    return float(np.sum((r[changes] - r[changes - 1]) * p[changes]))


def voc_detection_eval(dset: DetectionSet,
                       config: DetectionEvalConfig | None = None) -> DetectionMetrics:
    """Precision/recall/AP/F1 over one detection set.

    Pipeline: drop detections below the confidence threshold, apply NMS,
    then match detections to ground truth in confidence order at the match
    IoU. A detection whose best overlap is a don't-care region is ignored;
    recalls are computed per difficulty and combined over easy + hard.
    """
    cfg = config or DetectionEvalConfig()
    keep = dset.pred_scores >= cfg.conf_thresh
    boxes = dset.pred_boxes[keep]
    scores = dset.pred_scores[keep]
    if len(boxes):
        kept = nms(boxes, scores, cfg.nms_iou)
        boxes, scores = boxes[kept], scores[kept]

    labels = np.asarray(dset.gt_labels)
    n_easy = int(np.sum(labels == "easy"))
    n_hard = int(np.sum(labels == "hard"))
    n_pos = n_easy + n_hard

    order = np.argsort(-scores, kind="stable")
    gt_matched = np.zeros(len(dset.gt_boxes), dtype=bool)
    outcomes = []          # per detection in confidence order: tp | fp | ignore
    matched_labels = []    # label of the matched ground truth for each tp
    ious = box_iou(boxes, dset.gt_boxes) if len(boxes) and len(dset.gt_boxes) else None
    for i in order:
        if ious is None:
            outcomes.append("fp")
            continue
        j = int(np.argmax(ious[i]))
        if ious[i, j] >= cfg.match_iou:
            if labels[j] == "dont_care":
                outcomes.append("ignore")
            elif not gt_matched[j]:
                gt_matched[j] = True
                outcomes.append("tp")
                matched_labels.append(labels[j])
            else:
                outcomes.append("fp")
        else:
            outcomes.append("fp")

    counted = [o for o in outcomes if o != "ignore"]
    tp = counted.count("tp")
    fp = counted.count("fp")
    tp_easy = matched_labels.count("easy")
    tp_hard = matched_labels.count("hard")

    precision_defined = tp + fp > 0
    precision = tp / (tp + fp) if precision_defined else 0.0
    recall_easy = tp_easy / n_easy if n_easy else 0.0
    recall_hard = tp_hard / n_hard if n_hard else 0.0
    recall_combined = tp / n_pos if n_pos else 0.0

    pr_recall = pr_precision = None
    if n_pos and counted:
        flags = np.array([o == "tp" for o in counted], dtype=np.float64)
        tp_cum = np.cumsum(flags)
        fp_cum = np.cumsum(1.0 - flags)
        pr_recall = tp_cum / n_pos
        pr_precision = tp_cum / (tp_cum + fp_cum)
        ap = _average_precision(pr_recall, pr_precision, cfg.eleven_point_ap)
    else:
        ap = 0.0

    pr_sum = precision + recall_combined
    f1 = 2 * precision * recall_combined / pr_sum if pr_sum > 0 else 0.0
    return DetectionMetrics(
        precision=precision,
        recall_easy=recall_easy,
        recall_hard=recall_hard,
        recall_combined=recall_combined,
        ap=ap,
        f1=f1,
        precision_defined=precision_defined,
        easy_defined=n_easy > 0,
        hard_defined=n_hard > 0,
        combined_defined=n_pos > 0,
        pr_recall=pr_recall,
        pr_precision=pr_precision,
    )


# ---------------------------------------------------------------------------
# event-stream chunking (fixed-count windows)

def split_into_chunks(stream: EventStream, chunk_size: int = 7500) -> list[EventStream]:
    """Split a stream into consecutive fixed-count chunks (last may be short)."""
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    chunks = []
    for start in range(0, len(stream), chunk_size):
        stop = min(start + chunk_size, len(stream))
        chunks.append(EventStream(stream.x[start:stop], stream.y[start:stop],
                                  stream.t[start:stop], stream.p[start:stop],
                                  stream.width, stream.height))
    return chunks


# ---------------------------------------------------------------------------
# delimited files (documented columns)

def read_pose_file(path) -> np.ndarray:
    """Pose file: one `x y` line per joint, in joint order; '#' comments."""
    joints = []
    for lineno, raw in enumerate(open(path).read().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 2:
            raise ValueError(f"{path}:{lineno}: expected `x y`, got {line!r}")
        joints.append((float(fields[0]), float(fields[1])))
    if not joints:
        raise ValueError(f"{path}: no joints found")
    return np.asarray(joints, dtype=np.float64)


def read_detections_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Detection file: one `x1 y1 x2 y2 confidence` line per box."""
    boxes, scores = [], []
    for lineno, raw in enumerate(open(path).read().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ValueError(f"{path}:{lineno}: expected `x1 y1 x2 y2 conf`, got {line!r}")
        boxes.append([float(v) for v in fields[:4]])
        scores.append(float(fields[4]))
    return (np.asarray(boxes, dtype=np.float64).reshape(-1, 4),
            np.asarray(scores, dtype=np.float64))


def read_gt_boxes_file(path) -> tuple[np.ndarray, list[str]]:
    """Ground-truth file: one `x1 y1 x2 y2 label` line per box."""
    boxes, labels = [], []
    for lineno, raw in enumerate(open(path).read().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 5:
            raise ValueError(f"{path}:{lineno}: expected `x1 y1 x2 y2 label`, got {line!r}")
        boxes.append([float(v) for v in fields[:4]])
        labels.append(fields[4])
    return np.asarray(boxes, dtype=np.float64).reshape(-1, 4), labels
