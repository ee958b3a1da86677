"""Evaluation protocol: detection IoU and per-angle pose MAE.

Predictions are matched to ground truth greedily by descending confidence;
a prediction claims its best-overlapping free ground truth when the IoU
reaches the match threshold.  Detection quality is the mean IoU over ground
truths with misses counted as zero.  Pose quality is the mean absolute
per-angle error over matched pairs; vector-base predictions are first
projected to the nearest proper rotation before angles are read off.

Published full-scale benchmark figures are kept in REFERENCE_RESULTS for
context only; desk-scale runs make no attempt to reproduce them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import UndefinedMetricError
from .grid import Annotation, Detection, GroundTruth, iou
from .losses import LossWeights
from .rotation import (
    EulerAngles,
    angular_error,
    matrix_from_pose_vectors,
    matrix_to_euler,
    nearest_rotation,
)

DEFAULT_MATCH_IOU = 0.5

# Full-scale results on public benchmarks (BIWI, CMU); reference metadata only.
REFERENCE_RESULTS = {
    "biwi_300wlp_vector": {"yaw": 4.62, "pitch": 4.29, "roll": 4.52, "mae": 4.48},
    "biwi_300wlp_euler": {"yaw": 4.64, "pitch": 7.23, "roll": 6.23, "mae": 6.03},
    "biwi_split_v1": {"iou": 63.8, "yaw": 4.53, "pitch": 4.6, "roll": 3.47},
    "biwi_split_v1_tanh": {"iou": 73.4, "yaw": 5.49, "pitch": 3.92, "roll": 3.21},
    "biwi_split_v2_euler": {"iou": 60.72, "yaw": 6.02, "pitch": 5.33, "roll": 5.11},
    "biwi_split_v2_vector": {"iou": 63.6, "yaw": 5.33, "pitch": 3.9, "roll": 3.28},
    "cmu_euler": {"iou": 59.07, "yaw": 11.49, "pitch": 13.26, "roll": 9.45},
    "cmu_vector": {"iou": 62.31, "yaw": 9.55, "pitch": 11.29, "roll": 8.32},
}


@dataclass(frozen=True)
class EvalConfig:
    """Matching rule plus provenance recorded into every report."""

    match_iou_threshold: float = DEFAULT_MATCH_IOU
    pose_params: int = 9
    box_activation: str = "sigmoid"
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def decisions(self) -> dict:
        return {
            "match_iou_threshold": self.match_iou_threshold,
            "miss_counts_as_zero_iou": True,
            "pose_params": self.pose_params,
            "box_activation": self.box_activation,
            "loss_weights": {
                "lambda_xy": self.loss_weights.lambda_xy,
                "lambda_wh": self.loss_weights.lambda_wh,
                "lambda_cls": self.loss_weights.lambda_cls,
                "lambda_obj": self.loss_weights.lambda_obj,
                "alpha": self.loss_weights.alpha,
            },
        }


@dataclass(frozen=True)
class EvalReport:
    """Aggregate metrics over a dataset; angle fields are None when nothing
    matched (absent, never reported as zero)."""

    mean_iou: float
    mae_yaw: float | None
    mae_pitch: float | None
    mae_roll: float | None
    mae_avg: float | None
    matched_count: int
    missed_count: int
    spurious_count: int
    decisions: dict = field(default_factory=dict)

    def __post_init__(self):
        maes = (self.mae_yaw, self.mae_pitch, self.mae_roll, self.mae_avg)
        present = [m for m in maes if m is not None]
        if present and len(present) != 4:
            raise ValueError("angle MAE fields must be all present or all absent")
        if self.mae_avg is not None:
            expected = (self.mae_yaw + self.mae_pitch + self.mae_roll) / 3.0
            if abs(self.mae_avg - expected) > 1e-12:
                raise ValueError("mae_avg must equal the mean of the three angles")

    def to_dict(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "mae_yaw": self.mae_yaw,
            "mae_pitch": self.mae_pitch,
            "mae_roll": self.mae_roll,
            "mae_avg": self.mae_avg,
            "matched_count": self.matched_count,
            "missed_count": self.missed_count,
            "spurious_count": self.spurious_count,
            "decisions": dict(self.decisions),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            mean_iou=float(d["mean_iou"]),
            mae_yaw=None if d["mae_yaw"] is None else float(d["mae_yaw"]),
            mae_pitch=None if d["mae_pitch"] is None else float(d["mae_pitch"]),
            mae_roll=None if d["mae_roll"] is None else float(d["mae_roll"]),
            mae_avg=None if d["mae_avg"] is None else float(d["mae_avg"]),
            matched_count=int(d["matched_count"]),
            missed_count=int(d["missed_count"]),
            spurious_count=int(d["spurious_count"]),
            decisions=dict(d.get("decisions", {})),
        )


@dataclass
class MatchResult:
    pairs: list  # [(Detection, GroundTruth), ...]
    unmatched_preds: list
    unmatched_gts: list
    pair_ious: list


def match_detections(preds, gts, iou_threshold: float = DEFAULT_MATCH_IOU) -> MatchResult:
    """One-to-one greedy matching by descending prediction confidence.

    Each prediction claims the still-unmatched ground truth of highest IoU,
    provided that IoU reaches the threshold.
    """
    gt_list = list(gts.objects) if isinstance(gts, Annotation) else list(gts)
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))
    taken = [False] * len(gt_list)
    pairs, pair_ious, unmatched_preds = [], [], []
    for i in order:
        pred = preds[i]
        best_iou, best_j = 0.0, None
        for j, gt in enumerate(gt_list):
            if taken[j]:
                continue
            v = iou(pred.box, gt.box)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j is not None and best_iou >= iou_threshold:
            taken[best_j] = True
            pairs.append((pred, gt_list[best_j]))
            pair_ious.append(best_iou)
        else:
            unmatched_preds.append(pred)
    unmatched_gts = [gt for j, gt in enumerate(gt_list) if not taken[j]]
    return MatchResult(pairs, unmatched_preds, unmatched_gts, pair_ious)


def predicted_angles(det: Detection, pose_params: int) -> EulerAngles:
    """Angles from a detection's pose payload.

    Vector-base payloads are assembled into a matrix, projected to the
    nearest proper rotation, and converted; Euler payloads pass through.
    """
    if pose_params == 9:
        m = matrix_from_pose_vectors(det.pose)
        return matrix_to_euler(nearest_rotation(m))
    return det.pose


def pose_mae(pairs, pose_params: int) -> tuple[float, float, float]:
    """Mean absolute per-angle error (yaw, pitch, roll) over matched pairs."""
    if not pairs:
        raise UndefinedMetricError("pose MAE is undefined with no matched pairs")
    errs = np.zeros(3)
    for pred, gt in pairs:
        angles = predicted_angles(pred, pose_params)
        errs += np.array(angular_error(angles, gt.pose.normalized()))
    errs /= len(pairs)
    return (float(errs[0]), float(errs[1]), float(errs[2]))


def detection_iou_score(preds, gts, iou_threshold: float = DEFAULT_MATCH_IOU) -> float:
    """Mean IoU over ground truths; unmatched ground truths score zero."""
    gt_list = list(gts.objects) if isinstance(gts, Annotation) else list(gts)
    if not gt_list:
        raise UndefinedMetricError("IoU score is undefined with no ground truths")
    res = match_detections(preds, gt_list, iou_threshold)
    return float(sum(res.pair_ious)) / len(gt_list)


def evaluate(preds_by_image, annotations, config: EvalConfig = EvalConfig()) -> EvalReport:
    """Aggregate detection IoU and pose MAE over a dataset.

    ``preds_by_image`` maps image ids to NMS-filtered detection lists and
    must cover exactly the annotated ids.
    """
    ann_ids = [a.image_id for a in annotations]
    if sorted(ann_ids) != sorted(preds_by_image.keys()):
        raise ValueError("prediction image ids do not match annotation ids")
    if len(set(ann_ids)) != len(ann_ids):
        raise ValueError("duplicate image ids in annotations")

    total_gts = 0
    iou_sum = 0.0
    err_sum = np.zeros(3)
    matched = missed = spurious = 0
    for ann in annotations:
        res = match_detections(preds_by_image[ann.image_id], ann, config.match_iou_threshold)
        total_gts += len(ann.objects)
        iou_sum += sum(res.pair_ious)
        matched += len(res.pairs)
        missed += len(res.unmatched_gts)
        spurious += len(res.unmatched_preds)
        for pred, gt in res.pairs:
            angles = predicted_angles(pred, config.pose_params)
            err_sum += np.array(angular_error(angles, gt.pose.normalized()))

    if total_gts == 0:
        raise UndefinedMetricError("evaluation is undefined with no ground truths")
    if matched > 0:
        maes = err_sum / matched
        mae_yaw, mae_pitch, mae_roll = (float(m) for m in maes)
        mae_avg = (mae_yaw + mae_pitch + mae_roll) / 3.0
    else:
        mae_yaw = mae_pitch = mae_roll = mae_avg = None
    return EvalReport(
        mean_iou=iou_sum / total_gts,
        mae_yaw=mae_yaw,
        mae_pitch=mae_pitch,
        mae_roll=mae_roll,
        mae_avg=mae_avg,
        matched_count=matched,
        missed_count=missed,
        spurious_count=spurious,
        decisions=config.decisions(),
    )
