"""Joint detection + pose grid codec.

The network output for one scale is a tensor of shape
``(batch, 3 * (5 + classes + pose_params), K, K)`` over a K x K cell grid
with 3 anchor boxes per cell.  Channels are laid out anchor-major: one
contiguous block of ``5 + classes + pose_params`` channels per anchor, in
the order

    tx, ty, tw, th, objectness, class scores..., pose values...

Box offsets tx, ty locate the center inside the cell, tw/th are log-scale
sizes relative to the anchor, and the pose block carries either the nine
rotation-matrix entries (three column vectors) or three normalized Euler
angles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import TensorStateError
from .rotation import EulerAngles, PoseVectors, euler_to_matrix

DEFAULT_ANCHORS = ((0.1, 0.14), (0.27, 0.36), (0.6, 0.78))
NUM_ANCHORS = 3
BOX_FIELDS = 5  # tx, ty, tw, th, objectness

# shape-IoU above this marks a non-assigned anchor slot as ignored
IGNORE_IOU_THRESHOLD = 0.5

# Euler-variant pose channels are normalized by these spans (degrees)
EULER_SCALES = (180.0, 90.0, 90.0)

_SATURATION_LOGIT = 12.0
_OFFSET_EPS = 1e-12


def channels_for(classes: int, pose_params: int) -> int:
    """Channel count of the joint output tensor: 3 * (5 + classes + pose)."""
    if classes < 1:
        raise ValueError(f"classes must be >= 1, got {classes}")
    if pose_params not in (3, 9):
        raise ValueError(f"pose_params must be 3 or 9, got {pose_params}")
    return NUM_ANCHORS * (BOX_FIELDS + classes + pose_params)


@dataclass(frozen=True)
class GridSpec:
    """Static description of one output grid."""

    size: int = 7
    anchors: tuple = DEFAULT_ANCHORS
    classes: int = 1
    pose_params: int = 9
    box_activation: str = "sigmoid"  # or "tanh"

    def __post_init__(self):
        if self.size < 1:
            raise ValueError(f"grid size must be >= 1, got {self.size}")
        if len(self.anchors) != NUM_ANCHORS:
            raise ValueError(f"exactly {NUM_ANCHORS} anchors required")
        for aw, ah in self.anchors:
            if not (aw > 0 and ah > 0 and math.isfinite(aw) and math.isfinite(ah)):
                raise ValueError(f"anchor sizes must be positive, got ({aw}, {ah})")
        if self.box_activation not in ("sigmoid", "tanh"):
            raise ValueError(f"unknown box activation {self.box_activation!r}")
        channels_for(self.classes, self.pose_params)  # validates both

    @property
    def block(self) -> int:
        """Channels per anchor."""
        return BOX_FIELDS + self.classes + self.pose_params

    @property
    def channels(self) -> int:
        return NUM_ANCHORS * self.block


@dataclass
class GridTensor:
    """Raw or activated grid output, shape (batch, channels, K, K)."""

    data: np.ndarray
    activated: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 4:
            raise ValueError(f"grid tensor must be 4-d, got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("grid tensor entries must be finite")


@dataclass(frozen=True)
class Detection:
    """One decoded box with its confidence, class and pose payload."""

    box: tuple  # (cx, cy, w, h), normalized to the image
    confidence: float
    class_id: int
    class_score: float
    pose: object  # PoseVectors (9 pose params) or EulerAngles (3)

    def __post_init__(self):
        cx, cy, w, h = self.box
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise ValueError(f"box center must lie in [0,1]^2, got ({cx}, {cy})")
        if not (w > 0 and h > 0):
            raise ValueError(f"box sizes must be positive, got ({w}, {h})")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError(f"confidence must be in (0,1), got {self.confidence}")


@dataclass(frozen=True)
class GroundTruth:
    """One annotated object: normalized box plus orientation."""

    box: tuple  # (cx, cy, w, h)
    pose: EulerAngles

    def __post_init__(self):
        cx, cy, w, h = self.box
        if not all(math.isfinite(v) for v in self.box):
            raise ValueError("box values must be finite")
        if not (0.0 <= cx <= 1.0 and 0.0 <= cy <= 1.0):
            raise ValueError(f"box center must lie in [0,1]^2, got ({cx}, {cy})")
        if not (w > 0 and h > 0):
            raise ValueError(f"box sizes must be positive, got ({w}, {h})")


@dataclass(frozen=True)
class Annotation:
    image_id: str
    objects: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))


@dataclass
class BoxTargets:
    """Training targets on the grid; all arrays batched (B, 3, K, K, ...).

    ``obj`` is 1 on assigned (cell, anchor) slots and 0 elsewhere; slots in
    ``ignore`` are excluded from the objectness loss.  ``cls`` rows are
    one-hot for positives and all-zero otherwise; ``pose`` rows likewise
    hold targets only at positives.
    """

    xy: np.ndarray  # (B, 3, K, K, 2) offsets in [0, 1]
    wh: np.ndarray  # (B, 3, K, K, 2) log-scale sizes
    obj: np.ndarray  # (B, 3, K, K) in {0, 1}
    ignore: np.ndarray  # (B, 3, K, K) bool
    cls: np.ndarray  # (B, 3, K, K, classes) one-hot
    pose: np.ndarray  # (B, 3, K, K, pose_params)

    @property
    def positive_count(self) -> int:
        return int(self.obj.sum())


@dataclass
class GridChannels:
    """Per-purpose views of a grid tensor, each shaped (B, 3, K, K, ...)."""

    xy: np.ndarray
    wh: np.ndarray
    obj: np.ndarray
    cls: np.ndarray
    pose: np.ndarray


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _check_shape(t: GridTensor, spec: GridSpec) -> None:
    b, c, h, w = t.data.shape
    if c != spec.channels or h != spec.size or w != spec.size:
        raise ValueError(
            f"tensor shape {t.data.shape} does not match grid spec "
            f"(channels={spec.channels}, size={spec.size})"
        )


def activate(raw: GridTensor, spec: GridSpec) -> GridTensor:
    """Apply output activations: sigmoid (or tanh) on offsets, sigmoid on
    objectness and class channels; size and pose channels stay raw."""
    if raw.activated:
        raise TensorStateError("tensor is already activated")
    _check_shape(raw, spec)
    b = raw.data.shape[0]
    k = spec.size
    blocks = raw.data.reshape(b, NUM_ANCHORS, spec.block, k, k).copy()
    if spec.box_activation == "tanh":
        blocks[:, :, 0:2] = np.tanh(blocks[:, :, 0:2])
    else:
        blocks[:, :, 0:2] = _sigmoid(blocks[:, :, 0:2])
    blocks[:, :, 4:5 + spec.classes] = _sigmoid(blocks[:, :, 4:5 + spec.classes])
    return GridTensor(blocks.reshape(b, spec.channels, k, k), activated=True)


def activation_backward(act: GridTensor, spec: GridSpec, d_act: np.ndarray) -> np.ndarray:
    """Chain a gradient w.r.t. the activated tensor back to raw logits."""
    if not act.activated:
        raise TensorStateError("activation_backward needs an activated tensor")
    _check_shape(act, spec)
    b = act.data.shape[0]
    k = spec.size
    a = act.data.reshape(b, NUM_ANCHORS, spec.block, k, k)
    g = np.array(d_act, dtype=float).reshape(b, NUM_ANCHORS, spec.block, k, k).copy()
    if spec.box_activation == "tanh":
        g[:, :, 0:2] *= 1.0 - a[:, :, 0:2] ** 2
    else:
        g[:, :, 0:2] *= a[:, :, 0:2] * (1.0 - a[:, :, 0:2])
    sig = a[:, :, 4:5 + spec.classes]
    g[:, :, 4:5 + spec.classes] *= sig * (1.0 - sig)
    return g.reshape(b, spec.channels, k, k)


def split_channels(t: GridTensor, spec: GridSpec) -> GridChannels:
    """Slice a grid tensor into purpose-specific arrays (B, 3, K, K, ...)."""
    _check_shape(t, spec)
    b = t.data.shape[0]
    k = spec.size
    blocks = t.data.reshape(b, NUM_ANCHORS, spec.block, k, k)
    return GridChannels(
        xy=np.moveaxis(blocks[:, :, 0:2], 2, -1),
        wh=np.moveaxis(blocks[:, :, 2:4], 2, -1),
        obj=blocks[:, :, 4],
        cls=np.moveaxis(blocks[:, :, 5:5 + spec.classes], 2, -1),
        pose=np.moveaxis(blocks[:, :, 5 + spec.classes:], 2, -1),
    )


def merge_channel_grads(grads: GridChannels, spec: GridSpec) -> np.ndarray:
    """Assemble per-purpose gradients back into a (B, C, K, K) array."""
    b = grads.obj.shape[0]
    k = spec.size
    out = np.zeros((b, NUM_ANCHORS, spec.block, k, k))
    out[:, :, 0:2] = np.moveaxis(grads.xy, -1, 2)
    out[:, :, 2:4] = np.moveaxis(grads.wh, -1, 2)
    out[:, :, 4] = grads.obj
    out[:, :, 5:5 + spec.classes] = np.moveaxis(grads.cls, -1, 2)
    out[:, :, 5 + spec.classes:] = np.moveaxis(grads.pose, -1, 2)
    return out.reshape(b, spec.channels, k, k)


def xy_to_offsets(xy: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Map activated center channels to cell offsets in [0, 1].

    Sigmoid outputs are offsets already; tanh outputs in (-1, 1) remap
    through (t + 1) / 2.
    """
    if spec.box_activation == "tanh":
        return (xy + 1.0) / 2.0
    return xy


def offset_grad_factor(spec: GridSpec) -> float:
    """d(offset)/d(activated xy) for the configured box activation."""
    return 0.5 if spec.box_activation == "tanh" else 1.0


def _pose_payload(values: np.ndarray, pose_params: int):
    if pose_params == 9:
        return PoseVectors(values[0:3].copy(), values[3:6].copy(), values[6:9].copy())
    angles = EulerAngles(
        values[0] * EULER_SCALES[0],
        values[1] * EULER_SCALES[1],
        values[2] * EULER_SCALES[2],
    )
    return angles.normalized()


def decode(act: GridTensor, spec: GridSpec, conf_threshold: float):
    """Decode an activated tensor into per-image detection lists.

    Every (cell, anchor) slot whose objectness reaches ``conf_threshold``
    yields one detection: center = (cell + offset) / K, size = anchor *
    exp(log-size).  Returns one list per batch element, cells scanned
    row-major with anchors innermost.
    """
    if not act.activated:
        raise TensorStateError("decode needs an activated tensor")
    _check_shape(act, spec)
    ch = split_channels(act, spec)
    k = spec.size
    anchors = np.asarray(spec.anchors, dtype=float)
    results = []
    for b in range(act.data.shape[0]):
        dets = []
        hits = np.argwhere(np.moveaxis(ch.obj[b], 0, -1) >= conf_threshold)
        for i, j, a in hits:
            tx, ty = xy_to_offsets(ch.xy[b, a, i, j], spec)
            tw, th = ch.wh[b, a, i, j]
            cls_scores = ch.cls[b, a, i, j]
            class_id = int(np.argmax(cls_scores))
            dets.append(
                Detection(
                    box=(
                        (j + tx) / k,
                        (i + ty) / k,
                        anchors[a, 0] * math.exp(tw),
                        anchors[a, 1] * math.exp(th),
                    ),
                    confidence=float(ch.obj[b, a, i, j]),
                    class_id=class_id,
                    class_score=float(cls_scores[class_id]),
                    pose=_pose_payload(ch.pose[b, a, i, j], spec.pose_params),
                )
            )
        results.append(dets)
    return results


def shape_iou(wh_a: tuple, wh_b: tuple) -> float:
    """IoU of two boxes aligned at the origin (size similarity only)."""
    inter = min(wh_a[0], wh_b[0]) * min(wh_a[1], wh_b[1])
    union = wh_a[0] * wh_a[1] + wh_b[0] * wh_b[1] - inter
    return inter / union


def _pose_target(pose: EulerAngles, pose_params: int) -> np.ndarray:
    angles = pose.normalized()
    if pose_params == 9:
        return euler_to_matrix(angles).m.T.reshape(-1)  # columns v1, v2, v3
    return np.array(
        [
            angles.yaw / EULER_SCALES[0],
            angles.pitch / EULER_SCALES[1],
            angles.roll / EULER_SCALES[2],
        ]
    )


def encode_targets(ann: Annotation, spec: GridSpec) -> BoxTargets:
    """Build grid training targets for a single annotated image (batch of 1).

    Each ground truth lands in the cell containing its center and the free
    anchor of best shape-IoU; larger boxes claim contested slots first and
    losers fall back to their next-best anchor.  Non-assigned anchors whose
    shape-IoU with a ground truth exceeds 0.5 are marked ignored.
    """
    k = spec.size
    xy = np.zeros((1, NUM_ANCHORS, k, k, 2))
    wh = np.zeros((1, NUM_ANCHORS, k, k, 2))
    obj = np.zeros((1, NUM_ANCHORS, k, k))
    ignore = np.zeros((1, NUM_ANCHORS, k, k), dtype=bool)
    cls = np.zeros((1, NUM_ANCHORS, k, k, spec.classes))
    pose = np.zeros((1, NUM_ANCHORS, k, k, spec.pose_params))

    order = sorted(
        range(len(ann.objects)),
        key=lambda idx: -ann.objects[idx].box[2] * ann.objects[idx].box[3],
    )
    cells = []
    for idx in order:
        gt = ann.objects[idx]
        cx, cy, w, h = gt.box
        j = min(int(cx * k), k - 1)
        i = min(int(cy * k), k - 1)
        ranked = np.argsort(
            [-shape_iou((w, h), anchor) for anchor in spec.anchors], kind="stable"
        )
        slot = next((a for a in ranked if obj[0, a, i, j] == 0), None)
        if slot is None:
            continue  # more ground truths than anchors in one cell
        a = int(slot)
        obj[0, a, i, j] = 1.0
        xy[0, a, i, j] = (cx * k - j, cy * k - i)
        wh[0, a, i, j] = (
            math.log(w / spec.anchors[a][0]),
            math.log(h / spec.anchors[a][1]),
        )
        cls[0, a, i, j, 0] = 1.0  # single object category: face
        pose[0, a, i, j] = _pose_target(gt.pose, spec.pose_params)
        cells.append((idx, i, j))

    for idx, i, j in cells:
        w, h = ann.objects[idx].box[2:4]
        for a, anchor in enumerate(spec.anchors):
            if obj[0, a, i, j] == 0 and shape_iou((w, h), anchor) > IGNORE_IOU_THRESHOLD:
                ignore[0, a, i, j] = True

    return BoxTargets(xy=xy, wh=wh, obj=obj, ignore=ignore, cls=cls, pose=pose)


def encode_batch(annotations, spec: GridSpec) -> BoxTargets:
    """Stack per-image targets into one batched BoxTargets."""
    parts = [encode_targets(ann, spec) for ann in annotations]
    if not parts:
        raise ValueError("cannot encode an empty annotation batch")
    return BoxTargets(
        xy=np.concatenate([p.xy for p in parts]),
        wh=np.concatenate([p.wh for p in parts]),
        obj=np.concatenate([p.obj for p in parts]),
        ignore=np.concatenate([p.ignore for p in parts]),
        cls=np.concatenate([p.cls for p in parts]),
        pose=np.concatenate([p.pose for p in parts]),
    )


def targets_to_logits(targets: BoxTargets, spec: GridSpec) -> GridTensor:
    """Raw logits that decode back to the encoded ground truth.

    Offsets are inverted through the configured activation, objectness and
    class channels get saturated logits, and size/pose channels are copied
    verbatim (they are raw regression channels).
    """
    t = np.clip(targets.xy, _OFFSET_EPS, 1.0 - _OFFSET_EPS)
    if spec.box_activation == "tanh":
        xy_logits = np.arctanh(2.0 * t - 1.0)
    else:
        xy_logits = np.log(t / (1.0 - t))
    sat = _SATURATION_LOGIT
    grads = GridChannels(
        xy=xy_logits,
        wh=targets.wh.copy(),
        obj=(2.0 * targets.obj - 1.0) * sat,
        cls=(2.0 * targets.cls - 1.0) * sat,
        pose=targets.pose.copy(),
    )
    return GridTensor(merge_channel_grads(grads, spec), activated=False)


def _corners(box):
    cx, cy, w, h = box
    if not (w > 0 and h > 0):
        raise ValueError(f"box sizes must be positive, got ({w}, {h})")
    return cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2


def iou(box_a, box_b) -> float:
    """Intersection over union of two (cx, cy, w, h) boxes."""
    ax1, ay1, ax2, ay2 = _corners(box_a)
    bx1, by1, bx2, by2 = _corners(box_b)
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def nms(dets, iou_threshold: float):
    """Greedy non-maximum suppression, confidence-descending, per class.

    A detection survives iff its IoU with every already-kept detection of
    the same class stays below the threshold.  Ties in confidence resolve
    in favor of the earlier input index.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    kept = []
    for i in order:
        d = dets[i]
        if all(
            d.class_id != k.class_id or iou(d.box, k.box) < iou_threshold
            for k in kept
        ):
            kept.append(d)
    return kept
