"""Input validation helpers for the estimator and CLI surfaces."""

from __future__ import annotations

import numpy as np

from .grid import Annotation, GroundTruth
from .rotation import EulerAngles


def check_images(X, image_size: int | None = None) -> np.ndarray:
    """Coerce to a float (n, 3, H, W) batch.

    Accepts a single image or a batch, channel-first or channel-last
    (channel-last is detected by a trailing axis of length 3 when the
    channel axis is not already 3).
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected image batch with 3 or 4 axes, got shape {arr.shape}")
    if arr.shape[1] != 3 and arr.shape[-1] == 3:
        arr = np.transpose(arr, (0, 3, 1, 2))
    if arr.shape[1] != 3:
        raise ValueError(f"expected 3 color channels, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("images must be finite")
    if image_size is not None and arr.shape[2:] != (image_size, image_size):
        raise ValueError(
            f"expected {image_size}x{image_size} images, got {arr.shape[2]}x{arr.shape[3]}"
        )
    return arr


def _as_ground_truth(obj) -> GroundTruth:
    if isinstance(obj, GroundTruth):
        return obj
    if isinstance(obj, dict):
        pose = obj["pose"]
        if isinstance(pose, dict):
            pose = EulerAngles(float(pose["yaw"]), float(pose["pitch"]), float(pose["roll"]))
        return GroundTruth(box=tuple(float(v) for v in obj["box"]), pose=pose)
    box, pose = obj
    if not isinstance(pose, EulerAngles):
        pose = EulerAngles(*pose)
    return GroundTruth(box=tuple(float(v) for v in box), pose=pose)


def check_annotations(y, n_images: int) -> list:
    """Coerce to a list of Annotation, one per image.

    Accepts Annotation objects, per-image lists of ground truths (as
    GroundTruth, (box, pose) pairs, or JSONL-style dicts), and assigns
    positional image ids where none are given.
    """
    if len(y) != n_images:
        raise ValueError(f"got {len(y)} annotations for {n_images} images")
    result = []
    for i, item in enumerate(y):
        if isinstance(item, Annotation):
            result.append(item)
        else:
            result.append(Annotation(f"image-{i}", [_as_ground_truth(o) for o in item]))
    ids = [a.image_id for a in result]
    if len(set(ids)) != len(ids):
        raise ValueError("annotation image ids must be unique")
    return result
