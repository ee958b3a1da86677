"""Deterministic synthetic dataset: oriented triangular markers.

Each image carries 1-3 filled triangles on a dark noisy background.  A
marker's in-plane rotation equals its roll angle, and its shading encodes
the full orientation: body and tip colors are affine maps of the sines and
cosines of (yaw, pitch, roll), so orientation is recoverable from local
appearance and the pose branch has a learnable signal.  The tip region is
painted in a distinct color and clipped to the triangle so the rendered
footprint never leaves the annotated box.

Annotations store the exact bounding box of the triangle's vertices and the
exact angles used for shading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import Annotation, GroundTruth
from .rotation import EulerAngles

YAW_RANGE = (-179.0, 179.0)
PITCH_RANGE = (-88.0, 88.0)
ROLL_RANGE = (-90.0, 90.0)

_SIZE_RANGE = (0.16, 0.34)
_EDGE_MARGIN = 0.03
_MAX_PLACEMENT_TRIES = 30
_BOX_IOU_LIMIT = 0.05

_BG_BASE = 0.06
_BG_NOISE = 0.04
_COLOR_LO = 0.25  # trig values map into [_COLOR_LO, 1]


@dataclass(frozen=True)
class Marker:
    vertices: np.ndarray  # (3, 2) normalized (x, y)
    tip_center: np.ndarray
    tip_radius: float
    body_color: tuple
    tip_color: tuple
    truth: GroundTruth


def _trig_color(*values) -> tuple:
    return tuple(_COLOR_LO + (1.0 - _COLOR_LO) * (v + 1.0) / 2.0 for v in values)


def _marker_colors(angles: EulerAngles) -> tuple:
    y, p, r = (math.radians(v) for v in angles.as_tuple())
    body = _trig_color(math.sin(y), math.cos(y), math.sin(p))
    tip = _trig_color(math.cos(p), math.sin(r), math.cos(r))
    return body, tip


def _marker_geometry(center, size, roll_deg):
    """Triangle vertices (in-plane rotation = roll) and the tip disc."""
    a = 0.475 * size  # half-height
    b = 0.425 * size  # half base width
    local = np.array([[0.0, -a], [-b, a], [b, a]])
    th = math.radians(roll_deg)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    vertices = local @ rot.T + np.asarray(center)
    centroid = vertices.mean(axis=0)
    tip_center = centroid + 0.5 * (vertices[0] - centroid)
    tip_radius = 0.16 * size
    return vertices, tip_center, tip_radius


def _vertex_box(vertices: np.ndarray) -> tuple:
    x1, y1 = vertices.min(axis=0)
    x2, y2 = vertices.max(axis=0)
    return ((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)


_SUBSAMPLES = 4


def triangle_mask(vertices: np.ndarray, image_size: int) -> np.ndarray:
    """Boolean (H, W) mask of pixels the triangle touches.

    Coverage is tested on a 4x4 subsample grid per pixel and a pixel is
    painted when any subsample lands inside.  This keeps the rendered
    footprint within one pixel of the exact vertex bounding box on every
    side: a painted pixel genuinely intersects the triangle, and the pixel
    column/row containing an extreme vertex (or its immediate neighbor)
    always receives a subsample.
    """
    v = np.asarray(vertices, dtype=float)
    e1, e2 = v[1] - v[0], v[2] - v[0]
    if e1[0] * e2[1] - e1[1] * e2[0] < 0:
        v = v[[0, 2, 1]]
    fine = image_size * _SUBSAMPLES
    coords = (np.arange(fine) + 0.5) / fine
    px, py = np.meshgrid(coords, coords)
    inside = np.ones((fine, fine), dtype=bool)
    for i in range(3):
        ax, ay = v[i]
        bx, by = v[(i + 1) % 3]
        inside &= (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0
    return inside.reshape(
        image_size, _SUBSAMPLES, image_size, _SUBSAMPLES
    ).any(axis=(1, 3))


def render_marker(image: np.ndarray, marker: Marker) -> np.ndarray:
    """Paint one marker into a (3, H, W) image; returns its pixel mask."""
    size = image.shape[1]
    inside = triangle_mask(marker.vertices, size)
    coords = (np.arange(size) + 0.5) / size
    px, py = np.meshgrid(coords, coords)
    tip = inside & (
        (px - marker.tip_center[0]) ** 2 + (py - marker.tip_center[1]) ** 2
        <= marker.tip_radius ** 2
    )
    for c in range(3):
        image[c][inside] = marker.body_color[c]
        image[c][tip] = marker.tip_color[c]
    return inside


def _sample_marker(rng, existing_boxes):
    from .grid import iou

    size = float(rng.uniform(*_SIZE_RANGE))
    # the rotated triangle's circumradius is 0.637 * size, not size / 2
    lo = 0.64 * size + _EDGE_MARGIN
    for _ in range(_MAX_PLACEMENT_TRIES):
        center = rng.uniform(lo, 1.0 - lo, size=2)
        angles = EulerAngles(
            float(rng.uniform(*YAW_RANGE)),
            float(rng.uniform(*PITCH_RANGE)),
            float(rng.uniform(*ROLL_RANGE)),
        )
        vertices, tip_center, tip_radius = _marker_geometry(center, size, angles.roll)
        box = _vertex_box(vertices)
        if any(iou(box, other) > _BOX_IOU_LIMIT for other in existing_boxes):
            continue
        body, tip = _marker_colors(angles)
        return Marker(
            vertices=vertices,
            tip_center=tip_center,
            tip_radius=tip_radius,
            body_color=body,
            tip_color=tip,
            truth=GroundTruth(box, angles),
        )
    return None


def gen_synthetic(n: int, seed: int, image_size: int = 56, max_markers: int = 3):
    """Generate ``n`` annotated images, bit-reproducible for a given seed.

    Returns a list of ``(image, Annotation)`` with images as float32 arrays
    of shape (3, image_size, image_size) in [0, 1].
    """
    if n < 1:
        raise ValueError(f"need n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    dataset = []
    for idx in range(n):
        image = _BG_BASE + _BG_NOISE * rng.random((3, image_size, image_size))
        count = int(rng.integers(1, max_markers + 1))
        markers = []
        for _ in range(count):
            marker = _sample_marker(rng, [m.truth.box for m in markers])
            if marker is None:
                break
            markers.append(marker)
        if not markers:  # placement never fails on the first marker, but be safe
            markers.append(_sample_marker(rng, []))
        for marker in markers:
            render_marker(image, marker)
        dataset.append(
            (
                image.astype(np.float32),
                Annotation(f"synthetic-{seed}-{idx}", [m.truth for m in markers]),
            )
        )
    return dataset
