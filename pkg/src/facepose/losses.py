"""Multitask loss stack for the joint detection + pose grid.

Detection side: weighted sum of center-offset MSE, log-size MSE, class BCE
and objectness BCE.  Pose side: summed squared error of the three predicted
pose vectors against the ground-truth rotation columns, plus an
orthogonality penalty on the predictions.  The two sides combine as
``alpha * bbox + (1 - alpha) * pose``.

Conventions (fixed so results are reproducible):
  * vector MSE is a plain sum of squared differences, not a mean;
  * the orthogonality penalty sums the three unordered pair dot products,
    each squared and counted once;
  * probabilities entering cross-entropy are clamped to [1e-7, 1 - 1e-7];
  * objectness BCE averages over all non-ignored slots, the remaining
    detection terms and the pose terms average over positive slots only
    (and are zero when there are no positives).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .exceptions import NumericError
from .grid import BoxTargets, GridChannels
from .rotation import PoseVectors

PROB_CLAMP = 1e-7
_BREAKDOWN_TOL = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Branch weights: four detection-term ratios plus the branch mix alpha."""

    lambda_xy: float = 1.0
    lambda_wh: float = 1.0
    lambda_cls: float = 1.0
    lambda_obj: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
            if f.name.startswith("lambda") and v < 0:
                raise ValueError(f"{f.name} must be non-negative, got {v}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0,1], got {self.alpha}")


@dataclass(frozen=True)
class LossBreakdown:
    """All loss components of one evaluation; self-checks its identities."""

    l_xy: float
    l_wh: float
    l_cls: float
    l_obj: float
    l_bbox: float
    l_vmse_x: float
    l_vmse_y: float
    l_vmse_z: float
    l_ortho: float
    l_pose: float
    total: float

    def __post_init__(self):
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise NumericError(f"loss component {f.name} is not finite")

    def check_identities(self, weights: LossWeights) -> None:
        bbox = (
            weights.lambda_xy * self.l_xy
            + weights.lambda_wh * self.l_wh
            + weights.lambda_cls * self.l_cls
            + weights.lambda_obj * self.l_obj
        )
        if abs(bbox - self.l_bbox) > _BREAKDOWN_TOL * max(1.0, abs(bbox)):
            raise ValueError("l_bbox does not match its weighted components")
        pose = self.l_vmse_x + self.l_vmse_y + self.l_vmse_z + self.l_ortho
        if abs(pose - self.l_pose) > _BREAKDOWN_TOL * max(1.0, abs(pose)):
            raise ValueError("l_pose does not match its components")
        total = weights.alpha * self.l_bbox + (1.0 - weights.alpha) * self.l_pose
        if abs(total - self.total) > _BREAKDOWN_TOL * max(1.0, abs(total)):
            raise ValueError("total does not match alpha-weighted branches")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "LossBreakdown":
        return cls(**{f.name: float(d[f.name]) for f in fields(cls)})


def _vec3(v, name: str) -> np.ndarray:
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


def vector_mse(pred, truth) -> float:
    """Sum of squared component differences between two 3-vectors."""
    p = _vec3(pred, "pred")
    t = _vec3(truth, "truth")
    d = p - t
    return float(d @ d)


def ortho_loss(p: PoseVectors) -> float:
    """Squared pairwise dot products of the three vectors, each pair once."""
    d12 = float(p.v1 @ p.v2)
    d13 = float(p.v1 @ p.v3)
    d23 = float(p.v2 @ p.v3)
    return d12 * d12 + d13 * d13 + d23 * d23


def pose_loss(pred: PoseVectors, truth: PoseVectors) -> float:
    """Vector MSE of each predicted pose vector plus the orthogonality term."""
    return (
        vector_mse(pred.v1, truth.v1)
        + vector_mse(pred.v2, truth.v2)
        + vector_mse(pred.v3, truth.v3)
        + ortho_loss(pred)
    )


def pose_loss_grad(pred: PoseVectors, truth: PoseVectors) -> PoseVectors:
    """Analytic gradient of pose_loss with respect to each predicted vector."""
    vs = (pred.v1, pred.v2, pred.v3)
    ts = (truth.v1, truth.v2, truth.v3)
    grads = []
    for i in range(3):
        g = 2.0 * (vs[i] - ts[i])
        for j in range(3):
            if j != i:
                g = g + 2.0 * float(vs[i] @ vs[j]) * vs[j]
        grads.append(g)
    return PoseVectors(*grads)


def total_loss(l_bbox: float, l_pose: float, alpha: float) -> float:
    """Blend the branch losses: alpha * bbox + (1 - alpha) * pose."""
    if not (math.isfinite(l_bbox) and math.isfinite(l_pose)):
        raise ValueError("branch losses must be finite")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0,1], got {alpha}")
    return alpha * l_bbox + (1.0 - alpha) * l_pose


def grad_check(f, grad, point, step: float = 1e-6) -> float:
    """Max relative error between central differences of f and grad(point).

    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    x = np.array(point, dtype=float).ravel()
    analytic = np.array(grad(x), dtype=float).ravel()
    if analytic.shape != x.shape:
        raise ValueError("gradient shape does not match the point")
    worst = 0.0
    for i in range(x.size):
        probe = x.copy()
        probe[i] = x[i] + step
        up = float(f(probe))
        probe[i] = x[i] - step
        down = float(f(probe))
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError("objective not finite near the probe point")
        numeric = (up - down) / (2.0 * step)
        err = abs(analytic[i] - numeric) / max(1e-8, abs(analytic[i]) + abs(numeric))
        worst = max(worst, err)
    return worst


def _bce(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    q = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -(t * np.log(q) + (1.0 - t) * np.log(1.0 - q))


def _bce_grad(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    q = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    g = (q - t) / (q * (1.0 - q))
    # the clamp is constant outside its range, so the gradient vanishes there
    return np.where((p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP), g, 0.0)


def _check_grid_shapes(ch: GridChannels, targets: BoxTargets) -> None:
    pairs = (
        (ch.xy, targets.xy),
        (ch.wh, targets.wh),
        (ch.obj, targets.obj),
        (ch.cls, targets.cls),
        (ch.pose, targets.pose),
    )
    for got, want in pairs:
        if got.shape != want.shape:
            raise ValueError(
                f"prediction shape {got.shape} does not match target {want.shape}"
            )


def multitask_loss(
    ch: GridChannels,
    targets: BoxTargets,
    weights: LossWeights,
    with_grads: bool = False,
):
    """Full loss breakdown over an activated grid, optionally with gradients.

    Returns ``LossBreakdown`` or ``(LossBreakdown, GridChannels)`` where the
    second element holds d(total)/d(activated channel) arrays.
    """
    # diverged inputs travel through as inf/nan and raise NumericError at
    # breakdown construction; silence the intermediate overflow warnings
    with np.errstate(over="ignore", invalid="ignore"):
        return _multitask_loss(ch, targets, weights, with_grads)


def _multitask_loss(ch, targets, weights, with_grads):
    _check_grid_shapes(ch, targets)
    pos = targets.obj == 1.0
    n_pos = int(pos.sum())
    valid = ~targets.ignore
    n_valid = int(valid.sum())

    if n_pos > 0:
        d_xy = (ch.xy - targets.xy) * pos[..., None]
        d_wh = (ch.wh - targets.wh) * pos[..., None]
        l_xy = float((d_xy ** 2).sum()) / n_pos
        l_wh = float((d_wh ** 2).sum()) / n_pos
        l_cls = float((_bce(ch.cls, targets.cls) * pos[..., None]).sum()) / n_pos
    else:
        d_xy = np.zeros_like(ch.xy)
        d_wh = np.zeros_like(ch.wh)
        l_xy = l_wh = l_cls = 0.0

    if n_valid > 0:
        l_obj = float((_bce(ch.obj, targets.obj) * valid).sum()) / n_valid
    else:
        l_obj = 0.0

    pose_dim = ch.pose.shape[-1]
    d_pose = (ch.pose - targets.pose) * pos[..., None]
    if n_pos > 0:
        if pose_dim == 9:
            v = ch.pose.reshape(*ch.pose.shape[:-1], 3, 3)  # (..., vector, comp)
            dots = np.einsum("...ic,...jc->...ij", v, v)
            l_vmse = [
                float((d_pose[..., 3 * i:3 * i + 3] ** 2).sum()) / n_pos
                for i in range(3)
            ]
            sq = dots ** 2
            l_ortho = (
                float(((sq[..., 0, 1] + sq[..., 0, 2] + sq[..., 1, 2]) * pos).sum())
                / n_pos
            )
        else:
            l_vmse = [float((d_pose[..., i] ** 2).sum()) / n_pos for i in range(3)]
            l_ortho = 0.0
    else:
        l_vmse = [0.0, 0.0, 0.0]
        l_ortho = 0.0

    l_bbox = (
        weights.lambda_xy * l_xy
        + weights.lambda_wh * l_wh
        + weights.lambda_cls * l_cls
        + weights.lambda_obj * l_obj
    )
    l_pose = l_vmse[0] + l_vmse[1] + l_vmse[2] + l_ortho
    # assemble total inline: a diverged evaluation must surface as
    # NumericError (from LossBreakdown), not as an argument error
    breakdown = LossBreakdown(
        l_xy=l_xy,
        l_wh=l_wh,
        l_cls=l_cls,
        l_obj=l_obj,
        l_bbox=l_bbox,
        l_vmse_x=l_vmse[0],
        l_vmse_y=l_vmse[1],
        l_vmse_z=l_vmse[2],
        l_ortho=l_ortho,
        l_pose=l_pose,
        total=weights.alpha * l_bbox + (1.0 - weights.alpha) * l_pose,
    )
    if not with_grads:
        return breakdown

    a = weights.alpha
    g_xy = np.zeros_like(ch.xy)
    g_wh = np.zeros_like(ch.wh)
    g_cls = np.zeros_like(ch.cls)
    g_obj = np.zeros_like(ch.obj)
    g_pose = np.zeros_like(ch.pose)
    if n_pos > 0:
        g_xy = a * weights.lambda_xy * 2.0 * d_xy / n_pos
        g_wh = a * weights.lambda_wh * 2.0 * d_wh / n_pos
        g_cls = (
            a
            * weights.lambda_cls
            * _bce_grad(ch.cls, targets.cls)
            * pos[..., None]
            / n_pos
        )
        g_pose = (1.0 - a) * 2.0 * d_pose / n_pos
        if pose_dim == 9:
            # each unordered pair contributes gradient to both of its vectors
            v = ch.pose.reshape(*ch.pose.shape[:-1], 3, 3)
            dots = np.einsum("...ic,...jc->...ij", v, v)
            for i in range(3):
                for j in range(3):
                    if i == j:
                        continue
                    g_pose[..., 3 * i:3 * i + 3] += (
                        (1.0 - a)
                        * 2.0
                        * (dots[..., i, j] * pos)[..., None]
                        * v[..., j, :]
                        / n_pos
                    )
    if n_valid > 0:
        g_obj = a * weights.lambda_obj * _bce_grad(ch.obj, targets.obj) * valid / n_valid

    grads = GridChannels(xy=g_xy, wh=g_wh, obj=g_obj, cls=g_cls, pose=g_pose)
    return breakdown, grads


def bbox_loss(ch: GridChannels, targets: BoxTargets, weights: LossWeights):
    """Detection-side components only, as (l_xy, l_wh, l_cls, l_obj, l_bbox)."""
    b = multitask_loss(ch, targets, weights)
    return b.l_xy, b.l_wh, b.l_cls, b.l_obj, b.l_bbox
