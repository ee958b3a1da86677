"""Desk-scale trainable multitask network with hand-rolled backprop.

Architecture: a shared backbone of four strided 3x3 convolution blocks
(tanh nonlinearities) feeds two branches.  The detection branch is a 3x3
conv + tanh followed by a linear 1x1 conv producing the box/objectness/class
logits.  The pose branch aggregates by concatenating backbone features with
the detection branch's pre-activation output, then applies two 3x3
convolutions with a tanh between, producing the pose channels.  Both branch
outputs are interleaved anchor-by-anchor into the joint grid tensor.

Everything runs in float64 numpy.  Training is plain gradient descent with
a three-phase freeze schedule; all randomness flows from explicit seeds, so
runs are bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from .exceptions import NumericError
from .grid import (
    DEFAULT_ANCHORS,
    GridSpec,
    GridTensor,
    activate,
    activation_backward,
    channels_for,
    decode,
    encode_batch,
    merge_channel_grads,
    nms,
    offset_grad_factor,
    split_channels,
    xy_to_offsets,
)
from .losses import LossWeights, multitask_loss

PART_NAMES = ("backbone", "detect_head", "pose_head")
_PART_PREFIX = {"backbone": "backbone.", "detect_head": "detect.", "pose_head": "pose."}


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 56
    grid_size: int = 7
    classes: int = 1
    pose_params: int = 9
    box_activation: str = "sigmoid"
    anchors: tuple = DEFAULT_ANCHORS
    backbone_widths: tuple = (8, 16, 24, 32)
    backbone_strides: tuple = (2, 2, 2, 1)
    detect_hidden: int = 32
    pose_hidden: int = 32
    seed: int = 0

    def __post_init__(self):
        if len(self.backbone_widths) != len(self.backbone_strides):
            raise ValueError("backbone widths and strides must pair up")
        factor = int(np.prod(self.backbone_strides))
        if self.image_size != self.grid_size * factor:
            raise ValueError(
                f"image size {self.image_size} must equal grid {self.grid_size} "
                f"x stride product {factor}"
            )
        channels_for(self.classes, self.pose_params)

    def grid_spec(self) -> GridSpec:
        return GridSpec(
            size=self.grid_size,
            anchors=tuple(tuple(a) for a in self.anchors),
            classes=self.classes,
            pose_params=self.pose_params,
            box_activation=self.box_activation,
        )

    @property
    def detect_channels(self) -> int:
        return 3 * (5 + self.classes)

    @property
    def pose_channels(self) -> int:
        return 3 * self.pose_params

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchors"] = [list(a) for a in self.anchors]
        d["backbone_widths"] = list(self.backbone_widths)
        d["backbone_strides"] = list(self.backbone_strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "anchors" in kwargs:
            kwargs["anchors"] = tuple(tuple(a) for a in kwargs["anchors"])
        for key in ("backbone_widths", "backbone_strides"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class Phase:
    epochs: int
    batch_size: int
    learning_rate: float
    frozen: frozenset = frozenset()

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch size >= 1")
        if not math.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise ValueError("learning rate must be finite and non-negative")
        bad = set(self.frozen) - set(PART_NAMES)
        if bad:
            raise ValueError(f"unknown frozen parts: {sorted(bad)}")
        object.__setattr__(self, "frozen", frozenset(self.frozen))


@dataclass(frozen=True)
class PhaseSchedule:
    """Three training phases: detection head alone, then detection +
    backbone, then everything."""

    phases: tuple = (
        Phase(5, 8, 1e-2, frozenset({"backbone", "pose_head"})),
        Phase(5, 8, 1e-3, frozenset({"pose_head"})),
        Phase(10, 8, 1e-3, frozenset()),
    )

    def __post_init__(self):
        if len(self.phases) != 3:
            raise ValueError("the schedule must have exactly three phases")

    def to_dict(self) -> dict:
        return {
            "phases": [
                {
                    "epochs": p.epochs,
                    "batch_size": p.batch_size,
                    "learning_rate": p.learning_rate,
                    "frozen": sorted(p.frozen),
                }
                for p in self.phases
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhaseSchedule":
        unknown = set(d) - {"phases"}
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        phases = []
        for p in d["phases"]:
            bad = set(p) - {"epochs", "batch_size", "learning_rate", "frozen"}
            if bad:
                raise ValueError(f"unknown phase keys: {sorted(bad)}")
            phases.append(
                Phase(
                    epochs=int(p["epochs"]),
                    batch_size=int(p["batch_size"]),
                    learning_rate=float(p["learning_rate"]),
                    frozen=frozenset(p.get("frozen", ())),
                )
            )
        return cls(phases=tuple(phases))


@dataclass
class Model:
    config: ModelConfig
    params: dict  # name -> float64 array, insertion order fixed by init

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})


@dataclass
class StepRecord:
    step: int
    phase: int
    epoch: int
    learning_rate: float
    loss: "LossBreakdown"  # noqa: F821  (losses.LossBreakdown)

    def to_dict(self) -> dict:
        d = {
            "step": self.step,
            "phase": self.phase,
            "epoch": self.epoch,
            "learning_rate": self.learning_rate,
        }
        d.update(self.loss.to_dict())
        return d


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def totals(self) -> np.ndarray:
        return np.array([r.loss.total for r in self.records])


def _stream_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


def _layer_plan(cfg: ModelConfig):
    """(name, c_in, c_out, kernel, stride, pad, has_tanh) in forward order."""
    plan = []
    c_in = 3
    for i, (width, stride) in enumerate(zip(cfg.backbone_widths, cfg.backbone_strides)):
        plan.append((f"backbone.conv{i}", c_in, width, 3, stride, 1, True))
        c_in = width
    plan.append(("detect.hidden", c_in, cfg.detect_hidden, 3, 1, 1, True))
    plan.append(("detect.out", cfg.detect_hidden, cfg.detect_channels, 1, 1, 0, False))
    concat_in = c_in + cfg.detect_channels
    plan.append(("pose.hidden", concat_in, cfg.pose_hidden, 3, 1, 1, True))
    plan.append(("pose.out", cfg.pose_hidden, cfg.pose_channels, 3, 1, 1, False))
    return plan


def init_network(cfg: ModelConfig) -> Model:
    """Fan-in-scaled uniform initialization from the config seed."""
    rng = _stream_rng(cfg.seed, 0)
    params = {}
    for name, c_in, c_out, kernel, _, _, _ in _layer_plan(cfg):
        bound = 1.0 / math.sqrt(c_in * kernel * kernel)
        params[f"{name}.w"] = rng.uniform(-bound, bound, (c_out, c_in, kernel, kernel))
        params[f"{name}.b"] = rng.uniform(-bound, bound, c_out)
    return Model(cfg, params)


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int, pad: int):
    """Strided 2-d convolution; returns (output, padded input for backward)."""
    bsz, _, h, wd = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bsz, h_out, w_out, c_out))
    for ki in range(kh):
        for kj in range(kw):
            xv = xp[:, :, ki:ki + stride * h_out:stride, kj:kj + stride * w_out:stride]
            out += np.tensordot(xv, w[:, :, ki, kj], axes=([1], [1]))
    return out.transpose(0, 3, 1, 2) + b[None, :, None, None], xp


def conv2d_backward(dout: np.ndarray, xp: np.ndarray, w: np.ndarray, stride: int, pad: int):
    """Gradients of conv2d: (d_input, d_weights, d_bias)."""
    _, _, h_out, w_out = dout.shape
    _, _, kh, kw = w.shape
    db = dout.sum(axis=(0, 2, 3))
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            sl = (
                slice(None),
                slice(None),
                slice(ki, ki + stride * h_out, stride),
                slice(kj, kj + stride * w_out, stride),
            )
            dw[:, :, ki, kj] = np.tensordot(dout, xp[sl], axes=([0, 2, 3], [0, 2, 3]))
            dxp[sl] += np.tensordot(
                w[:, :, ki, kj], dout, axes=([0], [1])
            ).transpose(1, 0, 2, 3)
    dx = dxp[:, :, pad:-pad, pad:-pad] if pad else dxp
    return dx, dw, db


def _forward(model: Model, batch: np.ndarray):
    """Raw output array plus per-layer caches for backprop."""
    cfg = model.config
    x = np.asarray(batch, dtype=float)
    if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != cfg.image_size or x.shape[3] != cfg.image_size:
        raise ValueError(
            f"batch shape {x.shape} does not match (N, 3, {cfg.image_size}, {cfg.image_size})"
        )
    caches = {}
    feats = x
    for name, _, _, _, stride, pad, has_tanh in _layer_plan(cfg):
        if name == "pose.hidden":
            feats = np.concatenate([caches["backbone_out"], caches["detect.out"]], axis=1)
        z, xp = conv2d(feats, model.params[f"{name}.w"], model.params[f"{name}.b"], stride, pad)
        a = np.tanh(z) if has_tanh else z
        caches[name] = a
        caches[f"{name}.xp"] = xp
        if name.startswith("backbone."):
            feats = a
            caches["backbone_out"] = a
        elif name == "detect.hidden":
            feats = a
        elif name == "detect.out":
            feats = caches["backbone_out"]  # branch point; pose path re-concats
        else:
            feats = a

    d = caches["detect.out"]
    p = caches["pose.out"]
    bsz = x.shape[0]
    k = cfg.grid_size
    det_block = 5 + cfg.classes
    raw = np.concatenate(
        [
            d.reshape(bsz, 3, det_block, k, k),
            p.reshape(bsz, 3, cfg.pose_params, k, k),
        ],
        axis=2,
    ).reshape(bsz, channels_for(cfg.classes, cfg.pose_params), k, k)
    return raw, caches


def forward(model: Model, batch: np.ndarray) -> GridTensor:
    """Run the network; returns the raw (pre-activation) grid tensor."""
    raw, _ = _forward(model, batch)
    return GridTensor(raw, activated=False)


def _backward(model: Model, caches: dict, d_raw: np.ndarray) -> dict:
    """Parameter gradients of a scalar loss given d(loss)/d(raw output)."""
    cfg = model.config
    bsz = d_raw.shape[0]
    k = cfg.grid_size
    det_block = 5 + cfg.classes
    blocks = d_raw.reshape(bsz, 3, det_block + cfg.pose_params, k, k)
    d_detect = blocks[:, :, :det_block].reshape(bsz, cfg.detect_channels, k, k)
    d_pose = blocks[:, :, det_block:].reshape(bsz, cfg.pose_channels, k, k)

    grads = {}
    plan = {entry[0]: entry for entry in _layer_plan(cfg)}

    def back_through(name, dout):
        _, _, _, _, stride, pad, has_tanh = plan[name]
        if has_tanh:
            dout = dout * (1.0 - caches[name] ** 2)
        dx, dw, db = conv2d_backward(
            dout, caches[f"{name}.xp"], model.params[f"{name}.w"], stride, pad
        )
        grads[f"{name}.w"] = dw
        grads[f"{name}.b"] = db
        return dx

    # pose branch: out <- tanh(hidden) <- concat(backbone_out, detect_out)
    d_pose_hidden = back_through("pose.out", d_pose)
    d_concat = back_through("pose.hidden", d_pose_hidden)
    n_backbone = cfg.backbone_widths[-1]
    d_backbone_from_pose = d_concat[:, :n_backbone]
    d_detect_total = d_detect + d_concat[:, n_backbone:]

    # detection branch
    d_detect_hidden = back_through("detect.out", d_detect_total)
    d_backbone_from_detect = back_through("detect.hidden", d_detect_hidden)

    d_feats = d_backbone_from_pose + d_backbone_from_detect
    for i in reversed(range(len(cfg.backbone_widths))):
        d_feats = back_through(f"backbone.conv{i}", d_feats)
    return grads


def frozen_prefixes(frozen) -> tuple:
    bad = set(frozen) - set(PART_NAMES)
    if bad:
        raise ValueError(f"unknown frozen parts: {sorted(bad)}")
    return tuple(_PART_PREFIX[p] for p in frozen)


def train_step(model, batch, targets, weights: LossWeights, lr: float, frozen=()):
    """One full forward/backward/update pass; returns (model, LossBreakdown).

    Parameters belonging to frozen parts are left untouched.  A non-finite
    loss aborts before any parameter is modified.
    """
    cfg = model.config
    spec = cfg.grid_spec()
    raw, caches = _forward(model, batch)
    act = activate(GridTensor(raw), spec)
    ch = split_channels(act, spec)
    ch_for_loss = type(ch)(
        xy=xy_to_offsets(ch.xy, spec), wh=ch.wh, obj=ch.obj, cls=ch.cls, pose=ch.pose
    )
    breakdown, ch_grads = multitask_loss(ch_for_loss, targets, weights, with_grads=True)
    if not math.isfinite(breakdown.total):
        raise NumericError("total loss is not finite; aborting the step")
    ch_grads.xy = ch_grads.xy * offset_grad_factor(spec)
    d_act = merge_channel_grads(ch_grads, spec)
    d_raw = activation_backward(act, spec, d_act)
    grads = _backward(model, caches, d_raw)

    skip = frozen_prefixes(frozen)
    if lr != 0.0:
        for name, g in grads.items():
            if not name.startswith(skip):
                model.params[name] -= lr * g
    return model, breakdown


def train(cfg: ModelConfig, schedule: PhaseSchedule, data, weights: LossWeights = LossWeights()):
    """Three-phase training on (image, Annotation) pairs.

    Deterministic given (config, schedule, data): the model seed drives
    initialization and a separate stream drives the per-epoch shuffles.
    Returns (Model, TrainHistory).
    """
    spec = cfg.grid_spec()
    images = np.stack([img for img, _ in data]).astype(float)
    targets_all = encode_batch([ann for _, ann in data], spec)
    n = len(data)

    model = init_network(cfg)
    shuffle_rng = _stream_rng(cfg.seed, 1)
    history = TrainHistory()
    step = 0
    for phase_idx, phase in enumerate(schedule.phases):
        for epoch in range(phase.epochs):
            order = shuffle_rng.permutation(n)
            for start in range(0, n, phase.batch_size):
                idx = order[start:start + phase.batch_size]
                batch_targets = type(targets_all)(
                    xy=targets_all.xy[idx],
                    wh=targets_all.wh[idx],
                    obj=targets_all.obj[idx],
                    ignore=targets_all.ignore[idx],
                    cls=targets_all.cls[idx],
                    pose=targets_all.pose[idx],
                )
                try:
                    model, breakdown = train_step(
                        model, images[idx], batch_targets, weights,
                        phase.learning_rate, phase.frozen,
                    )
                except NumericError as exc:
                    raise NumericError(
                        f"phase {phase_idx} step {step}: {exc}"
                    ) from exc
                history.records.append(
                    StepRecord(step, phase_idx, epoch, phase.learning_rate, breakdown)
                )
                step += 1
    return model, history


def predict(model: Model, images, conf_threshold: float = 0.4,
            nms_iou_threshold: float = 0.45, batch_size: int = 64):
    """Detections per image: forward, activate, decode, then per-class NMS."""
    cfg = model.config
    spec = cfg.grid_spec()
    arr = np.asarray(images, dtype=float)
    if arr.ndim == 3:
        arr = arr[None]
    results = []
    for start in range(0, arr.shape[0], batch_size):
        raw, _ = _forward(model, arr[start:start + batch_size])
        act = activate(GridTensor(raw), spec)
        for dets in decode(act, spec, conf_threshold):
            results.append(nms(dets, nms_iou_threshold))
    return results
