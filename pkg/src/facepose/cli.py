"""Command-line surface.

One binary with subcommands covering the library end to end: rotation
utilities (``euler2mat``, ``mat2euler``, ``project``), codec and loss tools
(``encode``, ``decode``, ``nms``, ``loss``), the experiment pipeline
(``gen-data``, ``train``, ``eval``) and ``gradcheck``.

Exit codes: 0 success, 1 usage error, 2 data or numeric error.  Settings
resolve as defaults < flags < config file, so a config document pins a run
completely.  All numeric output is printed with 9 significant digits.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import RunConfig
from .exceptions import (
    DegenerateMatrixError,
    NumericError,
    TensorStateError,
    UndefinedMetricError,
)
from .grid import GridTensor, activate, decode, encode_batch, nms, targets_to_logits
from .losses import LossWeights, grad_check, multitask_loss, pose_loss, pose_loss_grad
from .metrics import EvalConfig, evaluate
from .network import ModelConfig, init_network, predict, train, train_step
from .rotation import EulerAngles, PoseVectors, RotationMatrix, euler_to_matrix, matrix_to_euler, nearest_rotation
from .synthetic import gen_synthetic

USAGE_ERROR = 1
DATA_ERROR = 2

_POSE_FORMATS = {"vectors": 9, "euler": 3}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _fmt(value: float) -> str:
    return f"{value:.9g}"


def _print_matrix(m: np.ndarray, out=None) -> None:
    # stdout gets the 9-significant-digit contract; files keep full
    # precision so a written rotation stays orthonormal within 1e-9
    if out:
        lines = [" ".join(f"{v:.17g}" for v in row) for row in np.asarray(m)]
        Path(out).write_text("\n".join(lines) + "\n")
    else:
        lines = [" ".join(_fmt(v) for v in row) for row in np.asarray(m)]
        sys.stdout.write("\n".join(lines) + "\n")


def _read_matrix(path) -> np.ndarray:
    m = np.loadtxt(path)
    if m.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix in {path}, got shape {m.shape}")
    return m


def _run_config(args) -> RunConfig:
    """defaults < flags < config file (the file pins whatever it names)."""
    base = RunConfig().to_dict()
    model = base["model"]
    for flag, key in (
        ("grid_size", "grid_size"),
        ("image_size", "image_size"),
        ("box_activation", "box_activation"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            model[key] = v
    if getattr(args, "pose_format", None) is not None:
        model["pose_params"] = _POSE_FORMATS[args.pose_format]
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
        model["seed"] = args.seed
    for flag, key in (
        ("conf_threshold", "conf_threshold"),
        ("nms_iou", "nms_iou_threshold"),
        ("match_iou", "match_iou_threshold"),
    ):
        v = getattr(args, flag, None)
        if v is not None:
            base["eval"][key] = v
    for flag, key in (("data", "train_data"), ("val", "val_data"), ("out", "out_dir")):
        v = getattr(args, flag, None)
        if v is not None:
            base["paths"][key] = str(v)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        overlay = fileio.read_json(cfg_path)
        for section, value in overlay.items():
            if isinstance(value, dict) and isinstance(base.get(section), dict):
                base[section].update(value)
            else:
                base[section] = value
        if "seed" in overlay:
            base["model"]["seed"] = overlay["seed"]
    return RunConfig.from_dict(base)


def _add_grid_flags(p) -> None:
    p.add_argument("--config", help="run config JSON; overrides flags")
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--pose-format", dest="pose_format", choices=sorted(_POSE_FORMATS))
    p.add_argument("--box-activation", dest="box_activation", choices=["sigmoid", "tanh"])
    p.add_argument("--seed", type=int)


def cmd_euler2mat(args) -> int:
    m = euler_to_matrix(EulerAngles(args.yaw, args.pitch, args.roll))
    _print_matrix(m.m, args.out)
    return 0


def cmd_mat2euler(args) -> int:
    angles = matrix_to_euler(RotationMatrix(_read_matrix(args.input)))
    print(" ".join(_fmt(v) for v in angles.as_tuple()))
    return 0


def cmd_project(args) -> int:
    r = nearest_rotation(_read_matrix(args.input))
    _print_matrix(r.m, args.out)
    return 0


def cmd_gen_data(args) -> int:
    dataset = gen_synthetic(
        args.n, seed=args.seed, image_size=args.image_size, max_markers=args.max_markers
    )
    fileio.write_dataset(args.out, dataset)
    print(f"wrote {args.n} images to {args.out}", file=sys.stderr)
    return 0


def cmd_encode(args) -> int:
    run = _run_config(args)
    spec = run.model.grid_spec()
    annotations = fileio.read_annotations(args.annotations)
    targets = encode_batch(annotations, spec)
    logits = targets_to_logits(targets, spec)
    fileio.write_tensor(args.out, logits.data, activated=False, dtype="f64")
    return 0


def _load_grid_tensor(path, spec):
    data, header = fileio.read_tensor(path)
    tensor = GridTensor(np.asarray(data, dtype=float), activated=bool(header["activated"]))
    if not tensor.activated:
        tensor = activate(tensor, spec)
    return tensor


def cmd_decode(args) -> int:
    run = _run_config(args)
    spec = run.model.grid_spec()
    act = _load_grid_tensor(args.tensor, spec)
    batches = decode(act, spec, run.eval.conf_threshold)
    if args.nms:
        batches = [nms(dets, run.eval.nms_iou_threshold) for dets in batches]
    for i, dets in enumerate(batches):
        record = {
            "image_index": i,
            "detections": [fileio.detection_to_dict(d) for d in dets],
        }
        print(json.dumps(fileio.round_floats(record), sort_keys=True))
    return 0


def cmd_nms(args) -> int:
    with open(args.detections) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            dets = [fileio.detection_from_dict(d) for d in record["detections"]]
            record["detections"] = [
                fileio.detection_to_dict(d) for d in nms(dets, args.iou_threshold)
            ]
            print(json.dumps(fileio.round_floats(record), sort_keys=True))
    return 0


def cmd_loss(args) -> int:
    run = _run_config(args)
    spec = run.model.grid_spec()
    act = _load_grid_tensor(args.tensor, spec)
    annotations = fileio.read_annotations(args.annotations)
    if act.data.shape[0] != len(annotations):
        raise ValueError(
            f"tensor batch {act.data.shape[0]} does not match "
            f"{len(annotations)} annotations"
        )
    targets = encode_batch(annotations, spec)
    from .grid import split_channels, xy_to_offsets

    ch = split_channels(act, spec)
    ch = type(ch)(xy=xy_to_offsets(ch.xy, spec), wh=ch.wh, obj=ch.obj, cls=ch.cls, pose=ch.pose)
    breakdown = multitask_loss(ch, targets, run.loss_weights)
    print(json.dumps(fileio.round_floats(breakdown.to_dict()), sort_keys=True, indent=2))
    return 0


def _evaluate_model(model, run, images, annotations):
    preds = predict(
        model,
        images,
        conf_threshold=run.eval.conf_threshold,
        nms_iou_threshold=run.eval.nms_iou_threshold,
    )
    preds_by_image = {ann.image_id: d for ann, d in zip(annotations, preds)}
    config = EvalConfig(
        match_iou_threshold=run.eval.match_iou_threshold,
        pose_params=run.model.pose_params,
        box_activation=run.model.box_activation,
        loss_weights=run.loss_weights,
    )
    return evaluate(preds_by_image, annotations, config)


def cmd_train(args) -> int:
    run = _run_config(args)
    if not run.paths.train_data:
        raise ValueError("train needs --data or paths.train_data in the config")
    if not run.paths.out_dir:
        raise ValueError("train needs --out or paths.out_dir in the config")
    out_dir = Path(run.paths.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fileio.write_json(out_dir / "resolved_config.json", run.to_dict())

    images, annotations = fileio.read_dataset(run.paths.train_data)
    data = list(zip(images, annotations))
    print(
        f"training on {len(data)} images (grid {run.model.grid_size}, "
        f"pose params {run.model.pose_params})",
        file=sys.stderr,
    )
    model, history = train(run.model, run.schedule, data, run.loss_weights)
    fileio.save_weights(out_dir / "weights.bin", model)
    fileio.write_history(out_dir / "history.jsonl", history)

    # evaluate from the reloaded weights so a later `eval` run on the same
    # files reproduces this report bit for bit
    reloaded = fileio.load_weights(out_dir / "weights.bin")
    if run.paths.val_data:
        eval_images, eval_annotations = fileio.read_dataset(run.paths.val_data)
    else:
        eval_images, eval_annotations = images, annotations
    report = _evaluate_model(reloaded, run, eval_images, eval_annotations)
    fileio.write_json(out_dir / "eval.json", report.to_dict())
    print(f"run artifacts written to {out_dir}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    run = _run_config(args)
    model = fileio.load_weights(args.weights)
    images, annotations = fileio.read_dataset(args.data)
    run_model = model.config
    run = RunConfig.from_dict({**run.to_dict(), "model": run_model.to_dict()})
    report = _evaluate_model(model, run, images, annotations)
    payload = fileio.round_floats(report.to_dict())
    if args.out:
        fileio.write_json(args.out, report.to_dict())
    else:
        print(json.dumps(payload, sort_keys=True, indent=2))
    return 0


def _gradcheck_pose_loss(seed: int) -> float:
    rng = np.random.default_rng(seed)
    truth_cols = np.eye(3)
    worst = 0.0
    for _ in range(10):
        point = rng.standard_normal(9)
        truth = PoseVectors(truth_cols[:, 0], truth_cols[:, 1], truth_cols[:, 2])

        def f(x):
            return pose_loss(PoseVectors(x[0:3], x[3:6], x[6:9]), truth)

        def g(x):
            got = pose_loss_grad(PoseVectors(x[0:3], x[3:6], x[6:9]), truth)
            return np.concatenate([got.v1, got.v2, got.v3])

        worst = max(worst, grad_check(f, g, point, step=1e-6))
    return worst


def _gradcheck_bbox_loss(seed: int) -> float:
    from .grid import BoxTargets, GridChannels

    rng = np.random.default_rng(seed)
    k = 3
    shape = (1, 3, k, k)
    obj_t = np.zeros(shape)
    for flat in rng.choice(3 * k * k, size=3, replace=False):
        a, i, j = np.unravel_index(flat, (3, k, k))
        obj_t[0, a, i, j] = 1.0
    cls_t = np.zeros(shape + (1,))
    cls_t[..., 0] = obj_t
    targets = BoxTargets(
        xy=rng.uniform(0.1, 0.9, shape + (2,)) * obj_t[..., None],
        wh=rng.normal(0, 0.4, shape + (2,)) * obj_t[..., None],
        obj=obj_t,
        ignore=np.zeros(shape, dtype=bool),
        cls=cls_t,
        pose=rng.normal(0, 0.5, shape + (9,)) * obj_t[..., None],
    )
    ch = GridChannels(
        xy=rng.uniform(0.2, 0.8, shape + (2,)),
        wh=rng.normal(0, 0.4, shape + (2,)),
        obj=rng.uniform(0.2, 0.8, shape),
        cls=rng.uniform(0.2, 0.8, shape + (1,)),
        pose=rng.normal(0, 0.5, shape + (9,)),
    )
    weights = LossWeights()
    shapes = [ch.xy.shape, ch.wh.shape, ch.obj.shape, ch.cls.shape, ch.pose.shape]
    sizes = [int(np.prod(s)) for s in shapes]

    def unpack(x):
        parts, at = [], 0
        for s, n in zip(shapes, sizes):
            parts.append(x[at:at + n].reshape(s))
            at += n
        return GridChannels(*parts)

    def f(x):
        return multitask_loss(unpack(x), targets, weights).total

    def g(x):
        _, grads = multitask_loss(unpack(x), targets, weights, with_grads=True)
        return np.concatenate([
            grads.xy.ravel(), grads.wh.ravel(), grads.obj.ravel(),
            grads.cls.ravel(), grads.pose.ravel(),
        ])

    point = np.concatenate([
        ch.xy.ravel(), ch.wh.ravel(), ch.obj.ravel(), ch.cls.ravel(), ch.pose.ravel()
    ])
    return grad_check(f, g, point, step=1e-6)


def _gradcheck_train_step(seed: int) -> float:
    from .grid import (
        activation_backward,
        encode_batch,
        merge_channel_grads,
        offset_grad_factor,
        split_channels,
        xy_to_offsets,
    )
    from .network import _backward, _forward

    cfg = ModelConfig(
        image_size=16, grid_size=2,
        backbone_widths=(2, 3, 3, 4), backbone_strides=(2, 2, 2, 1),
        detect_hidden=4, pose_hidden=4, seed=seed,
    )
    data = gen_synthetic(2, seed=seed + 100, image_size=16, max_markers=1)
    images = np.stack([img for img, _ in data]).astype(float)
    targets = encode_batch([ann for _, ann in data], cfg.grid_spec())
    model = init_network(cfg)
    weights = LossWeights()
    spec = cfg.grid_spec()
    names = list(model.params)
    shapes = [model.params[n].shape for n in names]
    sizes = [int(np.prod(s)) for s in shapes]

    def set_params(x):
        at = 0
        for n, s, size in zip(names, shapes, sizes):
            model.params[n] = x[at:at + size].reshape(s)
            at += size

    def f(x):
        set_params(x)
        _, breakdown = train_step(model, images, targets, weights, lr=0.0)
        return breakdown.total

    def g(x):
        set_params(x)
        raw, caches = _forward(model, images)
        act = activate(GridTensor(raw), spec)
        ch = split_channels(act, spec)
        ch_loss = type(ch)(xy=xy_to_offsets(ch.xy, spec), wh=ch.wh,
                           obj=ch.obj, cls=ch.cls, pose=ch.pose)
        _, ch_grads = multitask_loss(ch_loss, targets, weights, with_grads=True)
        ch_grads.xy = ch_grads.xy * offset_grad_factor(spec)
        d_act = merge_channel_grads(ch_grads, spec)
        d_raw = activation_backward(act, spec, d_act)
        grads = _backward(model, caches, d_raw)
        return np.concatenate([grads[n].ravel() for n in names])

    point = np.concatenate([model.params[n].ravel() for n in names])
    return grad_check(f, g, point, step=1e-6)


_GRADCHECK_TARGETS = {
    "pose_loss": (_gradcheck_pose_loss, 1e-6),
    "bbox_loss": (_gradcheck_bbox_loss, 1e-6),
    "train_step": (_gradcheck_train_step, 1e-4),
}


def cmd_gradcheck(args) -> int:
    fn, tolerance = _GRADCHECK_TARGETS[args.target]
    err = fn(args.seed)
    print(f"target {args.target} max_relative_error {_fmt(err)} tolerance {_fmt(tolerance)}")
    if not np.isfinite(err) or err >= tolerance:
        print("gradient check FAILED", file=sys.stderr)
        return DATA_ERROR
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="facepose", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("euler2mat", help="compose yaw/pitch/roll into a rotation matrix")
    p.add_argument("--yaw", type=float, required=True)
    p.add_argument("--pitch", type=float, required=True)
    p.add_argument("--roll", type=float, required=True)
    p.add_argument("--out", help="write the matrix to a file instead of stdout")
    p.set_defaults(fn=cmd_euler2mat)

    p = sub.add_parser("mat2euler", help="extract yaw/pitch/roll from a rotation matrix")
    p.add_argument("--input", required=True, help="text file with a 3x3 matrix")
    p.set_defaults(fn=cmd_mat2euler)

    p = sub.add_parser("project", help="nearest proper rotation of a 3x3 matrix")
    p.add_argument("--input", required=True, help="text file with a 3x3 matrix")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_project)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", dest="image_size", type=int, default=56)
    p.add_argument("--max-markers", dest="max_markers", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("encode", help="annotations -> grid target logits tensor")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    _add_grid_flags(p)
    p.set_defaults(fn=cmd_encode)

    p = sub.add_parser("decode", help="grid tensor -> detections JSONL")
    p.add_argument("--tensor", required=True)
    p.add_argument("--conf-threshold", dest="conf_threshold", type=float)
    p.add_argument("--nms", action="store_true", help="apply NMS after decoding")
    _add_grid_flags(p)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("nms", help="non-maximum suppression over detections JSONL")
    p.add_argument("--detections", required=True)
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float, default=0.45)
    p.set_defaults(fn=cmd_nms)

    p = sub.add_parser("loss", help="loss breakdown of a tensor against annotations")
    p.add_argument("--tensor", required=True)
    p.add_argument("--annotations", required=True)
    _add_grid_flags(p)
    p.set_defaults(fn=cmd_loss)

    p = sub.add_parser("train", help="three-phase training run")
    p.add_argument("--data", help="training dataset directory")
    p.add_argument("--val", help="held-out dataset directory for the stored report")
    p.add_argument("--out", help="run output directory")
    _add_grid_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate saved weights on a dataset")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the report JSON here instead of stdout")
    _add_grid_flags(p)
    p.add_argument("--conf-threshold", dest="conf_threshold", type=float)
    p.add_argument("--nms-iou", dest="nms_iou", type=float)
    p.add_argument("--match-iou", dest="match_iou", type=float)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference verification of gradients")
    p.add_argument("--target", choices=sorted(_GRADCHECK_TARGETS), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "fn", None):
        parser.print_help(sys.stderr)
        return USAGE_ERROR
    try:
        return args.fn(args)
    except (
        ValueError,
        KeyError,
        FileNotFoundError,
        NumericError,
        TensorStateError,
        UndefinedMetricError,
        DegenerateMatrixError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
