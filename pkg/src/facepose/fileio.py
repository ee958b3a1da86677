"""File formats: binary tensor container, weights, JSONL annotations,
training history, and evaluation reports.

Tensor container layout:
    8-byte magic ``MTNTENS1``
    4-byte little-endian header length
    JSON header ``{"shape": [...], "dtype": "f32"|"f64",
                   "layout": "row-major", "activated": bool}``
    raw little-endian payload, row-major

A weights file prefixes a JSON architecture descriptor (4-byte length +
JSON with the model config and parameter names), then holds one tensor
container entry per named parameter, in order.  Parameters are stored as
f64 so a save/load round trip is exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .grid import Annotation, GroundTruth
from .rotation import EulerAngles

TENSOR_MAGIC = b"MTNTENS1"
_DTYPES = {"f32": "<f4", "f64": "<f8"}


def write_tensor(path, array, activated: bool = False, dtype: str = "f32") -> None:
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r}")
    arr = np.asarray(array)
    header = {
        "shape": list(arr.shape),
        "dtype": dtype,
        "layout": "row-major",
        "activated": bool(activated),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[dtype]).tobytes())


def _read_tensor_from(fh):
    magic = fh.read(8)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (length,) = struct.unpack("<I", fh.read(4))
    header = json.loads(fh.read(length).decode())
    dtype = header.get("dtype")
    if dtype not in _DTYPES:
        raise ValueError(f"unsupported dtype {dtype!r} in tensor header")
    count = int(np.prod(header["shape"])) if header["shape"] else 1
    raw = fh.read(count * np.dtype(_DTYPES[dtype]).itemsize)
    data = np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(header["shape"])
    return data.copy(), header


def read_tensor(path):
    """Returns (array, header dict)."""
    with open(path, "rb") as fh:
        return _read_tensor_from(fh)


def save_weights(path, model) -> None:
    """Architecture descriptor + one f64 tensor entry per parameter."""
    names = list(model.params)
    descriptor = {
        "format": "facepose-weights-1",
        "model": model.config.to_dict(),
        "parameters": names,
    }
    blob = json.dumps(descriptor, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            arr = model.params[name]
            header = {
                "shape": list(arr.shape),
                "dtype": "f64",
                "layout": "row-major",
                "activated": False,
            }
            hblob = json.dumps(header, sort_keys=True).encode()
            fh.write(TENSOR_MAGIC)
            fh.write(struct.pack("<I", len(hblob)))
            fh.write(hblob)
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_weights(path):
    """Returns a Model reconstructed from a weights file."""
    from .network import Model, ModelConfig

    with open(path, "rb") as fh:
        (length,) = struct.unpack("<I", fh.read(4))
        descriptor = json.loads(fh.read(length).decode())
        if descriptor.get("format") != "facepose-weights-1":
            raise ValueError("not a weights file")
        config = ModelConfig.from_dict(descriptor["model"])
        params = {}
        for name in descriptor["parameters"]:
            data, header = _read_tensor_from(fh)
            params[name] = np.asarray(data, dtype=float)
    return Model(config, params)


def annotation_to_dict(ann: Annotation) -> dict:
    return {
        "image_id": ann.image_id,
        "objects": [
            {
                "box": list(gt.box),
                "pose": {"yaw": gt.pose.yaw, "pitch": gt.pose.pitch, "roll": gt.pose.roll},
            }
            for gt in ann.objects
        ],
    }


def annotation_from_dict(d: dict) -> Annotation:
    objects = [
        GroundTruth(
            box=tuple(float(v) for v in obj["box"]),
            pose=EulerAngles(
                float(obj["pose"]["yaw"]),
                float(obj["pose"]["pitch"]),
                float(obj["pose"]["roll"]),
            ),
        )
        for obj in d["objects"]
    ]
    return Annotation(str(d["image_id"]), objects)


def write_annotations(path, annotations) -> None:
    with open(path, "w") as fh:
        for ann in annotations:
            fh.write(json.dumps(annotation_to_dict(ann), sort_keys=True))
            fh.write("\n")


def read_annotations(path):
    annotations = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                annotations.append(annotation_from_dict(json.loads(line)))
    return annotations


def detection_to_dict(det) -> dict:
    from .rotation import EulerAngles

    if isinstance(det.pose, EulerAngles):
        pose = {"yaw": det.pose.yaw, "pitch": det.pose.pitch, "roll": det.pose.roll}
    else:
        pose = {
            "vectors": [
                list(det.pose.v1),
                list(det.pose.v2),
                list(det.pose.v3),
            ]
        }
    return {
        "box": list(det.box),
        "confidence": det.confidence,
        "class_id": det.class_id,
        "class_score": det.class_score,
        "pose": pose,
    }


def detection_from_dict(d: dict):
    import numpy as np

    from .grid import Detection
    from .rotation import EulerAngles, PoseVectors

    pose = d["pose"]
    if "vectors" in pose:
        payload = PoseVectors(*(np.array(v, dtype=float) for v in pose["vectors"]))
    else:
        payload = EulerAngles(float(pose["yaw"]), float(pose["pitch"]), float(pose["roll"]))
    return Detection(
        box=tuple(float(v) for v in d["box"]),
        confidence=float(d["confidence"]),
        class_id=int(d["class_id"]),
        class_score=float(d["class_score"]),
        pose=payload,
    )


def round_floats(obj, digits: int = 9):
    """Round every float to the given significant digits (for CLI output)."""
    if isinstance(obj, float):
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, dict):
        return {k: round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    return obj


def write_history(path, history) -> None:
    with open(path, "w") as fh:
        for record in history.records:
            fh.write(json.dumps(round_floats(record.to_dict()), sort_keys=True))
            fh.write("\n")


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(round_floats(payload), indent=2, sort_keys=True) + "\n")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text())


def write_dataset(out_dir, dataset) -> None:
    """Images as one f32 tensor container plus a JSONL annotation file."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = np.stack([img for img, _ in dataset])
    write_tensor(out / "images.bin", images, activated=False, dtype="f32")
    write_annotations(out / "annotations.jsonl", [ann for _, ann in dataset])


def read_dataset(data_dir):
    """Returns (images array, annotations list); ids must align by index."""
    data_dir = Path(data_dir)
    images, _ = read_tensor(data_dir / "images.bin")
    annotations = read_annotations(data_dir / "annotations.jsonl")
    if images.shape[0] != len(annotations):
        raise ValueError(
            f"image count {images.shape[0]} does not match "
            f"annotation count {len(annotations)}"
        )
    return images, annotations
