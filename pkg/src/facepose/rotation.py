"""Rotation representations: Euler angles, rotation matrices, pose vectors.

Angle convention: intrinsic yaw-pitch-roll, i.e. Z-Y-X Tait-Bryan.  The full
rotation is built as ``R = Yaw * Pitch * Roll`` where yaw rotates about the
vertical (third) axis, pitch about the lateral (second) axis and roll about
the frontal (first) axis.  No other Euler convention is supported.

The columns of a rotation matrix are the transformed left/bottom/front unit
vectors and double as the regression targets of the pose branch ("pose
vectors").  Predicted pose vectors are generally not orthonormal; they are
repaired with :func:`nearest_rotation`, an SVD-based orthogonal Procrustes
projection with determinant sign correction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DegenerateMatrixError

ORTHONORMAL_TOL = 1e-9
GIMBAL_LOCK_TOL = 1e-7

# Fixed-size Jacobi iteration is plenty for 3x3 inputs.
_JACOBI_MAX_SWEEPS = 30
_JACOBI_TOL = 1e-14


def wrap_degrees(angle: float) -> float:
    """Wrap an angle in degrees into (-180, 180]."""
    wrapped = math.fmod(angle, 360.0)
    if wrapped <= -180.0:
        wrapped += 360.0
    elif wrapped > 180.0:
        wrapped -= 360.0
    return wrapped


@dataclass(frozen=True)
class EulerAngles:
    """Head orientation as (yaw, pitch, roll) in degrees."""

    yaw: float
    pitch: float
    roll: float

    def __post_init__(self):
        for name in ("yaw", "pitch", "roll"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite, got {getattr(self, name)!r}")

    def normalized(self) -> "EulerAngles":
        """Canonical form: yaw, roll in (-180, 180] and pitch in [-90, 90].

        Pitch outside [-90, 90] is reflected through the equivalent triple
        (yaw+180, 180-pitch, roll+180), which represents the same rotation.
        """
        yaw = wrap_degrees(self.yaw)
        pitch = wrap_degrees(self.pitch)
        roll = wrap_degrees(self.roll)
        if abs(pitch) > 90.0:
            yaw = wrap_degrees(yaw + 180.0)
            roll = wrap_degrees(roll + 180.0)
            pitch = wrap_degrees(180.0 - pitch)
        return EulerAngles(yaw, pitch, roll)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.yaw, self.pitch, self.roll)


@dataclass(frozen=True)
class RotationMatrix:
    """Proper orthonormal 3x3 matrix; columns are the pose vectors."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("rotation matrix entries must be finite")
        if np.abs(m.T @ m - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("matrix columns are not orthonormal")
        if abs(float(np.linalg.det(m)) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("matrix determinant is not +1 (improper rotation)")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)


@dataclass(frozen=True)
class PoseVectors:
    """Three 3-vectors as regressed by the network; not necessarily orthonormal."""

    v1: np.ndarray
    v2: np.ndarray
    v3: np.ndarray

    def __post_init__(self):
        for name in ("v1", "v2", "v3"):
            v = np.array(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ValueError(f"{name} must be a 3-vector, got shape {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def _yaw_matrix(yaw_rad: float) -> np.ndarray:
    c, s = math.cos(yaw_rad), math.sin(yaw_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _pitch_matrix(pitch_rad: float) -> np.ndarray:
    c, s = math.cos(pitch_rad), math.sin(pitch_rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _roll_matrix(roll_rad: float) -> np.ndarray:
    c, s = math.cos(roll_rad), math.sin(roll_rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def euler_to_matrix(angles: EulerAngles) -> RotationMatrix:
    """Compose yaw, pitch and roll into a rotation matrix (yaw * pitch * roll)."""
    y = math.radians(angles.yaw)
    p = math.radians(angles.pitch)
    r = math.radians(angles.roll)
    m = _yaw_matrix(y) @ _pitch_matrix(p) @ _roll_matrix(r)
    return RotationMatrix(m)


def matrix_to_euler(rotation: RotationMatrix) -> EulerAngles:
    """Extract (yaw, pitch, roll) in degrees from a rotation matrix.

    At gimbal lock (|cos pitch| < 1e-7) the yaw/roll split is not unique;
    by convention roll is set to 0 and the in-plane rotation folds into yaw.
    """
    m = rotation.m
    pitch = math.asin(min(1.0, max(-1.0, -m[2, 0])))
    if math.hypot(m[0, 0], m[1, 0]) < GIMBAL_LOCK_TOL:
        yaw = math.atan2(-m[0, 1], m[1, 1])
        roll = 0.0
    else:
        yaw = math.atan2(m[1, 0], m[0, 0])
        roll = math.atan2(m[2, 1], m[2, 2])
    return EulerAngles(math.degrees(yaw), math.degrees(pitch), math.degrees(roll))


def pose_vectors_from_matrix(rotation: RotationMatrix) -> PoseVectors:
    """The three columns of the rotation matrix, in order."""
    m = rotation.m
    return PoseVectors(m[:, 0].copy(), m[:, 1].copy(), m[:, 2].copy())


def matrix_from_pose_vectors(vectors: PoseVectors) -> np.ndarray:
    """Assemble a (generally non-orthonormal) 3x3 matrix with the given columns."""
    return np.column_stack([vectors.v1, vectors.v2, vectors.v3])


def _as_matrix3(m) -> np.ndarray:
    a = np.array(m, dtype=float)
    if a.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    return a


def _complete_orthonormal(u: np.ndarray, have: list[int], need: list[int]) -> None:
    """Fill the columns listed in `need` so that u becomes orthonormal."""
    for col in need:
        if len(have) == 2:
            cand = np.cross(u[:, have[0]], u[:, have[1]])
        elif len(have) == 1:
            base = u[:, have[0]]
            seed = np.zeros(3)
            seed[int(np.argmin(np.abs(base)))] = 1.0
            cand = seed - (seed @ base) * base
        else:
            cand = np.zeros(3)
            cand[col] = 1.0  # no constraints: use coordinate axes
        norm = float(np.linalg.norm(cand))
        u[:, col] = cand / norm if norm > 0 else cand
        have.append(col)


def svd3(m) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Singular value decomposition of a 3x3 matrix by one-sided Jacobi.

    Returns (U, sigma, V) with M = U @ diag(sigma) @ V.T, sigma sorted
    descending and non-negative, U and V orthogonal.  Rank-deficient inputs
    are allowed; missing left singular vectors are completed to an
    orthonormal basis.
    """
    a = _as_matrix3(m).copy()
    v = np.eye(3)
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(2):
            for q in range(p + 1, 3):
                app = float(a[:, p] @ a[:, p])
                aqq = float(a[:, q] @ a[:, q])
                apq = float(a[:, p] @ a[:, q])
                scale = math.sqrt(app * aqq)
                if scale == 0.0 or abs(apq) <= _JACOBI_TOL * scale:
                    continue
                zeta = (aqq - app) / (2.0 * apq)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.hypot(1.0, zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                ap, aq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
                rotated = True
        if not rotated:
            break

    sigma = np.linalg.norm(a, axis=0)
    order = np.argsort(-sigma, kind="stable")
    a = a[:, order]
    v = v[:, order]
    sigma = sigma[order]

    u = np.zeros((3, 3))
    rank_tol = sigma[0] * 1e-13
    have: list[int] = []
    need: list[int] = []
    for i in range(3):
        if sigma[i] > rank_tol and sigma[i] > 0.0:
            u[:, i] = a[:, i] / sigma[i]
            have.append(i)
        else:
            need.append(i)
    if need:
        _complete_orthonormal(u, have, need)
    return u, sigma, v


def nearest_rotation(m) -> RotationMatrix:
    """Project a 3x3 matrix to the closest proper rotation (Frobenius norm).

    Uses the SVD factors U, V and applies diag(1, 1, s) with s = sign of
    det(U V^T), so the result always has determinant +1 even when the input
    contains a reflection.  Requires numerical rank >= 2; below that the
    nearest rotation is not unique.
    """
    a = _as_matrix3(m)
    u, sigma, v = svd3(a)
    if sigma[0] == 0.0 or sigma[1] <= sigma[0] * 1e-12:
        raise DegenerateMatrixError(
            "matrix has rank < 2; nearest rotation is not unique"
        )
    sign = 1.0 if float(np.linalg.det(u @ v.T)) > 0.0 else -1.0
    r = (u * np.array([1.0, 1.0, sign])) @ v.T
    return RotationMatrix(r)


def angular_error(pred: EulerAngles, truth: EulerAngles) -> tuple[float, float, float]:
    """Per-angle absolute error in degrees, wrapped so each lies in [0, 180]."""
    errs = []
    for p, t in zip(pred.as_tuple(), truth.as_tuple()):
        d = abs(math.fmod(p - t, 360.0))
        errs.append(min(d, 360.0 - d))
    return (errs[0], errs[1], errs[2])
