"""Joint face detection and head pose estimation at desk scale.

The package couples a single-stage detection grid with a rotation-matrix
pose representation: the network regresses the three column vectors of the
head's rotation matrix alongside each anchored box, a multitask loss ties
the two branches together, and predictions are repaired to proper rotations
with an SVD projection before angles are read off for evaluation.
"""

from .estimator import FacePoseDetector
from .grid import (
    Annotation,
    DEFAULT_ANCHORS,
    Detection,
    GridSpec,
    GridTensor,
    GroundTruth,
    activate,
    channels_for,
    decode,
    encode_batch,
    encode_targets,
    iou,
    nms,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    grad_check,
    multitask_loss,
    ortho_loss,
    pose_loss,
    pose_loss_grad,
    total_loss,
    vector_mse,
)
from .metrics import (
    EvalConfig,
    EvalReport,
    detection_iou_score,
    evaluate,
    match_detections,
    pose_mae,
)
from .network import (
    Model,
    ModelConfig,
    Phase,
    PhaseSchedule,
    forward,
    init_network,
    predict,
    train,
    train_step,
)
from .rotation import (
    EulerAngles,
    PoseVectors,
    RotationMatrix,
    angular_error,
    euler_to_matrix,
    matrix_from_pose_vectors,
    matrix_to_euler,
    nearest_rotation,
    pose_vectors_from_matrix,
    svd3,
)
from .synthetic import gen_synthetic

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "DEFAULT_ANCHORS",
    "Detection",
    "EulerAngles",
    "EvalConfig",
    "EvalReport",
    "FacePoseDetector",
    "GridSpec",
    "GridTensor",
    "GroundTruth",
    "LossBreakdown",
    "LossWeights",
    "Model",
    "ModelConfig",
    "Phase",
    "PhaseSchedule",
    "PoseVectors",
    "RotationMatrix",
    "activate",
    "angular_error",
    "channels_for",
    "decode",
    "detection_iou_score",
    "encode_batch",
    "encode_targets",
    "euler_to_matrix",
    "evaluate",
    "forward",
    "gen_synthetic",
    "grad_check",
    "init_network",
    "iou",
    "match_detections",
    "matrix_from_pose_vectors",
    "matrix_to_euler",
    "multitask_loss",
    "nearest_rotation",
    "nms",
    "ortho_loss",
    "pose_loss",
    "pose_loss_grad",
    "pose_mae",
    "pose_vectors_from_matrix",
    "predict",
    "svd3",
    "total_loss",
    "train",
    "train_step",
    "vector_mse",
    "__version__",
]
