"""Scikit-learn style estimator over the joint detector.

``FacePoseDetector.fit(X, y)`` trains the desk-scale network with the
three-phase schedule on images ``X`` and per-image annotations ``y``;
``predict`` returns NMS-filtered detections per image and ``score`` the
mean detection IoU against ground truth.  All constructor arguments are
plain values, so ``get_params`` / ``set_params`` / ``clone`` compose with
the usual scikit-learn machinery.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .grid import DEFAULT_ANCHORS
from .losses import LossWeights
from .metrics import EvalConfig, EvalReport, evaluate
from .network import ModelConfig, Phase, PhaseSchedule, predict as net_predict, train
from .validation import check_annotations, check_images

_POSE_FORMATS = {"vectors": 9, "euler": 3}


class FacePoseDetector(BaseEstimator):
    """Joint face detection and head pose estimation on a K x K grid."""

    def __init__(
        self,
        image_size=56,
        grid_size=7,
        pose_format="vectors",
        box_activation="sigmoid",
        anchors=DEFAULT_ANCHORS,
        backbone_widths=(8, 16, 24, 32),
        backbone_strides=(2, 2, 2, 1),
        detect_hidden=32,
        pose_hidden=32,
        lambda_xy=1.0,
        lambda_wh=1.0,
        lambda_cls=1.0,
        lambda_obj=1.0,
        alpha=0.5,
        phase_epochs=(5, 5, 10),
        phase_batch_sizes=(8, 8, 8),
        phase_learning_rates=(1e-2, 1e-3, 1e-3),
        conf_threshold=0.4,
        nms_iou_threshold=0.45,
        match_iou_threshold=0.5,
        seed=0,
    ):
        self.image_size = image_size
        self.grid_size = grid_size
        self.pose_format = pose_format
        self.box_activation = box_activation
        self.anchors = anchors
        self.backbone_widths = backbone_widths
        self.backbone_strides = backbone_strides
        self.detect_hidden = detect_hidden
        self.pose_hidden = pose_hidden
        self.lambda_xy = lambda_xy
        self.lambda_wh = lambda_wh
        self.lambda_cls = lambda_cls
        self.lambda_obj = lambda_obj
        self.alpha = alpha
        self.phase_epochs = phase_epochs
        self.phase_batch_sizes = phase_batch_sizes
        self.phase_learning_rates = phase_learning_rates
        self.conf_threshold = conf_threshold
        self.nms_iou_threshold = nms_iou_threshold
        self.match_iou_threshold = match_iou_threshold
        self.seed = seed

    def _pose_params(self) -> int:
        if self.pose_format not in _POSE_FORMATS:
            raise ValueError(
                f"pose_format must be one of {sorted(_POSE_FORMATS)}, got {self.pose_format!r}"
            )
        return _POSE_FORMATS[self.pose_format]

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            image_size=self.image_size,
            grid_size=self.grid_size,
            pose_params=self._pose_params(),
            box_activation=self.box_activation,
            anchors=tuple(tuple(a) for a in self.anchors),
            backbone_widths=tuple(self.backbone_widths),
            backbone_strides=tuple(self.backbone_strides),
            detect_hidden=self.detect_hidden,
            pose_hidden=self.pose_hidden,
            seed=self.seed,
        )

    def _schedule(self) -> PhaseSchedule:
        frozen = ({"backbone", "pose_head"}, {"pose_head"}, set())
        if not (len(self.phase_epochs) == len(self.phase_batch_sizes)
                == len(self.phase_learning_rates) == 3):
            raise ValueError("phase settings must each have exactly three entries")
        return PhaseSchedule(
            phases=tuple(
                Phase(int(e), int(b), float(lr), frozenset(fz))
                for e, b, lr, fz in zip(
                    self.phase_epochs, self.phase_batch_sizes,
                    self.phase_learning_rates, frozen,
                )
            )
        )

    def _loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_xy=self.lambda_xy,
            lambda_wh=self.lambda_wh,
            lambda_cls=self.lambda_cls,
            lambda_obj=self.lambda_obj,
            alpha=self.alpha,
        )

    def fit(self, X, y):
        """Train on images X with per-image annotations y."""
        images = check_images(X, self.image_size)
        annotations = check_annotations(y, images.shape[0])
        cfg = self._model_config()
        data = list(zip(images, annotations))
        self.model_, self.history_ = train(cfg, self._schedule(), data, self._loss_weights())
        self.config_ = cfg
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "this FacePoseDetector is not fitted yet; call fit first"
            )

    def predict(self, X):
        """NMS-filtered detections for each image."""
        self._check_fitted()
        images = check_images(X, self.image_size)
        return net_predict(
            self.model_, images,
            conf_threshold=self.conf_threshold,
            nms_iou_threshold=self.nms_iou_threshold,
        )

    def evaluate(self, X, y) -> EvalReport:
        """Full evaluation report (detection IoU + pose MAE) on (X, y)."""
        self._check_fitted()
        images = check_images(X, self.image_size)
        annotations = check_annotations(y, images.shape[0])
        preds = self.predict(images)
        preds_by_image = {ann.image_id: d for ann, d in zip(annotations, preds)}
        config = EvalConfig(
            match_iou_threshold=self.match_iou_threshold,
            pose_params=self._pose_params(),
            box_activation=self.box_activation,
            loss_weights=self._loss_weights(),
        )
        return evaluate(preds_by_image, annotations, config)

    def score(self, X, y) -> float:
        """Mean detection IoU (misses count as zero), higher is better."""
        return self.evaluate(X, y).mean_iou
