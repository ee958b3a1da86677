"""Run configuration: one JSON document that pins an entire experiment.

Unknown keys are rejected everywhere so typos cannot silently fall back to
defaults, and the saved copy materializes every default so a run directory
is self-describing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .losses import LossWeights
from .network import ModelConfig, PhaseSchedule


@dataclass(frozen=True)
class EvalSettings:
    conf_threshold: float = 0.4
    nms_iou_threshold: float = 0.45
    match_iou_threshold: float = 0.5

    def to_dict(self) -> dict:
        return {
            "conf_threshold": self.conf_threshold,
            "nms_iou_threshold": self.nms_iou_threshold,
            "match_iou_threshold": self.match_iou_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalSettings":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown eval keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class Paths:
    train_data: str = ""
    val_data: str = ""
    out_dir: str = ""

    def to_dict(self) -> dict:
        return {"train_data": self.train_data, "val_data": self.val_data, "out_dir": self.out_dir}

    @classmethod
    def from_dict(cls, d: dict) -> "Paths":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown path keys: {sorted(unknown)}")
        return cls(**{k: str(v) for k, v in d.items()})


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: PhaseSchedule = field(default_factory=PhaseSchedule)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    eval: EvalSettings = field(default_factory=EvalSettings)
    paths: Paths = field(default_factory=Paths)

    def __post_init__(self):
        # one seed rules the run; the model copy carries it everywhere
        if self.model.seed != self.seed:
            object.__setattr__(
                self, "model", ModelConfig.from_dict({**self.model.to_dict(), "seed": self.seed})
            )

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "model": self.model.to_dict(),
            "schedule": self.schedule.to_dict(),
            "loss_weights": {
                "lambda_xy": self.loss_weights.lambda_xy,
                "lambda_wh": self.loss_weights.lambda_wh,
                "lambda_cls": self.loss_weights.lambda_cls,
                "lambda_obj": self.loss_weights.lambda_obj,
                "alpha": self.loss_weights.alpha,
            },
            "eval": self.eval.to_dict(),
            "paths": self.paths.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "seed" in d:
            kwargs["seed"] = int(d["seed"])
        if "model" in d:
            kwargs["model"] = ModelConfig.from_dict(d["model"])
        if "schedule" in d:
            kwargs["schedule"] = PhaseSchedule.from_dict(d["schedule"])
        if "loss_weights" in d:
            lw = d["loss_weights"]
            unknown = set(lw) - {"lambda_xy", "lambda_wh", "lambda_cls", "lambda_obj", "alpha"}
            if unknown:
                raise ValueError(f"unknown loss weight keys: {sorted(unknown)}")
            kwargs["loss_weights"] = LossWeights(**{k: float(v) for k, v in lw.items()})
        if "eval" in d:
            kwargs["eval"] = EvalSettings.from_dict(d["eval"])
        if "paths" in d:
            kwargs["paths"] = Paths.from_dict(d["paths"])
        return cls(**kwargs)
