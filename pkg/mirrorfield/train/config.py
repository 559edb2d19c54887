from dataclasses import dataclass
from typing import Tuple
import os

import yaml

from mirrorfield.configbase import JsonConfig
from mirrorfield.field.params import FieldConfig
from mirrorfield.render.config import RenderConfig
from mirrorfield.train.optim import OptimConfig
from mirrorfield.train.schedule import LossWeights, Schedule

NORMAL_REG_TARGETS = ("smoothed", "analytic")


@dataclass
class ScheduleConfig(JsonConfig):
    """Progressive schedule expressed as fractions of the training length"""

    stage1Fraction: float = 0.2
    stage2Fraction: float = 0.6
    k: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    maskLossInStage3: bool = True


@dataclass
class TrainConfig(JsonConfig):
    """Everything a training run depends on

    Args:
        steps (int): Optimisation steps
        raysPerBatch (int): Camera rays per step
        viewsPerBatch (int): Views the rays of a step are drawn from
        chunkSize (int): Rays per work item of the forward and backward passes
        seed (int): Seed of the initialisation, the batches and the sample streams
        field (FieldConfig): Lattice layout and initialisation
        render (RenderConfig): Renderer and tracer settings
        lossWeights (LossWeights): Coefficients of stages 2 and 3
        schedule (ScheduleConfig): Stage boundaries and the masked target color
        optim (OptimConfig): Optimiser settings
        planeQuads (int): Quads drawn per step for the plane consistency loss
        componentAwareQuads (bool): Draw the four points of a quad from one\
          connected mirror region instead of one image
        normalRegTarget (str): Normal penalised by the forward facing loss,\
          "smoothed" or "analytic"
        normalWeightThreshold (float): Samples below this compositing weight are\
          ignored by the normal losses
        bceClampEps (float): Clamp of the mask cross entropy
        maskedStage (bool): False trains with the full photometric loss from step 0
        reflectWithAnalyticNormal (bool): Reflect rays at the density gradient\
          normal instead of the smoothed normal field
        jointOptimization (bool): False stops the photometric loss from reaching the\
          reflection geometry and the blend weights
        planeConsistency (bool): Enable the plane consistency loss
        forwardNormal (bool): Enable the forward facing normal loss
        bboxMarginM (float): Margin added around the scene bounds when the field\
          box is fitted to the dataset (m)
        checkpointEvery (int): Steps between checkpoints, 0 only writes the last one
        logEvery (int): Steps between logged summaries
    """

    steps: int = 5000
    raysPerBatch: int = 1024
    viewsPerBatch: int = 4
    chunkSize: int = 256
    seed: int = 0
    field: FieldConfig = None  # type: ignore
    render: RenderConfig = None  # type: ignore
    lossWeights: LossWeights = None  # type: ignore
    schedule: ScheduleConfig = None  # type: ignore
    optim: OptimConfig = None  # type: ignore
    planeQuads: int = 64
    componentAwareQuads: bool = False
    normalRegTarget: str = "smoothed"
    normalWeightThreshold: float = 1e-3
    bceClampEps: float = 1e-6
    maskedStage: bool = True
    reflectWithAnalyticNormal: bool = False
    jointOptimization: bool = True
    planeConsistency: bool = True
    forwardNormal: bool = True
    bboxMarginM: float = 0.1
    checkpointEvery: int = 1000
    logEvery: int = 50

    def __post_init__(self):
        self.field = FieldConfig() if self.field is None else self.field
        self.render = RenderConfig() if self.render is None else self.render
        self.lossWeights = LossWeights() if self.lossWeights is None else self.lossWeights
        self.schedule = ScheduleConfig() if self.schedule is None else self.schedule
        self.optim = OptimConfig() if self.optim is None else self.optim
        self.validate()

    def validate(self):
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        for key in ("raysPerBatch", "viewsPerBatch", "chunkSize"):
            if getattr(self, key) < 1:
                raise ValueError(f"{key} must be at least 1, got {getattr(self, key)}")
        if self.normalRegTarget not in NORMAL_REG_TARGETS:
            raise ValueError(
                f"normalRegTarget must be one of {', '.join(NORMAL_REG_TARGETS)}, "
                f"got '{self.normalRegTarget}'"
            )
        if self.planeQuads < 0:
            raise ValueError("planeQuads must be nonnegative")
        if not 0 < self.bceClampEps < 0.5:
            raise ValueError("bceClampEps must lie in (0, 0.5)")

    def buildSchedule(self) -> Schedule:
        """The step based schedule of this run, with the ablation switches applied"""
        weights = self.lossWeights
        if not self.planeConsistency:
            weights = LossWeights(**{**weights.toJson(), "lambdaPc": 0.0})
        if not self.forwardNormal:
            weights = LossWeights(**{**weights.toJson(), "lambdaNreg": 0.0})
        return Schedule.fromFractions(
            max(self.steps, 1),
            self.schedule.stage1Fraction,
            self.schedule.stage2Fraction,
            weights=weights,
            k=self.schedule.k,
            maskLossInStage3=self.schedule.maskLossInStage3,
            maskedStage=self.maskedStage,
        )

    def tracerRenderConfig(self) -> RenderConfig:
        if self.reflectWithAnalyticNormal:
            return RenderConfig.fromJson({**self.render.toJson(), "normalSource": "analytic"})
        return self.render


def loadTrainConfig(path: str) -> TrainConfig:
    """Read a YAML training configuration. Missing keys keep their defaults,
    unknown keys raise a ValueError"""
    with open(path, "r", encoding="utf8") as f:
        data = yaml.safe_load(f) or {}
    try:
        return TrainConfig.fromJson(data)
    except (TypeError, ValueError) as ex:
        raise ValueError(f"Invalid training configuration {path}: {ex}") from ex


def saveTrainConfig(config: TrainConfig, path: str):
    tmpPath = f"{path}.tmp"
    with open(tmpPath, "w", encoding="utf8") as f:
        yaml.safe_dump(config.toJson(), f, sort_keys=True)
    os.replace(tmpPath, path)
