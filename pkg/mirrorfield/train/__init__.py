from mirrorfield.train.config import ScheduleConfig, TrainConfig, loadTrainConfig, saveTrainConfig
from mirrorfield.train.schedule import LossWeights, Schedule, scheduleAt
from mirrorfield.train.losses import (
    LossParts,
    lossForwardNormal,
    lossMaskBce,
    lossMaskedPhotometric,
    lossNormalSupervision,
    lossPhotometric,
    lossPlaneConsistency,
    totalLoss,
)
from mirrorfield.train.optim import OptimConfig, OptimState, adamUpdate, cosineLearningRate
from mirrorfield.train.batch import TrainBatch, sampleTrainBatch
from mirrorfield.train.quads import samplePlaneQuads
from mirrorfield.train.step import NonFiniteLossError, StepResult, lossAndGradients, trainStep

__all__ = [
    "ScheduleConfig",
    "TrainConfig",
    "loadTrainConfig",
    "saveTrainConfig",
    "LossWeights",
    "Schedule",
    "scheduleAt",
    "LossParts",
    "lossForwardNormal",
    "lossMaskBce",
    "lossMaskedPhotometric",
    "lossNormalSupervision",
    "lossPhotometric",
    "lossPlaneConsistency",
    "totalLoss",
    "OptimConfig",
    "OptimState",
    "adamUpdate",
    "cosineLearningRate",
    "TrainBatch",
    "sampleTrainBatch",
    "samplePlaneQuads",
    "NonFiniteLossError",
    "StepResult",
    "lossAndGradients",
    "trainStep",
]
