from dataclasses import dataclass, replace
from typing import Tuple

from mirrorfield.configbase import JsonConfig

PHOTOMETRIC_VARIANTS = ("masked", "full")


@dataclass
class LossWeights(JsonConfig):
    """Coefficients of the loss terms

    Args:
        lambdaC (float): Photometric loss (plain or masked)
        lambdaM (float): Mirror mask binary cross entropy
        lambdaPc (float): Plane consistency of mirror points
        lambdaN (float): Smoothed normals against analytic normals
        lambdaNreg (float): Forward facing normals
    """

    lambdaC: float = 1.0
    lambdaM: float = 0.1
    lambdaPc: float = 0.01
    lambdaN: float = 0.01
    lambdaNreg: float = 0.01

    def __post_init__(self):
        for key, value in self.toJson().items():
            if not value >= 0:
                raise ValueError(f"Loss weight {key} must be nonnegative, got {value}")

    def photometricOnly(self) -> "LossWeights":
        return LossWeights(self.lambdaC, 0.0, 0.0, 0.0, 0.0)


@dataclass
class Schedule(JsonConfig):
    """Progressive training: stage 1 (step < stage1End) trains the masked colors
    only, stage 2 (step < stage2End) adds every regulariser, stage 3 switches to
    the full photometric loss

    Args:
        stage1End (int): First step of stage 2
        stage2End (int): First step of stage 3
        weights (LossWeights): Coefficients of stages 2 and 3
        k (tuple[float, float, float]): Color mirror pixels are pulled towards by\
          the masked photometric loss
        maskLossInStage3 (bool): Keep the mask loss active in stage 3
        maskedStage (bool): Use the masked photometric loss in stages 1 and 2.\
          False trains with the full photometric loss from step 0
    """

    stage1End: int = 1
    stage2End: int = 1
    weights: LossWeights = None  # type: ignore
    k: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    maskLossInStage3: bool = True
    maskedStage: bool = True

    def __post_init__(self):
        if self.weights is None:
            self.weights = LossWeights()
        self.k = tuple(float(c) for c in self.k)  # type: ignore
        if not 0 < self.stage1End <= self.stage2End:
            raise ValueError(
                f"Expected 0 < stage1End <= stage2End, got {self.stage1End} and "
                f"{self.stage2End}"
            )
        if len(self.k) != 3 or not all(0.0 <= c <= 1.0 for c in self.k):
            raise ValueError(f"k must be a color in [0, 1]^3, got {self.k}")

    @staticmethod
    def fromFractions(
        totalSteps: int,
        stage1Fraction: float = 0.2,
        stage2Fraction: float = 0.6,
        **kwargs,
    ) -> "Schedule":
        """Schedule whose stage boundaries are fractions of the total step count

        >>> s = Schedule.fromFractions(5000)
        >>> (s.stage1End, s.stage2End)
        (1000, 3000)
        """
        if not 0 < stage1Fraction <= stage2Fraction:
            raise ValueError("Expected 0 < stage1Fraction <= stage2Fraction")
        stage1End = max(1, int(round(stage1Fraction * totalSteps)))
        stage2End = max(stage1End, int(round(stage2Fraction * totalSteps)))
        return Schedule(stage1End=stage1End, stage2End=stage2End, **kwargs)

    def stage(self, step: int) -> int:
        if step < 0:
            raise ValueError(f"step must be nonnegative, got {step}")
        if step < self.stage1End:
            return 1
        if step < self.stage2End:
            return 2
        return 3


def scheduleAt(schedule: Schedule, step: int) -> "tuple[LossWeights, str]":
    """Loss weights and photometric variant ("masked" or "full") of a step

    Example:
      >>> weights, variant = scheduleAt(Schedule(stage1End=10, stage2End=20), 0)
      >>> weights.lambdaM, variant
      (0.0, 'masked')
    """
    stage = schedule.stage(step)
    masked = "masked" if schedule.maskedStage else "full"
    if stage == 1:
        return schedule.weights.photometricOnly(), masked
    if stage == 2:
        return schedule.weights, masked
    if schedule.maskLossInStage3:
        return schedule.weights, "full"
    return replace(schedule.weights, lambdaM=0.0), "full"
