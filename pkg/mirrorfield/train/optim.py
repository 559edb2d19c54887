from dataclasses import dataclass
import math

import numpy as np

from mirrorfield.configbase import JsonConfig
from mirrorfield.field.params import LATTICE_NAMES, FieldParams, GradientBuffer


@dataclass
class OptimConfig(JsonConfig):
    """Adam with bias correction and a cosine decaying learning rate

    Args:
        learningRate (float): Initial learning rate
        beta1, beta2 (float): Decay rates of the first and second moments
        eps (float): Added to the root of the second moment
        finalLearningRateRatio (float): Learning rate at the last step, relative to\
          the initial one
    """

    learningRate: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    finalLearningRateRatio: float = 0.1

    def __post_init__(self):
        if self.learningRate <= 0:
            raise ValueError(f"learningRate must be positive, got {self.learningRate}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0 <= self.finalLearningRateRatio <= 1:
            raise ValueError("finalLearningRateRatio must lie in [0, 1]")


def cosineLearningRate(
    baseLearningRate: float, step: int, totalSteps: int, finalRatio: float
) -> float:
    """Cosine decay from baseLearningRate at step 0 to finalRatio times it at
    totalSteps

    >>> cosineLearningRate(1.0, 0, 100, 0.1), cosineLearningRate(1.0, 100, 100, 0.1)
    (1.0, 0.1)
    """
    if totalSteps <= 0:
        return baseLearningRate
    progress = min(max(step, 0), totalSteps) / totalSteps
    final = baseLearningRate * finalRatio
    return final + (baseLearningRate - final) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class OptimState:
    """Adam state of a FieldParams: one first and second moment accumulator per
    lattice, the number of applied updates and the hyperparameters"""

    firstMoment: "dict[str, np.ndarray]"
    secondMoment: "dict[str, np.ndarray]"
    step: int
    learningRate: float
    beta1: float
    beta2: float
    eps: float

    @staticmethod
    def create(params: FieldParams, config: "OptimConfig|None" = None) -> "OptimState":
        config = OptimConfig() if config is None else config
        return OptimState(
            firstMoment={n: np.zeros_like(getattr(params, n)) for n in LATTICE_NAMES},
            secondMoment={n: np.zeros_like(getattr(params, n)) for n in LATTICE_NAMES},
            step=0,
            learningRate=config.learningRate,
            beta1=config.beta1,
            beta2=config.beta2,
            eps=config.eps,
        )

    def checkShapes(self, params: FieldParams):
        for name in LATTICE_NAMES:
            shape = getattr(params, name).shape
            if self.firstMoment[name].shape != shape or self.secondMoment[name].shape != shape:
                raise ValueError(f"Optimizer state of {name} does not match {shape}")

    def scalars(self) -> dict:
        return {
            "step": self.step,
            "learningRate": self.learningRate,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }


def adamUpdate(
    params: FieldParams,
    grad: GradientBuffer,
    state: OptimState,
    learningRate: "float|None" = None,
) -> bool:
    """Apply one bias-corrected Adam update to params in place. Nothing changes
    when every gradient is exactly zero

    Returns:
        bool: Whether an update was applied
    """
    state.checkShapes(params)
    grad.checkShapes(params)
    if grad.isZero():
        return False
    if learningRate is not None:
        state.learningRate = float(learningRate)
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for name in LATTICE_NAMES:
        g = getattr(grad, name)
        m = state.firstMoment[name]
        v = state.secondMoment[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = state.learningRate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        getattr(params, name).__isub__(update)
    return True
