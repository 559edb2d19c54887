from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from mirrorfield.field.params import FieldParams, GradientBuffer, mergeGradientBuffers
from mirrorfield.field.query import (
    AnalyticNormalRecord,
    accumulateAnalyticNormalGradients,
    analyticNormalsBatch,
)
from mirrorfield.pool import WorkerPool
from mirrorfield.render.sampling import RayStreams
from mirrorfield.render.tracer import TraceResult, WhittedTracer
from mirrorfield.render.volume import RadiometryCotangent
from mirrorfield.train import losses
from mirrorfield.train.batch import TrainBatch
from mirrorfield.train.config import TrainConfig
from mirrorfield.train.optim import OptimState, adamUpdate, cosineLearningRate
from mirrorfield.train.quads import samplePlaneQuadIndices
from mirrorfield.train.schedule import LossWeights, Schedule, scheduleAt

QUAD_STREAM = 1 << 20


class NonFiniteLossError(ArithmeticError):
    "Raised when a training step produces a non-finite loss or gradient"

    def __init__(self, step: int, terms: "dict[str, float]"):
        self.step = step
        self.terms = terms
        bad = ", ".join(f"{k}={v}" for k, v in terms.items() if not np.isfinite(v))
        super().__init__(f"Non-finite loss at step {step}: {bad or 'gradient'}")


def stepSeed(seed: int, step: int) -> int:
    """Seed of the random streams of one training step"""
    return int(np.random.SeedSequence([seed, step]).generate_state(1, np.uint64)[0] >> 1)


@dataclass
class ChunkNormals:
    """Analytic normals at the selected camera-ray samples of one chunk"""

    selected: np.ndarray  # (r, N) bool
    record: AnalyticNormalRecord  # over the selected samples


@dataclass
class LossEvaluation:
    """Loss terms of a batch and what they were computed with

    Args:
        parts (LossParts): Value of every loss term
        total (float): Weighted total
        failedRays (int): Camera rays that met a degenerate normal
        quads (np.ndarray): (Q, 4) ray indices of the plane consistency quads
        normals (list[ChunkNormals]): Analytic normal targets per chunk; pass them\
          back to lossAndGradients to evaluate the loss with the same targets
    """

    parts: losses.LossParts
    total: float
    failedRays: int
    quads: np.ndarray
    normals: "List[Optional[ChunkNormals]]"


def chunkIndices(nRays: int, chunkSize: int) -> "list[np.ndarray]":
    return [np.arange(s, min(s + chunkSize, nRays)) for s in range(0, nRays, chunkSize)]


def _chunkNormals(
    params: FieldParams, tape, threshold: float
) -> ChunkNormals:
    selected = tape.weights > threshold
    points = tape.rays.origins[:, None, :] + tape.t[:, :, None] * tape.rays.dirs[:, None, :]
    return ChunkNormals(selected, analyticNormalsBatch(params, points[selected]))


def lossAndGradients(
    params: FieldParams,
    grad: GradientBuffer,
    batch: TrainBatch,
    weights: LossWeights,
    variant: str,
    config: TrainConfig,
    seed: int,
    pool: "WorkerPool|None" = None,
    k=(0.0, 0.0, 0.0),
    normals: "Optional[List[Optional[ChunkNormals]]]" = None,
    step: int = -1,
) -> LossEvaluation:
    """Trace the batch, evaluate every loss term and add the gradient of the
    weighted total into grad

    Args:
        params (FieldParams): The field being trained
        grad (GradientBuffer): Accumulators, typically reset by the caller
        batch (TrainBatch): Camera rays with supervision
        weights (LossWeights): Loss coefficients of this step
        variant (str): "masked" or "full" photometric loss
        config (TrainConfig): Training settings
        seed (int): Seed of the sample streams and of the quad choice
        pool (WorkerPool, optional): Workers for the chunks. Defaults to inline
        k (tuple, optional): Target color of mirror rays in the masked variant
        normals (list[ChunkNormals], optional): Analytic normal targets to reuse
        step (int, optional): Step number for diagnostics

    Returns:
        LossEvaluation

    Raises:
        NonFiniteLossError: when a loss term or a gradient is not finite; grad is
            then left untouched
    """
    if len(batch) == 0:
        raise ValueError("Cannot train on an empty batch")
    if variant not in ("masked", "full"):
        raise ValueError(f"Unknown photometric variant '{variant}'")
    pool = WorkerPool(1) if pool is None else pool
    tracer = WhittedTracer(
        params,
        config.tracerRenderConfig(),
        recordTape=True,
        jointOptimization=config.jointOptimization,
    )
    chunks = chunkIndices(len(batch), config.chunkSize)

    def forward(item) -> TraceResult:
        index, rows = item
        return tracer.trace(batch.rays.subset(rows), RayStreams(seed, index))

    results: "list[TraceResult]" = pool.map(forward, list(enumerate(chunks)))
    color = np.concatenate([r.color for r in results])
    reflprob = np.concatenate([r.primary.reflprob for r in results])
    depth = np.concatenate([r.primary.depth for r in results])
    failedRays = int(sum(int(np.sum(r.failed)) for r in results))

    parts = losses.LossParts()
    targets = (
        losses.maskedTargets(batch.colors, batch.mask, k)
        if variant == "masked"
        else batch.colors
    )
    parts.photometric = losses.lossPhotometric(color, targets)
    dColor = weights.lambdaC * losses.photometricGrad(color, targets)

    parts.mask = losses.lossMaskBce(reflprob, batch.mask, config.bceClampEps)
    dReflprob = weights.lambdaM * losses.maskBceGrad(reflprob, batch.mask, config.bceClampEps)

    dDepth = np.zeros(len(batch))
    quads = np.zeros((0, 4), dtype=np.int64)
    if weights.lambdaPc > 0 and config.planeQuads > 0:
        quadRng = np.random.default_rng(np.random.SeedSequence([seed, QUAD_STREAM]))
        quads = samplePlaneQuadIndices(
            batch, quadRng, config.planeQuads, config.componentAwareQuads
        )
        points = batch.rays.origins + depth[:, None] * batch.rays.dirs
        parts.planeConsistency = losses.lossPlaneConsistency(points[quads])
        dPoints = weights.lambdaPc * losses.planeConsistencyGrad(points[quads])
        dRayPoints = np.zeros((len(batch), 3))
        np.add.at(dRayPoints, quads.reshape(-1), dPoints.reshape(-1, 3))
        dDepth = np.sum(dRayPoints * batch.rays.dirs, axis=1)

    useAnalytic = weights.lambdaN > 0 or (
        weights.lambdaNreg > 0 and config.normalRegTarget == "analytic"
    )
    if normals is None:
        normals = [
            _chunkNormals(params, r.levels[0].tape, config.normalWeightThreshold)
            if useAnalytic
            else None
            for r in results
        ]
    sampleCots = []
    for result, chunkNormals in zip(results, normals):
        tape = result.levels[0].tape
        sampleNormal = np.zeros_like(tape.normal)
        sampleWeight = np.zeros_like(tape.weights)
        selected = tape.weights > config.normalWeightThreshold
        analyticCot = None
        if useAnalytic and chunkNormals is not None:
            record = chunkNormals.record
            smoothed = tape.normal[chunkNormals.selected]
            w = tape.weights[chunkNormals.selected] * record.valid
            parts.normalSupervision += losses.lossNormalSupervision(smoothed, record.normal, w)
            dSmoothed, dW = losses.normalSupervisionGrad(smoothed, record.normal, w)
            sampleNormal[chunkNormals.selected] += weights.lambdaN * dSmoothed
            sampleWeight[chunkNormals.selected] += weights.lambdaN * dW * record.valid
        dirs = np.broadcast_to(tape.rays.dirs[:, None, :], tape.normal.shape)
        if config.normalRegTarget == "smoothed":
            parts.normalRegularizer += losses.lossForwardNormal(tape.normal[selected], dirs[selected])
            sampleNormal[selected] += weights.lambdaNreg * losses.forwardNormalGrad(
                tape.normal[selected], dirs[selected]
            )
        elif chunkNormals is not None:
            record = chunkNormals.record
            viewDirs = dirs[chunkNormals.selected]
            parts.normalRegularizer += losses.lossForwardNormal(record.normal, viewDirs)
            analyticCot = weights.lambdaNreg * losses.forwardNormalGrad(record.normal, viewDirs)
        sampleCots.append((sampleNormal, sampleWeight, analyticCot))

    total = losses.totalLoss(parts, weights)
    if not (parts.isFinite() and np.isfinite(total)):
        raise NonFiniteLossError(step, {**parts.toJson(), "total": total})

    def backward(item) -> GradientBuffer:
        index, rows = item
        buffer = GradientBuffer.zerosLike(params)
        sampleNormal, sampleWeight, analyticCot = sampleCots[index]
        tracer.backward(
            buffer,
            results[index],
            dColor[rows],
            RadiometryCotangent(
                depth=dDepth[rows],
                reflprob=dReflprob[rows],
                sampleNormal=sampleNormal,
                sampleWeight=sampleWeight,
            ),
        )
        if analyticCot is not None and normals[index] is not None:
            accumulateAnalyticNormalGradients(
                params, buffer, normals[index].record, analyticCot  # type: ignore
            )
        return buffer

    buffers = pool.map(backward, list(enumerate(chunks)))
    merged = mergeGradientBuffers(params, buffers)
    if not merged.isFinite():
        raise NonFiniteLossError(step, {**parts.toJson(), "total": total})
    grad.add(merged)
    return LossEvaluation(parts, total, failedRays, quads, normals)


@dataclass
class StepResult:
    """Metrics of one training step"""

    step: int
    stage: int
    variant: str
    parts: losses.LossParts
    total: float
    learningRate: float
    failedRays: int
    updated: bool

    def toRow(self) -> dict:
        return {
            "step": self.step,
            "stage": self.stage,
            "variant": self.variant,
            **self.parts.toJson(),
            "total": self.total,
            "learningRate": self.learningRate,
            "failedRays": self.failedRays,
        }


def trainStep(
    params: FieldParams,
    grad: GradientBuffer,
    optim: OptimState,
    batch: TrainBatch,
    schedule: Schedule,
    config: TrainConfig,
    step: int,
    pool: "WorkerPool|None" = None,
) -> StepResult:
    """One optimisation step: trace the batch, evaluate the losses of the stage
    of `step`, backpropagate through the whole pipeline and apply one Adam
    update. The random streams are derived from config.seed and step

    Raises:
        NonFiniteLossError: parameters and optimizer state are left unchanged
    """
    weights, variant = scheduleAt(schedule, step)
    grad.reset()
    learningRate = cosineLearningRate(
        config.optim.learningRate, step, config.steps, config.optim.finalLearningRateRatio
    )
    evaluation = lossAndGradients(
        params,
        grad,
        batch,
        weights,
        variant,
        config,
        stepSeed(config.seed, step),
        pool=pool,
        k=schedule.k,
        step=step,
    )
    updated = adamUpdate(params, grad, optim, learningRate)
    return StepResult(
        step=step,
        stage=schedule.stage(step),
        variant=variant,
        parts=evaluation.parts,
        total=evaluation.total,
        learningRate=learningRate,
        failedRays=evaluation.failedRays,
        updated=updated,
    )
