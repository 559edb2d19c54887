from dataclasses import dataclass
import logging
import os
import time
from typing import Optional

import numpy as np
import tqdm

from mirrorfield.field.params import FieldParams, GradientBuffer
from mirrorfield.harness.checkpoint import Checkpoint, loadCheckpoint, saveCheckpoint
from mirrorfield.pool import WorkerPool
from mirrorfield.train.batch import maskComponents, sampleTrainBatch
from mirrorfield.train.config import TrainConfig
from mirrorfield.train.step import NonFiniteLossError, trainStep
from mirrorfield.train.writer import CsvMetricsWriter, MetricsSummaryLogger, MetricsWriter

INIT_STREAM = 0
BATCH_STREAM = 1


def fieldBox(sceneBounds: "tuple[np.ndarray, np.ndarray]", marginM: float):
    """Field bounding box: the scene bounds grown by a margin on every side"""
    low, high = (np.asarray(b, dtype=np.float64) for b in sceneBounds)
    return low - marginM, high + marginM


def initialCheckpoint(config: TrainConfig, sceneBounds) -> Checkpoint:
    """Freshly initialised field and optimizer of a run, seeded by config.seed"""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, INIT_STREAM]))
    params = FieldParams.create(config.field, rng, fieldBox(sceneBounds, config.bboxMarginM))
    return Checkpoint.initial(
        params, config.optim, step=0, configHash=config.hash(), config=config.toJson()
    )


@dataclass
class TrainSummary:
    """Outcome of Trainer.run

    Args:
        firstStep (int): Step the run started at (nonzero when resumed)
        lastStep (int): Steps completed at the end of the run
        skippedSteps (list[int]): Steps dropped because of a non-finite loss
        lastRow (dict, optional): Metrics of the last completed step
        checkpointPath (str): Where the final checkpoint was written
    """

    firstStep: int
    lastStep: int
    skippedSteps: "list[int]"
    lastRow: Optional[dict]
    checkpointPath: str


class Trainer:
    """Runs the optimisation loop of a training configuration over a dataset,
    writing metric rows and checkpoints on the way.

    Args:
        views: Training views (camera, image and mask attributes)
        sceneBounds (tuple[np.ndarray, np.ndarray]): Box the field is fitted to
        config (TrainConfig): The run configuration
        checkpointPath (str): Checkpoint written every config.checkpointEvery steps\
          and at the end
        metricsPath (str, optional): CSV file receiving one row per step
        resume (bool, optional): Continue from checkpointPath when it exists.\
          Defaults to False
        force (bool, optional): Resume even when the checkpoint was written with\
          another configuration. Defaults to False
        pool (WorkerPool, optional): Workers for the chunks of a batch
        progress (bool, optional): Show a progress bar. Defaults to False
        writer (MetricsWriter, optional): Extra output for the metric rows
    """

    def __init__(
        self,
        views,
        sceneBounds,
        config: TrainConfig,
        checkpointPath: str,
        metricsPath: "str|None" = None,
        resume: bool = False,
        force: bool = False,
        pool: "WorkerPool|None" = None,
        progress: bool = False,
        writer: "MetricsWriter|None" = None,
    ):
        if len(views) == 0:
            raise ValueError("Cannot train without views")
        self.views = views
        self.config = config
        self.checkpointPath = checkpointPath
        self.pool = pool
        self.progress = progress
        self.schedule = config.buildSchedule()
        self.components = [maskComponents(v.mask) for v in views]
        configHash = config.hash()
        if resume and os.path.exists(checkpointPath):
            checkpoint = loadCheckpoint(checkpointPath)
            checkpoint.checkConfig(configHash, force)
            checkpoint.configHash = configHash
            checkpoint.config = config.toJson()
            logging.info(f"Resuming from step {checkpoint.step} of '{checkpointPath}'")
        else:
            checkpoint = initialCheckpoint(config, sceneBounds)
        self.checkpoint = checkpoint
        self.grad = GradientBuffer.zerosLike(checkpoint.params)
        outputs: "list[MetricsWriter]" = []
        if metricsPath is not None:
            outputs.append(CsvMetricsWriter(metricsPath))
        if writer is not None:
            outputs.append(writer)
        self.writer = MetricsSummaryLogger(_Fanout(outputs), every=max(1, config.logEvery))

    @property
    def params(self) -> FieldParams:
        return self.checkpoint.params

    def sampleBatch(self, step: int):
        rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, BATCH_STREAM, step]))
        return sampleTrainBatch(
            self.views,
            self.config.raysPerBatch,
            rng,
            self.config.viewsPerBatch,
            self.config.render,
            self.components,
        )

    def save(self):
        saveCheckpoint(self.checkpoint, self.checkpointPath)

    def run(self) -> TrainSummary:
        config = self.config
        checkpoint = self.checkpoint
        firstStep = checkpoint.step
        skipped: "list[int]" = []
        lastRow = None
        stage = None
        startTime = time.monotonic()
        steps = tqdm.trange(firstStep, config.steps, disable=not self.progress)
        try:
            for step in steps:
                if self.schedule.stage(step) != stage:
                    stage = self.schedule.stage(step)
                    logging.info(f"Entering training stage {stage} at step {step}")
                    steps.set_description(f"stage {stage}")
                batch = self.sampleBatch(step)
                try:
                    result = trainStep(
                        checkpoint.params,
                        self.grad,
                        checkpoint.optim,
                        batch,
                        self.schedule,
                        config,
                        step,
                        self.pool,
                    )
                except NonFiniteLossError as ex:
                    logging.warning(f"Skipping step {step}: {ex}")
                    skipped.append(step)
                    checkpoint.step = step + 1
                    continue
                checkpoint.step = step + 1
                lastRow = {**result.toRow(), "wallTimeS": time.monotonic() - startTime}
                self.writer.writeRows([lastRow])
                steps.set_postfix(loss=f"{result.total:.4g}")
                if config.checkpointEvery > 0 and checkpoint.step % config.checkpointEvery == 0:
                    self.save()
            self.save()
        finally:
            steps.close()
            self.writer.close()
        return TrainSummary(firstStep, checkpoint.step, skipped, lastRow, self.checkpointPath)


class _Fanout(MetricsWriter):
    def __init__(self, outputs: "list[MetricsWriter]"):
        self.outputs = outputs

    def writeRows(self, rows: "list[dict]"):
        for output in self.outputs:
            output.writeRows(rows)

    def flush(self):
        for output in self.outputs:
            output.flush()

    def close(self):
        for output in self.outputs:
            output.close()
