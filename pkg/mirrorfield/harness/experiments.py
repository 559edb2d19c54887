"""End-to-end experiment drivers. Each one generates oracle datasets, trains
fields, measures them and writes a JSON summary named after the experiment."""
from dataclasses import dataclass, replace
import logging
import os
from typing import Optional, Tuple

import numpy as np

from mirrorfield.configbase import JsonConfig
from mirrorfield.field.params import FieldConfig, FieldParams
from mirrorfield.harness import io
from mirrorfield.harness.checkpoint import Checkpoint
from mirrorfield.harness.metrics import evaluate
from mirrorfield.pool import WorkerPool
from mirrorfield.render.camera import Camera, generateRayBatch
from mirrorfield.render.compose import (
    ComposedScene,
    RigidTransform,
    SceneEntry,
    Substitution,
    VirtualMirror,
    intersectVirtualMirrorBatch,
)
from mirrorfield.render.config import RenderConfig
from mirrorfield.render.image import renderImage
from mirrorfield.render.sampling import RayStreams
from mirrorfield.render.tracer import WhittedTracer
from mirrorfield.scenegen.builtin import builtinScene
from mirrorfield.scenegen.dataset import OrbitSpec, SceneDataset, generateDataset, saveDataset
from mirrorfield.train.config import TrainConfig
from mirrorfield.train.trainer import Trainer

EXPERIMENTS = ("mirror-box", "unseen-reflection", "schedule-ablation", "applications")

PSNR_TARGET_DB = 24.0
PSNR_MASK_TARGET_DB = 20.0
DEPTH_MAE_TARGET_RATIO = 0.05
UNSEEN_MARGIN_DB = 3.0
ABLATION_MAE_RATIO = 2.0
INSERTION_MIN_DIFFERENCE = 0.05
INTERREFLECTION_MIN_DIFFERENCE = 0.01


class UnknownExperimentError(ValueError):
    "Raised when an experiment name is not known"


@dataclass
class ExperimentConfig(JsonConfig):
    """Scale of the experiment drivers. The defaults are the full desk-scale runs,
    quick() is a scaled-down smoke configuration

    Args:
        views (int): Training views
        width, height (int): Image size (pixels)
        steps (int): Training steps per run
        gridResolution (int): Lattice points per axis of every lattice
        raysPerBatch (int): Camera rays per step
        nSamples (int): Samples per ray
        heldOutViews (int): Evaluation views between the training views
        unseenViews (int): Test views of the unseen reflection split
        seed (int): Seed of the datasets and of single runs
        seeds (tuple[int]): Seeds averaged over by the schedule ablation
    """

    views: int = 40
    width: int = 64
    height: int = 64
    steps: int = 5000
    gridResolution: int = 64
    raysPerBatch: int = 1024
    nSamples: int = 64
    heldOutViews: int = 8
    unseenViews: int = 6
    seed: int = 0
    seeds: Tuple[int, ...] = (0, 1, 2)

    @staticmethod
    def quick(seed: int = 0) -> "ExperimentConfig":
        return ExperimentConfig(
            views=6,
            width=16,
            height=16,
            steps=4,
            gridResolution=8,
            raysPerBatch=128,
            nSamples=16,
            heldOutViews=2,
            unseenViews=2,
            seed=seed,
            seeds=(seed,),
        )

    def trainConfig(self, seed: "int|None" = None, **overrides) -> TrainConfig:
        config = TrainConfig(
            steps=self.steps,
            raysPerBatch=self.raysPerBatch,
            seed=self.seed if seed is None else seed,
            field=FieldConfig().withResolution(self.gridResolution),
            render=RenderConfig(nSamples=self.nSamples, seed=self.seed if seed is None else seed),
            logEvery=max(1, self.steps // 20),
            checkpointEvery=0,
        )
        return replace(config, **overrides)


def trainOnDataset(
    dataset: SceneDataset,
    config: TrainConfig,
    workDir: str,
    name: str,
    pool: "WorkerPool|None" = None,
) -> Checkpoint:
    """Train a fresh field on a dataset, keeping the checkpoint and the metrics
    log of the run in workDir"""
    os.makedirs(workDir, exist_ok=True)
    metricsPath = os.path.join(workDir, f"{name}.csv")
    if os.path.exists(metricsPath):
        os.remove(metricsPath)
    trainer = Trainer(
        dataset.views,
        dataset.scene.bounds(),
        config,
        os.path.join(workDir, f"{name}.ckpt"),
        metricsPath,
        pool=pool,
    )
    summary = trainer.run()
    if summary.skippedSteps:
        logging.warning(f"Run {name} skipped {len(summary.skippedSteps)} non-finite steps")
    return trainer.checkpoint


def heldOutOrbit(config: ExperimentConfig) -> OrbitSpec:
    """The training orbit shifted by half the view spacing"""
    return OrbitSpec(startDeg=180.0 / config.views)


def _dataset(scene, nViews, config: ExperimentConfig, orbit, pool) -> SceneDataset:
    return generateDataset(
        scene, nViews, (config.width, config.height), orbit, config.seed, pool=pool
    )


def _writeSummary(outDir: str, name: str, summary: dict) -> dict:
    os.makedirs(outDir, exist_ok=True)
    io.writeJson(os.path.join(outDir, f"{name}.json"), summary)
    logging.info(f"Experiment {name}: {summary.get('passed')}")
    return summary


def runMirrorBox(outDir: str, config: ExperimentConfig, pool: "WorkerPool|None" = None) -> dict:
    """Train on the mirror box and measure held-out views against the desk-scale
    targets"""
    scene = builtinScene("mirror-box")
    train = _dataset(scene, config.views, config, OrbitSpec(), pool)
    heldOut = _dataset(scene, config.heldOutViews, config, heldOutOrbit(config), pool)
    saveDataset(train, os.path.join(outDir, "mirror-box-data"), force=True)
    trainConfig = config.trainConfig()
    checkpoint = trainOnDataset(train, trainConfig, outDir, "mirror-box", pool)
    report = evaluate(checkpoint.params, heldOut.views, trainConfig.render, pool)
    diagonal = scene.diagonal()
    mae = report.meanMirrorDepthMaeM
    summary = {
        "experiment": "mirror-box",
        "config": config.toJson(),
        "psnr": report.meanPsnr,
        "psnrMask": report.meanPsnrMask,
        "mirrorDepthMaeM": mae,
        "sceneDiagonalM": diagonal,
        "passed": {
            "psnr": report.meanPsnr is not None and report.meanPsnr >= PSNR_TARGET_DB,
            "psnrMask": report.meanPsnrMask is not None
            and report.meanPsnrMask >= PSNR_MASK_TARGET_DB,
            "mirrorDepthMae": mae is not None and mae <= DEPTH_MAE_TARGET_RATIO * diagonal,
        },
        "report": report.toJson(),
    }
    return _writeSummary(outDir, "mirror-box", summary)


def unseenReflectionSplit(config: ExperimentConfig, pool=None):
    """Training cameras on the half orbit at y >= 0 and test cameras on the other
    side, whose mirror reflections show the y > 0 half of the room that no
    training view sees in the mirror"""
    scene = builtinScene("mirror-box")
    train = _dataset(scene, config.views, config, OrbitSpec(startDeg=0.0, arcDeg=180.0), pool)
    test = _dataset(
        scene, config.unseenViews, config, OrbitSpec(startDeg=200.0, arcDeg=50.0), pool
    )
    return train, test


def baselineTrainConfig(config: ExperimentConfig, seed: "int|None" = None) -> TrainConfig:
    """Same code without ray tracing: no reflected rays and the full photometric
    loss from the first step"""
    trainConfig = config.trainConfig(seed, maskedStage=False)
    return replace(trainConfig, render=replace(trainConfig.render, maxDepth=0))


def runUnseenReflection(
    outDir: str, config: ExperimentConfig, pool: "WorkerPool|None" = None
) -> dict:
    train, test = unseenReflectionSplit(config, pool)
    full = trainOnDataset(train, config.trainConfig(), outDir, "unseen-full", pool)
    baselineConfig = baselineTrainConfig(config)
    baseline = trainOnDataset(train, baselineConfig, outDir, "unseen-baseline", pool)
    fullReport = evaluate(full.params, test.views, config.trainConfig().render, pool)
    baselineReport = evaluate(baseline.params, test.views, baselineConfig.render, pool)
    margin = None
    if fullReport.meanPsnrMask is not None and baselineReport.meanPsnrMask is not None:
        margin = fullReport.meanPsnrMask - baselineReport.meanPsnrMask
    summary = {
        "experiment": "unseen-reflection",
        "config": config.toJson(),
        "fullPsnrMask": fullReport.meanPsnrMask,
        "baselinePsnrMask": baselineReport.meanPsnrMask,
        "marginDb": margin,
        "passed": {"margin": margin is not None and margin >= UNSEEN_MARGIN_DB},
        "full": fullReport.toJson(),
        "baseline": baselineReport.toJson(),
    }
    return _writeSummary(outDir, "unseen-reflection", summary)


def runScheduleAblation(
    outDir: str, config: ExperimentConfig, pool: "WorkerPool|None" = None
) -> dict:
    """Mirror depth error with and without the masked photometric stage, averaged
    over config.seeds"""
    scene = builtinScene("mirror-box")
    train = _dataset(scene, config.views, config, OrbitSpec(), pool)
    heldOut = _dataset(scene, config.heldOutViews, config, heldOutOrbit(config), pool)
    runs = []
    for seed in config.seeds:
        row = {"seed": seed}
        for variant, overrides in (("full", {}), ("withoutMaskedStage", {"maskedStage": False})):
            trainConfig = config.trainConfig(seed, **overrides)
            name = f"ablation-{variant}-{seed}"
            checkpoint = trainOnDataset(train, trainConfig, outDir, name, pool)
            report = evaluate(checkpoint.params, heldOut.views, trainConfig.render, pool)
            row[variant] = report.meanMirrorDepthMaeM
        runs.append(row)
    fullMae = _meanOf(runs, "full")
    ablatedMae = _meanOf(runs, "withoutMaskedStage")
    ratio = None if not fullMae or ablatedMae is None else ablatedMae / fullMae
    summary = {
        "experiment": "schedule-ablation",
        "config": config.toJson(),
        "runs": runs,
        "fullMirrorDepthMaeM": fullMae,
        "withoutMaskedStageMirrorDepthMaeM": ablatedMae,
        "ratio": ratio,
        "passed": {"ratio": ratio is not None and ratio >= ABLATION_MAE_RATIO},
    }
    return _writeSummary(outDir, "schedule-ablation", summary)


def _meanOf(rows, key) -> Optional[float]:
    values = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean(values)) if values else None


def _sameColors(scene, reference, rays, config: RenderConfig, rough: bool = False) -> bool:
    streams = RayStreams(config.seed, 0)
    expected = WhittedTracer(reference, config).trace(rays, streams).color
    tracer = WhittedTracer(scene, config)
    if rough:
        actual = tracer.traceRough(rays, streams, 4, 0.0).color
    else:
        actual = tracer.trace(rays, streams).color
    return bool(np.array_equal(actual, expected))


def mirrorFacingCamera(camera: Camera, distanceM: float, halfExtentM: float) -> VirtualMirror:
    """A square virtual mirror on the optical axis of camera, facing it"""
    axis = camera.opticalAxis()
    up = -camera.rotation[:, 1]
    return VirtualMirror.fromNormal(
        camera.translation + distanceM * axis, -axis, up, (halfExtentM, halfExtentM)
    )


def mirrorRegionDifference(
    scene, edited, camera: Camera, mirror: VirtualMirror, config: RenderConfig, pool=None
) -> float:
    """Largest per-channel mean absolute color change over the pixels whose camera
    ray meets the mirror"""
    rays = generateRayBatch(camera, camera.pixelGrid(), config)
    hit, _, _ = intersectVirtualMirrorBatch(rays, mirror)
    if not np.any(hit):
        return 0.0
    before = renderImage(scene, camera, config, pool).image.reshape(-1, 3)
    after = renderImage(edited, camera, config, pool).image.reshape(-1, 3)
    return float(np.max(np.mean(np.abs(after[hit] - before[hit]), axis=0)))


def applicationChecks(
    params: FieldParams, camera: Camera, config: RenderConfig, pool=None
) -> dict:
    """Scene manipulation checks on a trained field seen from camera"""
    rays = generateRayBatch(camera, camera.pixelGrid(), config)
    identity = ComposedScene(
        [SceneEntry.learned(params)], Substitution(params, RigidTransform.identity())
    )
    single = ComposedScene.single(params)
    results = {
        "roughKappaZeroBitwise": _sameColors(params, params, rays, config, rough=True),
        "identitySubstitutionBitwise": _sameColors(identity, params, rays, config),
        "singleEntryCompositionBitwise": _sameColors(single, params, rays, config),
    }
    inserted = mirrorFacingCamera(camera, 0.8, 0.3)
    withMirror = ComposedScene([SceneEntry.learned(params), SceneEntry.virtualMirror(inserted)])
    results["insertionDifference"] = mirrorRegionDifference(
        params, withMirror, camera, inserted, config, pool
    )
    # A virtual mirror facing the learned wall mirror of the mirror box
    facing = VirtualMirror.fromNormal(
        (-1.9, 0.0, 1.0), (1.0, 0.0, 0.0), (0.0, 0.0, 1.0), (0.8, 0.6)
    )
    between = ComposedScene([SceneEntry.learned(params), SceneEntry.virtualMirror(facing)])
    deep = replace(config, maxDepth=3)
    shallow = replace(config, maxDepth=1)
    inMirror, _, _ = intersectVirtualMirrorBatch(rays, facing)
    difference = 0.0
    if np.any(inMirror):
        deepImage = renderImage(between, camera, deep, pool).image.reshape(-1, 3)
        shallowImage = renderImage(between, camera, shallow, pool).image.reshape(-1, 3)
        difference = float(np.mean(np.abs(deepImage[inMirror] - shallowImage[inMirror])))
    results["interReflectionDifference"] = difference
    return results


def runApplications(
    outDir: str,
    config: ExperimentConfig,
    pool: "WorkerPool|None" = None,
    checkpoint: "Checkpoint|None" = None,
) -> dict:
    """Roughness, substitution, composition, mirror insertion and inter-reflection
    checks on a trained mirror box field (trained here unless given)"""
    scene = builtinScene("mirror-box")
    trainConfig = config.trainConfig()
    if checkpoint is None:
        train = _dataset(scene, config.views, config, OrbitSpec(), pool)
        checkpoint = trainOnDataset(train, trainConfig, outDir, "applications", pool)
    # Camera looking at the learned mirror from the far side of the room
    orbit = OrbitSpec(startDeg=180.0)
    camera = orbit.cameras(1, config.width, config.height, np.random.default_rng(0))[0]
    checks = applicationChecks(checkpoint.params, camera, trainConfig.render, pool)
    summary = {
        "experiment": "applications",
        "config": config.toJson(),
        **checks,
        "passed": {
            "roughKappaZeroBitwise": checks["roughKappaZeroBitwise"],
            "identitySubstitutionBitwise": checks["identitySubstitutionBitwise"],
            "singleEntryCompositionBitwise": checks["singleEntryCompositionBitwise"],
            "insertion": checks["insertionDifference"] >= INSERTION_MIN_DIFFERENCE,
            "interReflection": checks["interReflectionDifference"]
            >= INTERREFLECTION_MIN_DIFFERENCE,
        },
    }
    return _writeSummary(outDir, "applications", summary)


def runExperiment(
    name: str, outDir: str, config: ExperimentConfig, pool: "WorkerPool|None" = None
) -> dict:
    """Run one experiment by name

    Raises:
        UnknownExperimentError: for names outside EXPERIMENTS
    """
    runners = {
        "mirror-box": runMirrorBox,
        "unseen-reflection": runUnseenReflection,
        "schedule-ablation": runScheduleAblation,
        "applications": runApplications,
    }
    if name not in runners:
        raise UnknownExperimentError(
            f"Unknown experiment '{name}', expected one of {', '.join(EXPERIMENTS)}"
        )
    logging.info(f"Running experiment {name} in {outDir}")
    return runners[name](outDir, config, pool)
