"""Command line of mirrorfield: dataset generation, training, rendering,
evaluation, scene editing and the experiment drivers. Every failure ends in one
line `mirrorfield: error: <message>` on stderr, with exit status 2 for invalid
arguments and 1 for anything else."""
import argparse
from dataclasses import replace
import logging
import os
import sys
from typing import Optional, Sequence

import numpy as np

from mirrorfield.harness import io
from mirrorfield.harness.checkpoint import Checkpoint, loadCheckpoint, saveCheckpoint
from mirrorfield.harness.experiments import EXPERIMENTS, ExperimentConfig, runExperiment
from mirrorfield.harness.frames import loadCameras, renderFrames, saveFrames
from mirrorfield.harness.metrics import evaluate
from mirrorfield.pool import WorkerPool
from mirrorfield.render.compose import (
    ComposedScene,
    RigidTransform,
    SceneEntry,
    Substitution,
    VirtualMirror,
)
from mirrorfield.render.config import RenderConfig
from mirrorfield.scenegen.builtin import BUILTIN_SCENES, builtinScene
from mirrorfield.scenegen.dataset import OrbitSpec, generateDataset, loadDataset, saveDataset
from mirrorfield.train.config import TrainConfig, loadTrainConfig
from mirrorfield.train.trainer import Trainer

PROG = "mirrorfield"


class UsageError(ValueError):
    "Raised for invalid command line arguments"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parseResolution(text: str) -> "tuple[int, int]":
    """Parse WIDTHxHEIGHT

    >>> parseResolution("64x48")
    (64, 48)
    """
    try:
        width, height = (int(v) for v in text.lower().split("x"))
    except ValueError as ex:
        raise UsageError(f"Resolution must look like 64x64, got '{text}'") from ex
    if width < 1 or height < 1:
        raise UsageError(f"Resolution must be positive, got '{text}'")
    return width, height


def parseFloats(text: str, counts: "Sequence[int]", name: str) -> "list[float]":
    """Comma separated numbers, as many as one of counts

    >>> parseFloats("1,2,3", (3, 4), "offset")
    [1.0, 2.0, 3.0]
    """
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as ex:
        raise UsageError(f"{name} must be comma separated numbers, got '{text}'") from ex
    if len(values) not in counts:
        expected = " or ".join(str(c) for c in counts)
        raise UsageError(f"{name} needs {expected} numbers, got {len(values)}")
    if not all(np.isfinite(values)):
        raise UsageError(f"{name} must be finite, got '{text}'")
    return values


def parseRough(text: str) -> "tuple[int, float]":
    """K,KAPPA: number of traces and normal noise scale

    >>> parseRough("8,0.05")
    (8, 0.05)
    """
    values = parseFloats(text, (2,), "--rough")
    if values[0] < 1 or values[0] != int(values[0]) or values[1] < 0:
        raise UsageError(f"--rough needs an integer K >= 1 and KAPPA >= 0, got '{text}'")
    return int(values[0]), values[1]


def parsePlacement(text: str, name: str) -> RigidTransform:
    """tx,ty,tz[,yawDeg]: a rotation about z followed by a translation"""
    values = parseFloats(text, (3, 4), name)
    return RigidTransform.fromPlacement(values[:3], values[3] if len(values) == 4 else 0.0)


def parseMirror(text: str) -> VirtualMirror:
    """cx,cy,cz,nx,ny,nz,halfWidth,halfHeight: a virtual mirror facing along n"""
    values = parseFloats(text, (8,), "--mirror")
    normal = np.array(values[3:6])
    if np.linalg.norm(normal) < 1e-9 or min(values[6:8]) <= 0:
        raise UsageError(f"--mirror needs a nonzero normal and positive half extents, got '{text}'")
    up = (0.0, 0.0, 1.0) if abs(normal[2]) < 0.9 * np.linalg.norm(normal) else (0.0, 1.0, 0.0)
    return VirtualMirror.fromNormal(values[0:3], normal, up, (values[6], values[7]))


def renderConfigOf(checkpoint: Checkpoint, args) -> RenderConfig:
    """Renderer settings of the training run, with the command line overrides"""
    config = RenderConfig()
    if checkpoint.config is not None and checkpoint.config.get("render") is not None:
        config = RenderConfig.fromJson(checkpoint.config["render"])
    overrides = {"seed": args.seed}
    if getattr(args, "maxDepth", None) is not None:
        overrides["maxDepth"] = args.maxDepth
    if getattr(args, "samples", None) is not None:
        overrides["nSamples"] = args.samples
    if getattr(args, "rough", None) is not None:
        overrides["roughSamples"], overrides["roughKappa"] = parseRough(args.rough)
    return replace(config, **overrides)


def commandGen(args, pool: WorkerPool):
    resolution = parseResolution(args.res)
    orbit = OrbitSpec(
        radiusM=args.orbitRadius,
        heightM=args.orbitHeight,
        startDeg=args.orbitStart,
        arcDeg=args.orbitArc,
    )
    dataset = generateDataset(
        builtinScene(args.scene), args.views, resolution, orbit, args.seed, args.depth, pool
    )
    saveDataset(dataset, args.out, force=args.force)


def commandTrain(args, pool: WorkerPool):
    config = TrainConfig() if args.config is None else loadTrainConfig(args.config)
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = replace(config, **overrides)
    if os.path.exists(args.out) and not (args.resume or args.force):
        raise FileExistsError(f"{args.out} already exists, use --resume or --force")
    dataset = loadDataset(args.data)
    metricsPath = args.metrics or f"{os.path.splitext(args.out)[0]}.csv"
    if not args.resume and os.path.exists(metricsPath):
        os.remove(metricsPath)
    trainer = Trainer(
        dataset.views,
        dataset.scene.bounds(),
        config,
        args.out,
        metricsPath,
        resume=args.resume,
        force=args.force,
        pool=pool,
        progress=sys.stderr.isatty() and not args.quiet,
    )
    summary = trainer.run()
    logging.info(
        f"Trained steps {summary.firstStep} to {summary.lastStep}, "
        f"{len(summary.skippedSteps)} skipped"
    )


def commandRender(args, pool: WorkerPool):
    checkpoint = loadCheckpoint(args.ckpt)
    config = renderConfigOf(checkpoint, args)
    frames = renderFrames(checkpoint.params, loadCameras(args.poses), config, pool)
    saveFrames(frames, args.out, args.force, {"renderConfig": config.toJson()})


def commandEval(args, pool: WorkerPool):
    checkpoint = loadCheckpoint(args.ckpt)
    config = renderConfigOf(checkpoint, args)
    dataset = loadDataset(args.data)
    report = evaluate(checkpoint.params, dataset.views, config, pool)
    if os.path.exists(args.out) and not args.force:
        raise FileExistsError(f"{args.out} already exists, use --force to overwrite it")
    io.writeJson(args.out, {**report.toJson(), "renderConfig": config.toJson()})


def _editScene(args) -> "tuple[ComposedScene, Checkpoint]":
    if args.edit == "insert-mirror":
        checkpoint = loadCheckpoint(args.ckpt)
        entries = [SceneEntry.learned(checkpoint.params)]
        entries += [SceneEntry.virtualMirror(parseMirror(m)) for m in args.mirror]
        return ComposedScene(entries), checkpoint
    if args.edit == "substitute":
        checkpoint = loadCheckpoint(args.ckpt)
        target = loadCheckpoint(args.target)
        portal = parsePlacement(args.portal, "--portal")
        return (
            ComposedScene(
                [SceneEntry.learned(checkpoint.params)], Substitution(target.params, portal)
            ),
            checkpoint,
        )
    paths = [p for p in args.ckpts.split(",") if p]
    placements = [t for t in (args.transforms or "").split(";") if t]
    if len(placements) not in (0, len(paths)):
        raise UsageError(f"--transforms needs one placement per checkpoint ({len(paths)})")
    checkpoints = [loadCheckpoint(p) for p in paths]
    entries = []
    for index, checkpoint in enumerate(checkpoints):
        # A placement puts the field in the world; entries store world-to-field
        transform = (
            parsePlacement(placements[index], "--transforms").inverse()
            if placements
            else RigidTransform.identity()
        )
        entries.append(SceneEntry.learned(checkpoint.params, transform))
    entries += [SceneEntry.virtualMirror(parseMirror(m)) for m in (args.mirror or [])]
    return ComposedScene(entries), checkpoints[0]


def commandEdit(args, pool: WorkerPool):
    scene, checkpoint = _editScene(args)
    config = renderConfigOf(checkpoint, args)
    frames = renderFrames(scene, loadCameras(args.poses), config, pool)
    saveFrames(frames, args.out, args.force, {"edit": args.edit, "renderConfig": config.toJson()})


def commandExperiment(args, pool: WorkerPool):
    config = ExperimentConfig.quick(args.seed) if args.quick else ExperimentConfig(seed=args.seed)
    overrides = {}
    if args.steps is not None:
        overrides["steps"] = args.steps
    if args.views is not None:
        overrides["views"] = args.views
    if args.res is not None:
        overrides["width"], overrides["height"] = parseResolution(args.res)
    if args.grid is not None:
        overrides["gridResolution"] = args.grid
    if args.seeds is not None:
        overrides["seeds"] = tuple(int(s) for s in parseFloats(args.seeds, range(1, 65), "--seeds"))
    config = replace(config, **overrides)
    names = EXPERIMENTS if args.name == "all" else (args.name,)
    for name in names:
        runExperiment(name, args.out, config, pool)


def buildParser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__.splitlines()[0])
    parser.add_argument(
        "--log-level",
        dest="logLevel",
        default="INFO",
        choices=("DEBUG", "INFO", "WARNING", "ERROR"),
        help="Logging verbosity (default INFO)",
    )
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Seed of every random choice")
    common.add_argument("--force", action="store_true", help="Overwrite existing outputs")
    renderOptions = _Parser(add_help=False)
    renderOptions.add_argument("--max-depth", dest="maxDepth", type=int, help="Reflection bounces")
    renderOptions.add_argument("--samples", type=int, help="Samples per ray")
    renderOptions.add_argument("--rough", help="K,KAPPA: render rough mirrors with K traces")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = commands.add_parser("gen", parents=[common], help="Generate an oracle dataset")
    gen.add_argument("--scene", required=True, choices=BUILTIN_SCENES)
    gen.add_argument("--views", type=int, required=True)
    gen.add_argument("--res", required=True, help="WIDTHxHEIGHT")
    gen.add_argument("--out", required=True, help="Dataset directory")
    gen.add_argument("--depth", type=int, default=4, help="Mirror bounces of the oracle")
    gen.add_argument("--orbit-radius", dest="orbitRadius", type=float, default=1.5)
    gen.add_argument("--orbit-height", dest="orbitHeight", type=float, default=1.2)
    gen.add_argument("--orbit-start", dest="orbitStart", type=float, default=0.0)
    gen.add_argument("--orbit-arc", dest="orbitArc", type=float, default=360.0)
    gen.set_defaults(func=commandGen)

    train = commands.add_parser("train", parents=[common], help="Train a field on a dataset")
    train.add_argument("--data", required=True, help="Dataset directory")
    train.add_argument("--config", help="YAML training configuration")
    train.add_argument("--out", required=True, help="Checkpoint file")
    train.add_argument("--steps", type=int, help="Override the number of steps")
    train.add_argument("--metrics", help="CSV metrics log (default: next to the checkpoint)")
    train.add_argument("--resume", action="store_true", help="Continue from --out")
    train.add_argument("--quiet", action="store_true", help="Hide the progress bar")
    train.set_defaults(func=commandTrain, seed=None)

    render = commands.add_parser(
        "render", parents=[common, renderOptions], help="Render frames of a checkpoint"
    )
    render.add_argument("--ckpt", required=True)
    render.add_argument("--poses", required=True, help="poses.json or a dataset directory")
    render.add_argument("--out", required=True, help="Frame directory")
    render.set_defaults(func=commandRender)

    evalParser = commands.add_parser(
        "eval", parents=[common, renderOptions], help="Compare a checkpoint to a dataset"
    )
    evalParser.add_argument("--ckpt", required=True)
    evalParser.add_argument("--data", required=True)
    evalParser.add_argument("--out", required=True, help="Report JSON file")
    evalParser.set_defaults(func=commandEval)

    edit = commands.add_parser("edit", help="Render manipulated scenes")
    edits = edit.add_subparsers(dest="edit", required=True, parser_class=_Parser)
    insert = edits.add_parser("insert-mirror", parents=[common, renderOptions])
    insert.add_argument("--ckpt", required=True)
    insert.add_argument("--mirror", required=True, action="append", help="cx,cy,cz,nx,ny,nz,hw,hh")
    substitute = edits.add_parser("substitute", parents=[common, renderOptions])
    substitute.add_argument("--ckpt", required=True, help="Scene whose mirrors are replaced")
    substitute.add_argument("--target", required=True, help="Scene seen in the mirrors")
    substitute.add_argument("--portal", default="0,0,0", help="tx,ty,tz[,yawDeg]")
    compose = edits.add_parser("compose", parents=[common, renderOptions])
    compose.add_argument("--ckpts", required=True, help="Comma separated checkpoints")
    compose.add_argument("--transforms", help="Placements tx,ty,tz[,yawDeg] separated by ;")
    compose.add_argument("--mirror", action="append", help="Extra virtual mirror")
    for sub in (insert, substitute, compose):
        sub.add_argument("--poses", required=True)
        sub.add_argument("--out", required=True, help="Frame directory")
        sub.set_defaults(func=commandEdit)

    experiment = commands.add_parser(
        "experiment", parents=[common], help="Run an end-to-end experiment"
    )
    experiment.add_argument("name", choices=EXPERIMENTS + ("all",))
    experiment.add_argument("--out", required=True, help="Output directory")
    experiment.add_argument("--quick", action="store_true", help="Scaled down smoke run")
    experiment.add_argument("--steps", type=int)
    experiment.add_argument("--views", type=int)
    experiment.add_argument("--res", help="WIDTHxHEIGHT")
    experiment.add_argument("--grid", type=int, help="Lattice resolution")
    experiment.add_argument("--seeds", help="Comma separated seeds of the ablation")
    experiment.set_defaults(func=commandExperiment)
    return parser


def _fail(message: str, status: int) -> int:
    print(f"{PROG}: error: {message}", file=sys.stderr)
    return status


def main(argv: "Optional[Sequence[str]]" = None) -> int:
    parser = buildParser()
    try:
        args = parser.parse_args(argv)
    except UsageError as ex:
        return _fail(str(ex), 2)
    logging.basicConfig(
        level=getattr(logging, args.logLevel),
        format="%(asctime)s %(levelname)s %(message)s",
    )
    pool = WorkerPool()
    try:
        args.func(args, pool)
    except UsageError as ex:
        return _fail(str(ex), 2)
    except Exception as ex:  # pylint: disable=broad-exception-caught
        logging.debug("Command failed", exc_info=True)
        return _fail(str(ex) or type(ex).__name__, 1)
    finally:
        pool.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
