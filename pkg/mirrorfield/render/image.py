from dataclasses import dataclass
from typing import Optional
import logging

import numpy as np

from mirrorfield.pool import WorkerPool
from mirrorfield.render.camera import Camera, generateRayBatch
from mirrorfield.render.config import RenderConfig
from mirrorfield.render.compose import asScene
from mirrorfield.render.sampling import RayStreams
from mirrorfield.render.tracer import WhittedTracer

MAX_REPORTED_PIXELS = 32


@dataclass
class FrameReport:
    """Summary of a rendered frame

    Args:
        width, height (int): Frame size (pixels)
        seed (int): Seed of the per-tile random streams
        tiles (int): Number of work items the frame was split in
        degeneratePixels (int): Pixels whose trace met a degenerate normal; they\
          keep the color of their last successful bounce
        degenerateExamples (list[tuple[int, int]]): Up to 32 such (row, col) pixels
    """

    width: int
    height: int
    seed: int
    tiles: int
    degeneratePixels: int
    degenerateExamples: "list[tuple[int, int]]"

    def toJson(self) -> dict:
        return {
            "width": self.width,
            "height": self.height,
            "seed": self.seed,
            "tiles": self.tiles,
            "degeneratePixels": self.degeneratePixels,
            "degenerateExamples": [list(p) for p in self.degenerateExamples],
        }


@dataclass
class RenderedFrame:
    """A traced image with the auxiliary buffers of its camera rays

    Args:
        image (np.ndarray): (H, W, 3) colors
        depth (np.ndarray): (H, W) expected termination depth (m)
        reflprob (np.ndarray): (H, W) rendered reflection probability
        normal (np.ndarray): (H, W, 3) rendered normals
        opacity (np.ndarray): (H, W)
        report (FrameReport)
    """

    image: np.ndarray
    depth: np.ndarray
    reflprob: np.ndarray
    normal: np.ndarray
    opacity: np.ndarray
    report: FrameReport

    def mask(self, threshold: float = 0.5) -> np.ndarray:
        return self.reflprob > threshold


def renderImage(
    scene,
    camera: Camera,
    config: "RenderConfig|None" = None,
    pool: "Optional[WorkerPool]" = None,
) -> RenderedFrame:
    """Trace every pixel of a camera. Pixels are split in row-major tiles of
    config.tileSize; tile k draws from RayStreams(config.seed, k), so the frame
    does not depend on the number of workers. Rough mirrors are rendered when
    config.roughKappa > 0

    Args:
        scene (FieldParams|ComposedScene): What to render
        camera (Camera): The camera
        config (RenderConfig, optional): Settings, including the seed
        pool (WorkerPool, optional): Workers to spread the tiles over. Defaults to
            a pool sized by MIRRORFIELD_THREADS

    Returns:
        RenderedFrame
    """
    config = RenderConfig() if config is None else config
    tracer = WhittedTracer(asScene(scene), config)
    pixels = camera.pixelGrid()
    tileSize = config.tileSize
    tiles = [
        (k, pixels[start : start + tileSize])
        for k, start in enumerate(range(0, pixels.shape[0], tileSize))
    ]

    def renderTile(tile):
        index, tilePixels = tile
        logging.debug(f"Rendering tile {index} ({tilePixels.shape[0]} pixels)")
        rays = generateRayBatch(camera, tilePixels, config)
        return tracer.traceRough(
            rays, RayStreams(config.seed, index), config.roughSamples, config.roughKappa
        )

    ownPool = pool is None
    pool = WorkerPool() if pool is None else pool
    try:
        results = pool.map(renderTile, tiles)
    finally:
        if ownPool:
            pool.close()

    height, width = camera.height, camera.width
    color = np.concatenate([r.color for r in results]).reshape(height, width, 3)
    failed = np.concatenate([r.failed for r in results]).reshape(height, width)
    primary = [r.primary for r in results]
    degenerate = np.argwhere(failed)
    if degenerate.shape[0] > 0:
        logging.warning(
            f"{degenerate.shape[0]} pixel(s) of a {width}x{height} frame met a "
            "degenerate normal"
        )
    report = FrameReport(
        width=width,
        height=height,
        seed=config.seed,
        tiles=len(tiles),
        degeneratePixels=int(degenerate.shape[0]),
        degenerateExamples=[
            (int(r), int(c)) for r, c in degenerate[:MAX_REPORTED_PIXELS]
        ],
    )
    return RenderedFrame(
        image=color,
        depth=np.concatenate([p.depth for p in primary]).reshape(height, width),
        reflprob=np.concatenate([p.reflprob for p in primary]).reshape(height, width),
        normal=np.concatenate([p.normal for p in primary]).reshape(height, width, 3),
        opacity=np.concatenate([p.opacity for p in primary]).reshape(height, width),
        report=report,
    )
