import logging
import os
import shutil

import numpy as np

from mirrorfield.harness import io
from mirrorfield.pool import WorkerPool
from mirrorfield.render.camera import Camera
from mirrorfield.render.config import RenderConfig
from mirrorfield.render.image import RenderedFrame, renderImage
from mirrorfield.scenegen.dataset import POSES_FILE

REPORT_FILE = "report.json"


def loadCameras(path: str) -> "list[Camera]":
    """Cameras of a poses file, or of the poses.json of a dataset directory. The
    file holds a list of cameras or an object with a "views" list"""
    if os.path.isdir(path):
        path = os.path.join(path, POSES_FILE)
    data = io.readJson(path)
    entries = data.get("views", []) if isinstance(data, dict) else data
    if not isinstance(entries, list) or len(entries) == 0:
        raise ValueError(f"{path} holds no camera poses")
    return [Camera.fromJson(entry) for entry in entries]


def renderFrames(
    scene,
    cameras: "list[Camera]",
    config: "RenderConfig|None" = None,
    pool: "WorkerPool|None" = None,
) -> "list[RenderedFrame]":
    frames = []
    for index, camera in enumerate(cameras):
        frames.append(renderImage(scene, camera, config, pool))
        logging.debug(f"Rendered frame {index + 1}/{len(cameras)}")
    return frames


def saveFrames(frames: "list[RenderedFrame]", path: str, force: bool = False, extra=None):
    """Write NNNN.png, NNNN_mask.png, NNNN_depth.f32, NNNN_opacity.f32 and
    NNNN_normal.f32 per frame, plus report.json, into a fresh directory"""
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} already exists, use --force to overwrite it")
    tmpDir = io.temporaryDirectory(path)
    try:
        reports = []
        for index, frame in enumerate(frames):
            name = f"{index:04d}"
            io.writePng(os.path.join(tmpDir, f"{name}.png"), frame.image)
            io.writePng(
                os.path.join(tmpDir, f"{name}_mask.png"), frame.mask().astype(np.uint8) * 255
            )
            io.writeFloatBuffer(os.path.join(tmpDir, f"{name}_depth.f32"), frame.depth)
            io.writeFloatBuffer(os.path.join(tmpDir, f"{name}_opacity.f32"), frame.opacity)
            io.writeFloatBuffer(os.path.join(tmpDir, f"{name}_normal.f32"), frame.normal)
            reports.append({"name": name, **frame.report.toJson()})
        io.writeJson(
            os.path.join(tmpDir, REPORT_FILE),
            {
                "frames": reports,
                "degeneratePixels": int(sum(r["degeneratePixels"] for r in reports)),
                **({} if extra is None else extra),
            },
        )
        io.replaceDirectory(tmpDir, path, force)
    finally:
        shutil.rmtree(tmpDir, ignore_errors=True)
