from dataclasses import dataclass, field
import logging
import os
import shutil
from typing import List, Optional, Tuple

import numpy as np

from mirrorfield.configbase import JsonConfig
from mirrorfield.harness import io
from mirrorfield.pool import WorkerPool
from mirrorfield.render.camera import Camera, generateRayBatch, lookAt
from mirrorfield.scenegen.oracle import DEFAULT_ORACLE_DEPTH, oracleTraceBatch
from mirrorfield.scenegen.scene import AnalyticScene

POSES_FILE = "poses.json"
SCENE_FILE = "scene.json"
LAYOUT_VERSION = 1
ROWS_PER_ITEM = 16


class DegenerateOrbitError(ValueError):
    "Raised when an orbit cannot place cameras (zero radius or a vertical view)"


class DatasetLayoutError(ValueError):
    "Raised when a dataset directory does not follow the documented layout"

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Invalid dataset {path}: {reason}")


@dataclass
class OrbitSpec(JsonConfig):
    """Cameras on a horizontal circle around a vertical axis, looking at a target

    Args:
        radiusM (float): Distance from the axis (m)
        heightM (float): Height of the cameras (m)
        target (tuple): Point the cameras look at
        center (tuple): Point on the orbit axis, the orbit is at its x and y
        startDeg (float): Azimuth of the first camera (degrees, from +x towards +y)
        arcDeg (float): Azimuth range covered. A full circle spaces n views evenly\
          without repeating the first one; a partial arc includes both ends
        fovYDeg (float): Vertical field of view (degrees)
        azimuthJitterDeg (float): Standard deviation of a random azimuth offset per\
          view (degrees), drawn from the dataset seed
        up (tuple): World up direction
    """

    radiusM: float = 1.5
    heightM: float = 1.2
    target: Tuple[float, float, float] = (0.0, 0.0, 0.6)
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    startDeg: float = 0.0
    arcDeg: float = 360.0
    fovYDeg: float = 70.0
    azimuthJitterDeg: float = 0.0
    up: Tuple[float, float, float] = (0.0, 0.0, 1.0)

    def validate(self):
        if not self.radiusM > 0 or not np.isfinite(self.radiusM):
            raise DegenerateOrbitError(f"Orbit radius must be positive, got {self.radiusM}")
        if not 0 < self.fovYDeg < 180:
            raise DegenerateOrbitError(f"Field of view must lie in (0, 180), got {self.fovYDeg}")
        if not 0 < self.arcDeg <= 360:
            raise DegenerateOrbitError(f"Orbit arc must lie in (0, 360], got {self.arcDeg}")

    def azimuthsDeg(self, nViews: int, rng: np.random.Generator) -> np.ndarray:
        azimuths = np.linspace(
            self.startDeg, self.startDeg + self.arcDeg, nViews, endpoint=self.arcDeg < 360.0
        )
        if self.azimuthJitterDeg > 0:
            azimuths = azimuths + rng.normal(0.0, self.azimuthJitterDeg, size=nViews)
        return azimuths

    def cameras(
        self, nViews: int, width: int, height: int, rng: np.random.Generator
    ) -> "list[Camera]":
        self.validate()
        cameras = []
        for azimuth in np.radians(self.azimuthsDeg(nViews, rng)):
            eye = np.array(
                [
                    self.center[0] + self.radiusM * np.cos(azimuth),
                    self.center[1] + self.radiusM * np.sin(azimuth),
                    self.heightM,
                ]
            )
            try:
                rotation, translation = lookAt(eye, self.target, self.up)
            except ValueError as ex:
                raise DegenerateOrbitError(f"Cannot aim a camera at {eye.tolist()}: {ex}") from ex
            cameras.append(Camera.fromFov(self.fovYDeg, width, height, rotation, translation))
        return cameras


@dataclass
class DatasetView:
    """One posed ground-truth view

    Args:
        camera (Camera): Intrinsics and pose
        image (np.ndarray): (H, W, 3) colors in [0, 1], quantised to 8 bits
        mask (np.ndarray): (H, W) bool, pixels whose first hit is a mirror
        depth (np.ndarray): (H, W) distance to the first hit (m), inf on a miss
    """

    camera: Camera
    image: np.ndarray
    mask: np.ndarray
    depth: np.ndarray


@dataclass
class SceneDataset:
    scene: AnalyticScene
    views: List[DatasetView]
    seed: int = 0
    orbit: Optional[OrbitSpec] = None
    oracleDepth: int = DEFAULT_ORACLE_DEPTH
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.views)

    def bounds(self) -> "tuple[np.ndarray, np.ndarray]":
        """Bounds of the scene, extended to contain every camera"""
        low, high = self.scene.bounds()
        eyes = np.stack([v.camera.translation for v in self.views])
        return np.minimum(low, eyes.min(axis=0)), np.maximum(high, eyes.max(axis=0))

    def subset(self, indices) -> "SceneDataset":
        return SceneDataset(
            self.scene,
            [self.views[int(i)] for i in indices],
            self.seed,
            self.orbit,
            self.oracleDepth,
            dict(self.extra),
        )


def renderOracleView(
    scene: AnalyticScene,
    camera: Camera,
    depth: int = DEFAULT_ORACLE_DEPTH,
    pool: "WorkerPool|None" = None,
) -> DatasetView:
    """Trace one ray per pixel center through the oracle"""
    pool = WorkerPool(1) if pool is None else pool
    pixels = camera.pixelGrid()
    items = [
        pixels[start : start + ROWS_PER_ITEM * camera.width]
        for start in range(0, pixels.shape[0], ROWS_PER_ITEM * camera.width)
    ]

    def traceRows(rows: np.ndarray):
        rays = generateRayBatch(camera, rows)
        return oracleTraceBatch(scene, rays.origins, rays.dirs, depth)

    results = pool.map(traceRows, items)
    color = np.concatenate([r[0] for r in results])
    tFirst = np.concatenate([r[1] for r in results])
    flags = np.concatenate([r[2] for r in results])
    shape = (camera.height, camera.width)
    return DatasetView(
        camera=camera,
        image=io.toUint8(color.reshape(shape + (3,))).astype(np.float64) / 255.0,
        mask=flags.reshape(shape),
        depth=tFirst.reshape(shape),
    )


def generateDataset(
    scene: AnalyticScene,
    nViews: int,
    resolution: "tuple[int, int]",
    orbit: "OrbitSpec|None" = None,
    rng: "np.random.Generator|int|None" = None,
    depth: int = DEFAULT_ORACLE_DEPTH,
    pool: "WorkerPool|None" = None,
) -> SceneDataset:
    """Render posed views of an analytic scene with the oracle

    Args:
        scene (AnalyticScene): The scene
        nViews (int): Number of views, at least 1
        resolution (tuple[int, int]): (width, height) in pixels
        orbit (OrbitSpec, optional): Camera placement. Defaults to OrbitSpec()
        rng (np.random.Generator|int, optional): Seed or generator of the orbit\
          jitter. Defaults to seed 0
        depth (int, optional): Mirror bounces of the oracle. Defaults to 4
        pool (WorkerPool, optional): Workers for the pixel rows

    Raises:
        DegenerateOrbitError: when the orbit cannot place cameras
    """
    if nViews < 1:
        raise ValueError(f"A dataset needs at least one view, got {nViews}")
    width, height = resolution
    if width < 1 or height < 1:
        raise ValueError(f"Invalid resolution {width}x{height}")
    orbit = OrbitSpec() if orbit is None else orbit
    seed = rng if isinstance(rng, int) else 0
    generator = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(seed)
    cameras = orbit.cameras(nViews, width, height, generator)
    views = [renderOracleView(scene, camera, depth, pool) for camera in cameras]
    logging.info(f"Rendered {nViews} oracle views of '{scene.name}' at {width}x{height}")
    return SceneDataset(scene, views, seed, orbit, depth)


def _viewName(index: int) -> str:
    return f"{index:04d}"


def saveDataset(dataset: SceneDataset, path: str, force: bool = False):
    """Write the dataset directory: images/NNNN.png, masks/NNNN.png (0/255),
    depth/NNNN.f32, poses.json and scene.json. The directory is assembled next to
    path and moved into place once complete

    Raises:
        FileExistsError: when path exists and force is False
    """
    if os.path.exists(path) and not force:
        raise FileExistsError(f"{path} already exists, use --force to overwrite it")
    tmpDir = io.temporaryDirectory(path)
    try:
        for sub in ("images", "masks", "depth"):
            os.makedirs(os.path.join(tmpDir, sub))
        poses = []
        for index, view in enumerate(dataset.views):
            name = _viewName(index)
            io.writePng(os.path.join(tmpDir, "images", f"{name}.png"), view.image)
            io.writePng(
                os.path.join(tmpDir, "masks", f"{name}.png"),
                view.mask.astype(np.uint8) * 255,
            )
            io.writeFloatBuffer(os.path.join(tmpDir, "depth", f"{name}.f32"), view.depth)
            poses.append({"name": name, **view.camera.toJson()})
        io.writeJson(
            os.path.join(tmpDir, POSES_FILE),
            {
                "version": LAYOUT_VERSION,
                "seed": dataset.seed,
                "oracleDepth": dataset.oracleDepth,
                "orbit": None if dataset.orbit is None else dataset.orbit.toJson(),
                "views": poses,
                **dataset.extra,
            },
        )
        io.writeJson(os.path.join(tmpDir, SCENE_FILE), dataset.scene.toJson())
        io.replaceDirectory(tmpDir, path, force)
    finally:
        shutil.rmtree(tmpDir, ignore_errors=True)


def loadDataset(path: str) -> SceneDataset:
    """Read a dataset directory written by saveDataset

    Raises:
        DatasetLayoutError: when a file is missing or inconsistent
    """
    if not os.path.isdir(path):
        raise DatasetLayoutError(path, "not a directory")
    for required in (POSES_FILE, SCENE_FILE, "images", "masks", "depth"):
        if not os.path.exists(os.path.join(path, required)):
            raise DatasetLayoutError(path, f"missing {required}")
    try:
        poses = io.readJson(os.path.join(path, POSES_FILE))
        scene = AnalyticScene.fromJson(io.readJson(os.path.join(path, SCENE_FILE)))
    except (OSError, ValueError, KeyError, TypeError) as ex:
        raise DatasetLayoutError(path, str(ex)) from ex
    if poses.get("version") != LAYOUT_VERSION:
        raise DatasetLayoutError(path, f"unsupported layout version {poses.get('version')}")
    views = []
    for entry in poses.get("views", []):
        name = entry.get("name")
        try:
            camera = Camera.fromJson(entry)
            image = io.readPng(os.path.join(path, "images", f"{name}.png"))
            mask = io.readPng(os.path.join(path, "masks", f"{name}.png"))
            depth = io.readFloatBuffer(os.path.join(path, "depth", f"{name}.f32"))
        except (OSError, ValueError, KeyError, TypeError) as ex:
            raise DatasetLayoutError(path, f"view {name}: {ex}") from ex
        shape = (camera.height, camera.width)
        if image.shape != shape + (3,) or mask.shape != shape or depth.shape != shape:
            raise DatasetLayoutError(path, f"view {name} does not match its {shape} resolution")
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise DatasetLayoutError(path, f"mask of view {name} is not binary")
        views.append(DatasetView(camera, image, mask.astype(bool), depth.astype(np.float64)))
    if len(views) == 0:
        raise DatasetLayoutError(path, "no views")
    orbit = None if poses.get("orbit") is None else OrbitSpec.fromJson(poses["orbit"])
    extra = {
        k: v
        for k, v in poses.items()
        if k not in ("version", "seed", "oracleDepth", "orbit", "views")
    }
    return SceneDataset(
        scene, views, int(poses.get("seed", 0)), orbit, int(poses.get("oracleDepth", 0)), extra
    )
