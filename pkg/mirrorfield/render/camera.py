from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from mirrorfield.render.config import RenderConfig

UNIT_TOLERANCE = 1e-6
ROTATION_TOLERANCE = 1e-6


@dataclass
class Ray:
    """A single ray. Points along it are origin + t * dir for t in [tMin, tMax]

    Args:
        origin (np.ndarray): World origin (m)
        dir (np.ndarray): Unit direction
        bounce (int): Number of reflections before this ray, 0 for camera rays
        tMin (float): Start of the sampling range (m)
        tMax (float): End of the sampling range (m)
    """

    origin: np.ndarray
    dir: np.ndarray
    bounce: int = 0
    tMin: float = 0.0
    tMax: float = 1.0

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.dir = np.asarray(self.dir, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self):
        if not (np.all(np.isfinite(self.origin)) and np.all(np.isfinite(self.dir))):
            raise ValueError("Ray origin and direction must be finite")
        if abs(np.linalg.norm(self.dir) - 1.0) > UNIT_TOLERANCE:
            raise ValueError(f"Ray direction {self.dir.tolist()} is not a unit vector")
        if self.bounce < 0:
            raise ValueError(f"Ray bounce must be nonnegative, got {self.bounce}")
        if not 0 <= self.tMin < self.tMax:
            raise ValueError(
                f"Expected 0 <= tMin < tMax, got {self.tMin} and {self.tMax}"
            )

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.dir


@dataclass
class RayBatch:
    """R rays stored as arrays: origins (R, 3), dirs (R, 3), bounce (R,) int,
    tMin (R,), tMax (R,)"""

    origins: np.ndarray
    dirs: np.ndarray
    bounce: np.ndarray
    tMin: np.ndarray
    tMax: np.ndarray

    def __len__(self):
        return self.origins.shape[0]

    @staticmethod
    def fromRays(rays: "Sequence[Ray]") -> "RayBatch":
        return RayBatch(
            origins=np.array([r.origin for r in rays], dtype=np.float64).reshape(-1, 3),
            dirs=np.array([r.dir for r in rays], dtype=np.float64).reshape(-1, 3),
            bounce=np.array([r.bounce for r in rays], dtype=np.int64),
            tMin=np.array([r.tMin for r in rays], dtype=np.float64),
            tMax=np.array([r.tMax for r in rays], dtype=np.float64),
        )

    def ray(self, index: int) -> Ray:
        return Ray(
            origin=self.origins[index].copy(),
            dir=self.dirs[index].copy(),
            bounce=int(self.bounce[index]),
            tMin=float(self.tMin[index]),
            tMax=float(self.tMax[index]),
        )

    def rays(self) -> "list[Ray]":
        return [self.ray(i) for i in range(len(self))]

    def subset(self, index) -> "RayBatch":
        return RayBatch(
            origins=self.origins[index],
            dirs=self.dirs[index],
            bounce=self.bounce[index],
            tMin=self.tMin[index],
            tMax=self.tMax[index],
        )

    def validate(self):
        if not (np.all(np.isfinite(self.origins)) and np.all(np.isfinite(self.dirs))):
            raise ValueError("Ray origins and directions must be finite")
        norms = np.linalg.norm(self.dirs, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
            raise ValueError("Ray directions must be unit vectors")
        if np.any(self.tMin < 0) or np.any(self.tMin >= self.tMax):
            raise ValueError("Every ray needs 0 <= tMin < tMax")


def checkRotation(rotation: np.ndarray, name: str = "rotation"):
    """Raise a ValueError unless rotation is a proper 3x3 rotation matrix"""
    if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
        raise ValueError(f"{name} must be a finite 3x3 matrix")
    if not np.allclose(rotation @ rotation.T, np.eye(3), atol=ROTATION_TOLERANCE):
        raise ValueError(f"{name} is not orthonormal")
    if abs(np.linalg.det(rotation) - 1.0) > ROTATION_TOLERANCE:
        raise ValueError(f"{name} must have determinant +1")


@dataclass
class Camera:
    """Pinhole camera. Camera axes are x to the right, y down and z along the
    optical axis; pixel (row, col) has its center at image coordinate (col, row)

    Args:
        fx, fy (float): Focal lengths (pixels)
        cx, cy (float): Principal point (pixels)
        rotation (np.ndarray): 3x3 camera-to-world rotation
        translation (np.ndarray): Camera center in world coordinates (m)
        width, height (int): Image size (pixels)
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        self.validate()

    def validate(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"Focal lengths must be positive, got {self.fx}, {self.fy}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"Invalid image size {self.width}x{self.height}")
        checkRotation(self.rotation, "Camera rotation")
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("Camera translation must be finite")

    @staticmethod
    def fromFov(
        fovYDeg: float,
        width: int,
        height: int,
        rotation: np.ndarray,
        translation: np.ndarray,
    ) -> "Camera":
        """Camera with square pixels, a vertical field of view and the principal
        point in the image center"""
        fy = 0.5 * height / np.tan(np.radians(fovYDeg) / 2.0)
        return Camera(
            fx=fy,
            fy=fy,
            cx=(width - 1) / 2.0,
            cy=(height - 1) / 2.0,
            rotation=rotation,
            translation=translation,
            width=width,
            height=height,
        )

    def opticalAxis(self) -> np.ndarray:
        return self.rotation[:, 2].copy()

    def cameraToWorld(self) -> np.ndarray:
        """3x4 row-major camera-to-world matrix [R | t]"""
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    def withPose(self, rotation: np.ndarray, translation: np.ndarray) -> "Camera":
        return Camera(
            self.fx, self.fy, self.cx, self.cy, rotation, translation, self.width, self.height
        )

    def pixelGrid(self) -> np.ndarray:
        """All pixels in row-major order as an (H*W, 2) array of (row, col)"""
        rows, cols = np.meshgrid(
            np.arange(self.height), np.arange(self.width), indexing="ij"
        )
        return np.stack([rows.ravel(), cols.ravel()], axis=1)

    def toJson(self) -> dict:
        return {
            "cameraToWorld": self.cameraToWorld().tolist(),
            "intrinsics": {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy},
            "resolution": {"width": self.width, "height": self.height},
        }

    @staticmethod
    def fromJson(data: dict) -> "Camera":
        matrix = np.asarray(data["cameraToWorld"], dtype=np.float64)
        if matrix.shape != (3, 4):
            raise ValueError(f"cameraToWorld must be 3x4, got {matrix.shape}")
        intrinsics = data["intrinsics"]
        resolution = data["resolution"]
        return Camera(
            fx=float(intrinsics["fx"]),
            fy=float(intrinsics["fy"]),
            cx=float(intrinsics["cx"]),
            cy=float(intrinsics["cy"]),
            rotation=matrix[:, :3],
            translation=matrix[:, 3],
            width=int(resolution["width"]),
            height=int(resolution["height"]),
        )


def lookAt(eye, target, up=(0.0, 0.0, 1.0)) -> "Tuple[np.ndarray, np.ndarray]":
    """Camera-to-world pose of a camera at eye looking at target, with the image
    y axis pointing away from up

    Returns:
        tuple[np.ndarray, np.ndarray]: The rotation and the translation
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forwardNorm = np.linalg.norm(forward)
    if forwardNorm < 1e-12:
        raise ValueError("lookAt needs distinct eye and target points")
    forward = forward / forwardNorm
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rightNorm = np.linalg.norm(right)
    if rightNorm < 1e-12:
        raise ValueError("lookAt up vector is parallel to the viewing direction")
    right = right / rightNorm
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1), eye


def _pixelArray(camera: Camera, pixels: "Iterable[Tuple[int, int]]|np.ndarray"):
    pixelArray = np.asarray(pixels)
    if pixelArray.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pixelArray = pixelArray.reshape(-1, 2)
    if not np.all(pixelArray == np.round(pixelArray)):
        raise ValueError("Pixel coordinates must be integers")
    pixelArray = pixelArray.astype(np.int64)
    rows, cols = pixelArray[:, 0], pixelArray[:, 1]
    outside = (rows < 0) | (rows >= camera.height) | (cols < 0) | (cols >= camera.width)
    if np.any(outside):
        bad = pixelArray[outside][0]
        raise IndexError(
            f"Pixel (row {bad[0]}, col {bad[1]}) is outside the "
            f"{camera.width}x{camera.height} image"
        )
    return pixelArray


def generateRayBatch(
    camera: Camera,
    pixels: "Iterable[Tuple[int, int]]|np.ndarray",
    config: "RenderConfig|None" = None,
) -> RayBatch:
    """Camera rays through the centers of the given (row, col) pixels

    Raises:
        IndexError: when a pixel lies outside the image
    """
    config = RenderConfig() if config is None else config
    pixelArray = _pixelArray(camera, pixels)
    rows = pixelArray[:, 0].astype(np.float64)
    cols = pixelArray[:, 1].astype(np.float64)
    dirsCamera = np.stack(
        [(cols - camera.cx) / camera.fx, (rows - camera.cy) / camera.fy, np.ones_like(rows)],
        axis=1,
    )
    dirs = dirsCamera @ camera.rotation.T
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    nRays = pixelArray.shape[0]
    return RayBatch(
        origins=np.repeat(camera.translation[None, :], nRays, axis=0),
        dirs=dirs,
        bounce=np.zeros(nRays, dtype=np.int64),
        tMin=np.full(nRays, config.tNearM),
        tMax=np.full(nRays, config.tFarM),
    )


def generateRays(
    camera: Camera,
    pixels: "Iterable[Tuple[int, int]]|np.ndarray",
    config: "RenderConfig|None" = None,
) -> "list[Ray]":
    """Camera rays through the centers of the given (row, col) pixels, with the
    sampling range [tNearM, tFarM] of the render configuration

    Example:
      >>> import numpy as np
      >>> camera = Camera(2.0, 2.0, 1.0, 1.0, np.eye(3), np.zeros(3), 3, 3)
      >>> generateRays(camera, [(1, 1)])[0].dir.tolist()
      [0.0, 0.0, 1.0]
    """
    return generateRayBatch(camera, pixels, config).rays()
