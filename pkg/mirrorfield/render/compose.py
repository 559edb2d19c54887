from dataclasses import dataclass
import dataclasses
from typing import List, Optional

import numpy as np

from mirrorfield.field.params import FieldParams
from mirrorfield.render.camera import Ray, RayBatch, checkRotation

PARALLEL_EPS = 1e-12

ENTRY_KINDS = ("learned-field", "virtual-mirror")


@dataclass
class RigidTransform:
    """Rigid map x -> rotation @ x + translation

    >>> RigidTransform.fromPlacement((1.0, 2.0, 3.0)).inverse().translation.tolist()
    [-1.0, -2.0, -3.0]
    """

    rotation: np.ndarray = dataclasses.field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = dataclasses.field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        checkRotation(self.rotation, "Transform rotation")
        if not np.all(np.isfinite(self.translation)):
            raise ValueError("Transform translation must be finite")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    @staticmethod
    def fromPlacement(translation, yawDeg: float = 0.0) -> "RigidTransform":
        """Rotation about the world z axis by yawDeg followed by a translation"""
        yaw = np.radians(yawDeg)
        rotation = np.array(
            [
                [np.cos(yaw), -np.sin(yaw), 0.0],
                [np.sin(yaw), np.cos(yaw), 0.0],
                [0.0, 0.0, 1.0],
            ]
        )
        return RigidTransform(rotation, np.asarray(translation, dtype=np.float64))

    def isIdentity(self) -> bool:
        return bool(
            np.array_equal(self.rotation, np.eye(3))
            and not np.any(self.translation)
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def then(self, other: "RigidTransform") -> "RigidTransform":
        """The map applying self first and other second"""
        return RigidTransform(
            other.rotation @ self.rotation,
            other.rotation @ self.translation + other.translation,
        )

    def applyPoints(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def applyDirections(self, dirs: np.ndarray) -> np.ndarray:
        return dirs @ self.rotation.T

    def applyRays(self, rays: RayBatch) -> RayBatch:
        """Map a batch of rays. Distances along the rays are preserved"""
        if self.isIdentity():
            return rays
        return RayBatch(
            origins=self.applyPoints(rays.origins),
            dirs=self.applyDirections(rays.dirs),
            bounce=rays.bounce,
            tMin=rays.tMin,
            tMax=rays.tMax,
        )

    def toJson(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @staticmethod
    def fromJson(data: dict) -> "RigidTransform":
        return RigidTransform(data["rotation"], data["translation"])


@dataclass
class VirtualMirror:
    """A perfect rectangular mirror inserted into a scene

    Args:
        center (np.ndarray): World center of the rectangle (m)
        frame (np.ndarray): 3x3 matrix with rows u, v and n, an orthonormal basis;\
          u and v span the rectangle, n is its normal
        halfExtents (tuple[float, float]): Half sizes (hu, hv) along u and v (m)
    """

    center: np.ndarray
    frame: np.ndarray
    halfExtents: "tuple[float, float]"

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64).reshape(3)
        self.frame = np.asarray(self.frame, dtype=np.float64).reshape(3, 3)
        self.halfExtents = (float(self.halfExtents[0]), float(self.halfExtents[1]))
        if not np.allclose(self.frame @ self.frame.T, np.eye(3), atol=1e-6):
            raise ValueError("VirtualMirror frame must be orthonormal")
        if min(self.halfExtents) <= 0:
            raise ValueError(f"Half extents must be positive, got {self.halfExtents}")

    @staticmethod
    def fromNormal(center, normal, up, halfExtents) -> "VirtualMirror":
        """Mirror facing along normal, with its v axis as close to up as possible"""
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        u = np.cross(np.asarray(up, dtype=np.float64), n)
        if np.linalg.norm(u) < 1e-9:
            raise ValueError("VirtualMirror up vector is parallel to its normal")
        u = u / np.linalg.norm(u)
        v = np.cross(n, u)
        return VirtualMirror(center, np.stack([u, v, n]), halfExtents)

    @property
    def normal(self) -> np.ndarray:
        return self.frame[2]

    def toJson(self) -> dict:
        return {
            "center": self.center.tolist(),
            "frame": self.frame.tolist(),
            "halfExtents": list(self.halfExtents),
        }

    @staticmethod
    def fromJson(data: dict) -> "VirtualMirror":
        return VirtualMirror(data["center"], data["frame"], data["halfExtents"])


def intersectVirtualMirrorBatch(
    rays: RayBatch, mirror: VirtualMirror
) -> "tuple[np.ndarray, np.ndarray, np.ndarray]":
    """Ray-rectangle intersection for a batch of rays

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: Hit flags (R,), hit parameters
            (R,) (inf on a miss) and normals (R, 3) facing the rays. Hits outside
            [tMin, tMax] are misses
    """
    n = mirror.normal
    denominator = rays.dirs @ n
    parallel = np.abs(denominator) < PARALLEL_EPS
    safe = np.where(parallel, 1.0, denominator)
    t = ((mirror.center - rays.origins) @ n) / safe
    offsets = rays.origins + t[:, None] * rays.dirs - mirror.center
    a = offsets @ mirror.frame[0]
    b = offsets @ mirror.frame[1]
    hit = (
        ~parallel
        & (t >= rays.tMin)
        & (t <= rays.tMax)
        & (np.abs(a) <= mirror.halfExtents[0])
        & (np.abs(b) <= mirror.halfExtents[1])
    )
    facing = np.where(denominator[:, None] < 0, n, -n)
    return hit, np.where(hit, t, np.inf), facing


def intersectVirtualMirror(
    ray: Ray, mirror: VirtualMirror
) -> "Optional[tuple[float, np.ndarray]]":
    """Intersect one ray with a virtual mirror

    Returns:
        tuple[float, np.ndarray]|None: The hit parameter t (m) and the mirror normal
            oriented against the ray, or None for parallel rays, hits outside
            [tMin, tMax] and hits outside the rectangle
    """
    hit, t, facing = intersectVirtualMirrorBatch(RayBatch.fromRays([ray]), mirror)
    if not hit[0]:
        return None
    return float(t[0]), facing[0]


@dataclass
class SceneEntry:
    """One member of a composed scene. transform maps world coordinates into the
    frame of the entry (world-to-field)"""

    kind: str
    field: Optional[FieldParams] = None
    mirror: Optional[VirtualMirror] = None
    transform: RigidTransform = dataclasses.field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.kind not in ENTRY_KINDS:
            raise ValueError(f"Unknown scene entry kind '{self.kind}'")
        if self.kind == "learned-field" and self.field is None:
            raise ValueError("A learned-field entry needs a field")
        if self.kind == "virtual-mirror" and self.mirror is None:
            raise ValueError("A virtual-mirror entry needs a mirror")

    @staticmethod
    def learned(params: FieldParams, transform: "RigidTransform|None" = None):
        return SceneEntry(
            "learned-field",
            field=params,
            transform=RigidTransform.identity() if transform is None else transform,
        )

    @staticmethod
    def virtualMirror(mirror: VirtualMirror, transform: "RigidTransform|None" = None):
        return SceneEntry(
            "virtual-mirror",
            mirror=mirror,
            transform=RigidTransform.identity() if transform is None else transform,
        )


@dataclass
class Substitution:
    """Reflected rays spawned in the scene are mapped by portal and rendered in
    target instead"""

    target: FieldParams
    portal: RigidTransform = dataclasses.field(default_factory=RigidTransform.identity)


@dataclass
class ComposedScene:
    """Learned fields and virtual mirrors sharing one world, optionally with a
    reflection substitution"""

    entries: List[SceneEntry]
    substitution: Optional[Substitution] = None

    def __post_init__(self):
        if len(self.entries) == 0:
            raise ValueError("A composed scene needs at least one entry")

    @staticmethod
    def single(params: FieldParams) -> "ComposedScene":
        return ComposedScene([SceneEntry.learned(params)])

    def learnedEntries(self) -> "list[int]":
        return [i for i, e in enumerate(self.entries) if e.kind == "learned-field"]

    def singleField(self) -> "Optional[FieldParams]":
        """The field of a scene made of exactly one untransformed learned field"""
        if len(self.entries) != 1:
            return None
        entry = self.entries[0]
        if entry.kind != "learned-field" or not entry.transform.isIdentity():
            return None
        return entry.field


def asScene(scene) -> ComposedScene:
    if isinstance(scene, ComposedScene):
        return scene
    if isinstance(scene, FieldParams):
        return ComposedScene.single(scene)
    raise TypeError(f"Expected FieldParams or a ComposedScene, got {type(scene).__name__}")
