"""Analytic scenes: spheres, axis-aligned boxes and rectangles made of lambertian
or perfect mirror material, lit by directional lights and an ambient term."""
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

MATERIAL_KINDS = ("lambertian", "mirror")
NO_HIT = -1


class UnknownShapeError(ValueError):
    "Raised when a scene description names a shape kind that does not exist"


def _vector(value, name: str) -> np.ndarray:
    vector = np.asarray(value, dtype=np.float64).reshape(-1)
    if vector.shape != (3,) or not np.all(np.isfinite(vector)):
        raise ValueError(f"{name} must be 3 finite numbers, got {value}")
    return vector


def _unit(value, name: str) -> np.ndarray:
    vector = _vector(value, name)
    norm = np.linalg.norm(vector)
    if norm < 1e-12:
        raise ValueError(f"{name} must not be the zero vector")
    return vector / norm


def _rgb(value, name: str) -> np.ndarray:
    rgb = _vector(value, name)
    if np.any(rgb < 0):
        raise ValueError(f"{name} channels must be nonnegative, got {rgb.tolist()}")
    return rgb


@dataclass
class Material:
    """Surface response of a primitive

    Args:
        kind (str): "lambertian" or "mirror"
        albedo (np.ndarray): Diffuse reflectance per channel, unused by mirrors
    """

    kind: str
    albedo: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if self.kind not in MATERIAL_KINDS:
            raise ValueError(
                f"Material kind must be one of {', '.join(MATERIAL_KINDS)}, got '{self.kind}'"
            )
        self.albedo = _rgb(self.albedo, "Albedo")

    @staticmethod
    def lambertian(albedo) -> "Material":
        return Material("lambertian", albedo)

    @staticmethod
    def mirror() -> "Material":
        return Material("mirror")

    @property
    def isMirror(self) -> bool:
        return self.kind == "mirror"

    def toJson(self) -> dict:
        if self.isMirror:
            return {"kind": self.kind}
        return {"kind": self.kind, "albedo": self.albedo.tolist()}

    @staticmethod
    def fromJson(data: dict) -> "Material":
        return Material(data["kind"], data.get("albedo", (0.0, 0.0, 0.0)))


class Shape:
    """Shapes intersect batches of rays. intersect returns, per ray, the nearest
    distance t >= tMin (inf on a miss) and the unit outward normal at the hit"""

    kind = ""

    def intersect(
        self, origins: np.ndarray, dirs: np.ndarray, tMin: float
    ) -> "Tuple[np.ndarray, np.ndarray]":
        raise NotImplementedError("This method should be overridden in child classes")

    def bounds(self) -> "Tuple[np.ndarray, np.ndarray]":
        raise NotImplementedError("This method should be overridden in child classes")

    def toJson(self) -> dict:
        raise NotImplementedError("This method should be overridden in child classes")


@dataclass
class Sphere(Shape):
    center: np.ndarray
    radius: float

    kind = "sphere"

    def __post_init__(self):
        self.center = _vector(self.center, "Sphere center")
        if not self.radius > 0:
            raise ValueError(f"Sphere radius must be positive, got {self.radius}")
        self.radius = float(self.radius)

    def intersect(self, origins, dirs, tMin):
        offset = origins - self.center
        b = np.sum(offset * dirs, axis=1)
        c = np.sum(offset * offset, axis=1) - self.radius**2
        disc = b * b - c
        hit = disc >= 0
        root = np.sqrt(np.where(hit, disc, 0.0))
        near = -b - root
        far = -b + root
        t = np.where(near >= tMin, near, np.where(far >= tMin, far, np.inf))
        t = np.where(hit, t, np.inf)
        finite = np.isfinite(t)
        normals = np.zeros_like(origins)
        points = origins[finite] + t[finite, None] * dirs[finite]
        normals[finite] = (points - self.center) / self.radius
        return t, normals

    def bounds(self):
        return self.center - self.radius, self.center + self.radius

    def toJson(self):
        return {"kind": self.kind, "center": self.center.tolist(), "radius": self.radius}


@dataclass
class AxisAlignedBox(Shape):
    boxMin: np.ndarray
    boxMax: np.ndarray

    kind = "box"

    def __post_init__(self):
        self.boxMin = _vector(self.boxMin, "Box minimum")
        self.boxMax = _vector(self.boxMax, "Box maximum")
        if np.any(self.boxMax <= self.boxMin):
            raise ValueError(
                f"Box maximum {self.boxMax.tolist()} must exceed its minimum "
                f"{self.boxMin.tolist()} on every axis"
            )

    def intersect(self, origins, dirs, tMin):
        with np.errstate(divide="ignore", invalid="ignore"):
            inverse = 1.0 / dirs
            t0 = (self.boxMin - origins) * inverse
            t1 = (self.boxMax - origins) * inverse
        # Rays parallel to a slab never cross it: inside gives (-inf, inf)
        parallel = dirs == 0.0
        insideSlab = (origins >= self.boxMin) & (origins <= self.boxMax)
        tLow = np.where(parallel, np.where(insideSlab, -np.inf, np.inf), np.minimum(t0, t1))
        tHigh = np.where(parallel, np.where(insideSlab, np.inf, -np.inf), np.maximum(t0, t1))
        enterAxis = np.argmax(tLow, axis=1)
        exitAxis = np.argmin(tHigh, axis=1)
        rows = np.arange(origins.shape[0])
        tEnter = tLow[rows, enterAxis]
        tExit = tHigh[rows, exitAxis]
        hit = tEnter <= tExit
        useEnter = hit & (tEnter >= tMin)
        useExit = hit & ~useEnter & (tExit >= tMin)
        t = np.full(origins.shape[0], np.inf)
        t[useEnter] = tEnter[useEnter]
        t[useExit] = tExit[useExit]
        normals = np.zeros_like(origins)
        # Entering through a face means travelling against its outward normal
        enterRows = rows[useEnter]
        normals[enterRows, enterAxis[useEnter]] = -np.sign(dirs[enterRows, enterAxis[useEnter]])
        exitRows = rows[useExit]
        normals[exitRows, exitAxis[useExit]] = np.sign(dirs[exitRows, exitAxis[useExit]])
        return t, normals

    def bounds(self):
        return self.boxMin.copy(), self.boxMax.copy()

    def toJson(self):
        return {"kind": self.kind, "min": self.boxMin.tolist(), "max": self.boxMax.tolist()}


@dataclass
class Rectangle(Shape):
    """A two-sided rectangle. Its normal is returned facing the incoming ray

    Args:
        center (np.ndarray): Center point
        normal (np.ndarray): Unit normal of the plane
        uAxis (np.ndarray): In-plane direction of the first half extent, made\
          orthogonal to the normal
        halfExtents (tuple[float, float]): Half width along uAxis and half height\
          along normal x uAxis (m)
    """

    center: np.ndarray
    normal: np.ndarray
    uAxis: np.ndarray
    halfExtents: Tuple[float, float]

    kind = "rectangle"

    def __post_init__(self):
        self.center = _vector(self.center, "Rectangle center")
        self.normal = _unit(self.normal, "Rectangle normal")
        u = _vector(self.uAxis, "Rectangle u axis")
        u = u - np.dot(u, self.normal) * self.normal
        self.uAxis = _unit(u, "Rectangle u axis (orthogonal part)")
        halfExtents = tuple(float(h) for h in self.halfExtents)
        if len(halfExtents) != 2 or min(halfExtents) <= 0:
            raise ValueError(f"Rectangle half extents must be 2 positive numbers, got {halfExtents}")
        self.halfExtents = halfExtents  # type: ignore

    @property
    def vAxis(self) -> np.ndarray:
        return np.cross(self.normal, self.uAxis)

    def intersect(self, origins, dirs, tMin):
        facing = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.center - origins) @ self.normal) / facing
        t = np.where((np.abs(facing) > 1e-12) & (t >= tMin), t, np.inf)
        finite = np.isfinite(t)
        local = np.zeros((origins.shape[0], 2))
        local[finite, 0] = (origins[finite] + t[finite, None] * dirs[finite] - self.center) @ self.uAxis
        local[finite, 1] = (origins[finite] + t[finite, None] * dirs[finite] - self.center) @ self.vAxis
        inside = (np.abs(local[:, 0]) <= self.halfExtents[0]) & (
            np.abs(local[:, 1]) <= self.halfExtents[1]
        )
        t = np.where(finite & inside, t, np.inf)
        normals = np.where(facing[:, None] > 0, -self.normal, self.normal)
        normals[~np.isfinite(t)] = 0.0
        return t, normals

    def corners(self) -> np.ndarray:
        u = self.uAxis * self.halfExtents[0]
        v = self.vAxis * self.halfExtents[1]
        return np.stack(
            [self.center - u - v, self.center + u - v, self.center + u + v, self.center - u + v]
        )

    def bounds(self):
        corners = self.corners()
        return corners.min(axis=0), corners.max(axis=0)

    def toJson(self):
        return {
            "kind": self.kind,
            "center": self.center.tolist(),
            "normal": self.normal.tolist(),
            "uAxis": self.uAxis.tolist(),
            "halfExtents": list(self.halfExtents),
        }


def shapeFromJson(data: dict) -> Shape:
    kind = data.get("kind")
    if kind == Sphere.kind:
        return Sphere(data["center"], data["radius"])
    if kind == AxisAlignedBox.kind:
        return AxisAlignedBox(data["min"], data["max"])
    if kind == Rectangle.kind:
        return Rectangle(data["center"], data["normal"], data["uAxis"], tuple(data["halfExtents"]))
    raise UnknownShapeError(f"Unknown shape kind '{kind}'")


@dataclass
class Primitive:
    shape: Shape
    material: Material
    name: str = ""

    def toJson(self) -> dict:
        return {"name": self.name, "shape": self.shape.toJson(), "material": self.material.toJson()}

    @staticmethod
    def fromJson(data: dict) -> "Primitive":
        return Primitive(
            shapeFromJson(data["shape"]), Material.fromJson(data["material"]), data.get("name", "")
        )


@dataclass
class DirectionalLight:
    """A light at infinity

    Args:
        direction (np.ndarray): Unit vector pointing from the scene towards the light
        intensity (np.ndarray): Radiance per channel
    """

    direction: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        self.direction = _unit(self.direction, "Light direction")
        self.intensity = _rgb(self.intensity, "Light intensity")

    def toJson(self) -> dict:
        return {"direction": self.direction.tolist(), "intensity": self.intensity.tolist()}

    @staticmethod
    def fromJson(data: dict) -> "DirectionalLight":
        return DirectionalLight(data["direction"], data["intensity"])


@dataclass
class SceneHits:
    """Nearest hits of a batch of rays

    Args:
        t (np.ndarray): (R,) distances, inf on a miss
        primitive (np.ndarray): (R,) index of the hit primitive, -1 on a miss
        normal (np.ndarray): (R, 3) unit normals, zero on a miss
    """

    t: np.ndarray
    primitive: np.ndarray
    normal: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.primitive != NO_HIT


@dataclass
class AnalyticScene:
    """Primitives, lights and the colors of the ambient term and of rays leaving
    the scene"""

    primitives: List[Primitive]
    lights: List[DirectionalLight]
    ambient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    name: str = ""

    def __post_init__(self):
        self.ambient = _rgb(self.ambient, "Ambient color")
        self.background = _rgb(self.background, "Background color")
        if len(self.primitives) == 0:
            raise ValueError("An analytic scene needs at least one primitive")

    def mirrorCount(self) -> int:
        return sum(1 for p in self.primitives if p.material.isMirror)

    def bounds(self) -> "Tuple[np.ndarray, np.ndarray]":
        """Axis-aligned bounds of all primitives"""
        lows, highs = zip(*(p.shape.bounds() for p in self.primitives))
        return np.min(lows, axis=0), np.max(highs, axis=0)

    def diagonal(self) -> float:
        low, high = self.bounds()
        return float(np.linalg.norm(high - low))

    def intersect(self, origins: np.ndarray, dirs: np.ndarray, tMin: float = 1e-9) -> SceneHits:
        origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
        dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
        nRays = origins.shape[0]
        best = np.full(nRays, np.inf)
        primitive = np.full(nRays, NO_HIT, dtype=np.int64)
        normal = np.zeros((nRays, 3))
        for index, p in enumerate(self.primitives):
            t, n = p.shape.intersect(origins, dirs, tMin)
            closer = t < best
            best[closer] = t[closer]
            primitive[closer] = index
            normal[closer] = n[closer]
        return SceneHits(best, primitive, normal)

    def toJson(self) -> dict:
        return {
            "name": self.name,
            "primitives": [p.toJson() for p in self.primitives],
            "lights": [light.toJson() for light in self.lights],
            "ambient": self.ambient.tolist(),
            "background": self.background.tolist(),
        }

    @staticmethod
    def fromJson(data: dict) -> "AnalyticScene":
        return AnalyticScene(
            primitives=[Primitive.fromJson(p) for p in data["primitives"]],
            lights=[DirectionalLight.fromJson(light) for light in data.get("lights", [])],
            ambient=data.get("ambient", (0.0, 0.0, 0.0)),
            background=data.get("background", (0.0, 0.0, 0.0)),
            name=data.get("name", ""),
        )
