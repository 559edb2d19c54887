from dataclasses import dataclass
from typing import Optional, Tuple, Union
import math

import numpy as np

from mirrorfield.configbase import JsonConfig

LATTICE_NAMES = ("densityGrid", "radianceGrid", "normalGrid", "reflprobGrid")
MAX_SH_DEGREE = 2

Resolution = Union[int, Tuple[int, int, int]]


class DegenerateNormalError(ValueError):
    "Raised when a normal vector with (near) zero length has to be normalized"


class DegenerateGradientError(ValueError):
    "Raised when the density gradient vanishes where an analytical normal is needed"


def shCoefficientCount(shDegree: int) -> int:
    """Number of real spherical-harmonic basis functions up to a degree

    >>> shCoefficientCount(2)
    9
    """
    return (shDegree + 1) ** 2


def expandResolution(resolution: Resolution) -> "tuple[int, int, int]":
    """Turn a scalar or per-axis resolution into a per-axis tuple

    >>> expandResolution(4)
    (4, 4, 4)
    """
    if isinstance(resolution, (int, np.integer)):
        res = (int(resolution),) * 3
    else:
        res = tuple(int(r) for r in resolution)
    if len(res) != 3:
        raise ValueError(f"A resolution needs 3 axes, got {resolution}")
    if min(res) < 2:
        raise ValueError(f"Every resolution must be at least 2 per axis, got {res}")
    return res  # type: ignore


@dataclass
class FieldConfig(JsonConfig):
    """Layout and initialisation of the four scene lattices

    Args:
        bboxMin (tuple[float, float, float], optional): Minimum world corner of the\
          volume (m). None lets the trainer fit the box to the dataset scene
        bboxMax (tuple[float, float, float], optional): Maximum world corner (m)
        densityResolution, radianceResolution, normalResolution,\
          reflprobResolution (int|tuple[int, int, int]): Lattice points per axis
        shDegree (int): Degree of the view-dependent spherical harmonics (0..2)
        densityInit (float): Initial raw (pre-softplus) density
        reflprobInit (float): Initial reflection-probability logit
        radianceInit (float): Initial value of every SH coefficient
        normalInitScale (float): Standard deviation of the random raw normals
    """

    bboxMin: Optional[Tuple[float, float, float]] = None
    bboxMax: Optional[Tuple[float, float, float]] = None
    densityResolution: Resolution = 32
    radianceResolution: Resolution = 32
    normalResolution: Resolution = 32
    reflprobResolution: Resolution = 32
    shDegree: int = 2
    densityInit: float = -2.0
    reflprobInit: float = -3.0
    radianceInit: float = 0.0
    normalInitScale: float = 1.0

    def withResolution(self, resolution: Resolution) -> "FieldConfig":
        """Copy of this configuration with every lattice at the same resolution"""
        data = self.toJson()
        for key in (
            "densityResolution",
            "radianceResolution",
            "normalResolution",
            "reflprobResolution",
        ):
            data[key] = resolution
        return FieldConfig.fromJson(data)


@dataclass
class FieldParams:
    """The learnable scene: four lattices spanning an axis-aligned box.

    Lattice point (i, j, k) of a lattice with resolution (Rx, Ry, Rz) sits at
    bboxMin + (i, j, k) * (bboxMax - bboxMin) / (R - 1). Values are stored raw
    (pre-activation) in float64:
      - densityGrid: (Rx, Ry, Rz), softplus gives the density (1/m)
      - radianceGrid: (Rx, Ry, Rz, 3, K), K = (shDegree + 1)**2 coefficients per
        color channel, sigmoid of the SH expansion gives the color
      - normalGrid: (Rx, Ry, Rz, 3), normalised after interpolation
      - reflprobGrid: (Rx, Ry, Rz), sigmoid gives the reflection probability
    """

    bboxMin: np.ndarray
    bboxMax: np.ndarray
    densityGrid: np.ndarray
    radianceGrid: np.ndarray
    normalGrid: np.ndarray
    reflprobGrid: np.ndarray
    shDegree: int

    def __post_init__(self):
        self.bboxMin = np.asarray(self.bboxMin, dtype=np.float64).reshape(3)
        self.bboxMax = np.asarray(self.bboxMax, dtype=np.float64).reshape(3)
        for name in LATTICE_NAMES:
            setattr(
                self,
                name,
                np.ascontiguousarray(getattr(self, name), dtype=np.float64),
            )
        self.shDegree = int(self.shDegree)
        self.validate()

    @staticmethod
    def create(
        config: FieldConfig,
        rng: "np.random.Generator|None" = None,
        bbox: "tuple[np.ndarray, np.ndarray]|None" = None,
    ):
        """Create freshly initialised parameters

        Args:
            config (FieldConfig): Layout and initial values
            rng (np.random.Generator, optional): Source of the random raw normals.
                Defaults to a generator seeded with 0
            bbox (tuple[np.ndarray, np.ndarray], optional): Box used when the
                configuration leaves it open. Defaults to [-1, 1]^3

        Returns:
            FieldParams
        """
        rng = np.random.default_rng(0) if rng is None else rng
        if config.bboxMin is not None and config.bboxMax is not None:
            bbox = (np.array(config.bboxMin), np.array(config.bboxMax))
        elif bbox is None:
            bbox = (-np.ones(3), np.ones(3))
        if not 0 <= config.shDegree <= MAX_SH_DEGREE:
            raise ValueError(
                f"shDegree must lie in [0, {MAX_SH_DEGREE}], got {config.shDegree}"
            )
        nCoefficients = shCoefficientCount(config.shDegree)
        densityRes = expandResolution(config.densityResolution)
        radianceRes = expandResolution(config.radianceResolution)
        normalRes = expandResolution(config.normalResolution)
        reflprobRes = expandResolution(config.reflprobResolution)
        normalGrid = rng.normal(0.0, config.normalInitScale, size=normalRes + (3,))
        return FieldParams(
            bboxMin=np.array(bbox[0], dtype=np.float64),
            bboxMax=np.array(bbox[1], dtype=np.float64),
            densityGrid=np.full(densityRes, config.densityInit),
            radianceGrid=np.full(radianceRes + (3, nCoefficients), config.radianceInit),
            normalGrid=normalGrid,
            reflprobGrid=np.full(reflprobRes, config.reflprobInit),
            shDegree=config.shDegree,
        )

    def validate(self):
        """Check the invariants of the parameters

        Returns:
            None: An exception is raised when an invariant is violated
        """
        if not (np.all(np.isfinite(self.bboxMin)) and np.all(np.isfinite(self.bboxMax))):
            raise ValueError("Bounding box corners must be finite")
        if not np.all(self.bboxMin < self.bboxMax):
            raise ValueError(
                f"bbox min {self.bboxMin.tolist()} must be smaller than "
                f"bbox max {self.bboxMax.tolist()} componentwise"
            )
        if not 0 <= self.shDegree <= MAX_SH_DEGREE:
            raise ValueError(f"shDegree must lie in [0, {MAX_SH_DEGREE}]")
        expected = {
            "densityGrid": 3,
            "radianceGrid": 5,
            "normalGrid": 4,
            "reflprobGrid": 3,
        }
        for name, ndim in expected.items():
            lattice = getattr(self, name)
            if lattice.ndim != ndim:
                raise ValueError(f"{name} must have {ndim} dimensions, got {lattice.ndim}")
            expandResolution(lattice.shape[:3])
            if not np.all(np.isfinite(lattice)):
                raise ValueError(f"{name} contains non-finite values")
        if self.radianceGrid.shape[3:] != (3, shCoefficientCount(self.shDegree)):
            raise ValueError(
                f"radianceGrid must end in (3, {shCoefficientCount(self.shDegree)}), "
                f"got {self.radianceGrid.shape[3:]}"
            )
        if self.normalGrid.shape[3] != 3:
            raise ValueError("normalGrid must store 3-vectors")

    def lattices(self) -> "dict[str, np.ndarray]":
        return {name: getattr(self, name) for name in LATTICE_NAMES}

    def cellSize(self, name: str) -> np.ndarray:
        """World size (m) of one cell of the named lattice, per axis"""
        shape = np.array(getattr(self, name).shape[:3], dtype=np.float64)
        return (self.bboxMax - self.bboxMin) / (shape - 1)

    def resolutions(self) -> "dict[str, tuple[int, int, int]]":
        return {name: tuple(getattr(self, name).shape[:3]) for name in LATTICE_NAMES}

    def copy(self) -> "FieldParams":
        return FieldParams(
            bboxMin=self.bboxMin.copy(),
            bboxMax=self.bboxMax.copy(),
            densityGrid=self.densityGrid.copy(),
            radianceGrid=self.radianceGrid.copy(),
            normalGrid=self.normalGrid.copy(),
            reflprobGrid=self.reflprobGrid.copy(),
            shDegree=self.shDegree,
        )

    def sceneDiagonal(self) -> float:
        return float(np.linalg.norm(self.bboxMax - self.bboxMin))


@dataclass
class PointSample:
    """Activated field values at a batch of points. Every field has the batch as
    leading dimension: sigma (P,), rgb (P, 3), normal (P, 3), m (P,)

    Normals of points where the interpolated raw vector is degenerate are stored
    as zero vectors and flagged in normalValid.
    """

    sigma: np.ndarray
    rgb: np.ndarray
    normal: np.ndarray
    m: np.ndarray
    normalValid: np.ndarray


@dataclass
class GradientBuffer:
    """Accumulators for the gradient of a loss with respect to every lattice of a
    FieldParams. Contributions are added, never overwritten."""

    densityGrid: np.ndarray
    radianceGrid: np.ndarray
    normalGrid: np.ndarray
    reflprobGrid: np.ndarray

    @staticmethod
    def zerosLike(params: FieldParams) -> "GradientBuffer":
        return GradientBuffer(
            **{name: np.zeros_like(getattr(params, name)) for name in LATTICE_NAMES}
        )

    def checkShapes(self, params: FieldParams):
        for name in LATTICE_NAMES:
            if getattr(self, name).shape != getattr(params, name).shape:
                raise ValueError(
                    f"Gradient buffer {name} has shape {getattr(self, name).shape}, "
                    f"parameters have {getattr(params, name).shape}"
                )

    def reset(self):
        for name in LATTICE_NAMES:
            getattr(self, name).fill(0.0)

    def add(self, other: "GradientBuffer"):
        """Add the content of another buffer to this one"""
        for name in LATTICE_NAMES:
            getattr(self, name).__iadd__(getattr(other, name))

    def lattices(self) -> "dict[str, np.ndarray]":
        return {name: getattr(self, name) for name in LATTICE_NAMES}

    def isZero(self) -> bool:
        return all(not np.any(getattr(self, name)) for name in LATTICE_NAMES)

    def isFinite(self) -> bool:
        return all(np.all(np.isfinite(getattr(self, name))) for name in LATTICE_NAMES)

    def norm(self) -> float:
        return math.sqrt(
            sum(float(np.sum(getattr(self, name) ** 2)) for name in LATTICE_NAMES)
        )

    def copy(self) -> "GradientBuffer":
        return GradientBuffer(
            **{name: getattr(self, name).copy() for name in LATTICE_NAMES}
        )


def mergeGradientBuffers(
    params: FieldParams, buffers: "list[GradientBuffer]"
) -> GradientBuffer:
    """Sum per-worker buffers in list order into a fresh buffer"""
    merged = GradientBuffer.zerosLike(params)
    for buffer in buffers:
        merged.add(buffer)
    return merged
