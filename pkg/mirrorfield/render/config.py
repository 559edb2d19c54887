from dataclasses import dataclass
from typing import Optional

from mirrorfield.configbase import JsonConfig

NORMAL_SOURCES = ("smoothed", "analytic")


@dataclass
class RenderConfig(JsonConfig):
    """Settings of the volume renderer and of the reflection tracer

    Args:
        nSamples (int): Stratified samples per ray, for camera and reflected rays
        tNearM (float): Start of the sampling range of camera rays (m)
        tFarM (float): End of the sampling range of every ray (m)
        epsilonM (float, optional): Forward offset of reflected rays (m). None uses\
          twice the mean sample spacing of camera rays
        branchThreshold (float): Reflected rays are only spawned when the rendered\
          reflection probability exceeds this value
        maxDepth (int): Maximum number of reflections per camera ray
        terminalDeltaM (float, optional): Spacing of the last sample of a ray (m).\
          None uses the mean spacing of that ray
        occlusionThreshold (float): Minimum opacity for a learned field to take part\
          in the depth contest of a composed scene
        spawnOpacityThreshold (float): Minimum opacity for a reflected ray to spawn
        tileSize (int): Rays per work item when rendering frames
        roughSamples (int): Traces averaged per pixel by rough mirrors
        roughKappa (float): Standard deviation of the normal perturbation of rough\
          mirrors. 0 renders perfect mirrors
        normalSource (str): Normal used to reflect rays: "smoothed" (the learned\
          normal field) or "analytic" (the negative density gradient)
        seed (int): Base seed of the per-tile random streams
    """

    nSamples: int = 64
    tNearM: float = 0.05
    tFarM: float = 6.0
    epsilonM: Optional[float] = None
    branchThreshold: float = 0.05
    maxDepth: int = 2
    terminalDeltaM: Optional[float] = None
    occlusionThreshold: float = 0.5
    spawnOpacityThreshold: float = 1e-6
    tileSize: int = 256
    roughSamples: int = 1
    roughKappa: float = 0.0
    normalSource: str = "smoothed"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.nSamples < 2:
            raise ValueError(f"nSamples must be at least 2, got {self.nSamples}")
        if not 0 <= self.tNearM < self.tFarM:
            raise ValueError(
                f"Expected 0 <= tNearM < tFarM, got {self.tNearM} and {self.tFarM}"
            )
        if self.epsilonM is not None and not 0 <= self.epsilonM < self.tFarM:
            raise ValueError(f"epsilonM must lie in [0, tFarM), got {self.epsilonM}")
        if self.maxDepth < 0:
            raise ValueError(f"maxDepth must be nonnegative, got {self.maxDepth}")
        if self.terminalDeltaM is not None and self.terminalDeltaM <= 0:
            raise ValueError("terminalDeltaM must be positive")
        if self.tileSize < 1:
            raise ValueError(f"tileSize must be at least 1, got {self.tileSize}")
        if self.roughSamples < 1:
            raise ValueError(f"roughSamples must be at least 1, got {self.roughSamples}")
        if self.roughKappa < 0:
            raise ValueError(f"roughKappa must be nonnegative, got {self.roughKappa}")
        if self.normalSource not in NORMAL_SOURCES:
            raise ValueError(
                f"normalSource must be one of {', '.join(NORMAL_SOURCES)}, "
                f"got '{self.normalSource}'"
            )

    def meanSpacing(self) -> float:
        """Mean distance (m) between the samples of a camera ray"""
        return (self.tFarM - self.tNearM) / self.nSamples

    def forwardOffset(self) -> float:
        """Distance (m) skipped at the start of a reflected ray

        >>> RenderConfig(nSamples=10, tNearM=0.0, tFarM=5.0).forwardOffset()
        1.0
        """
        if self.epsilonM is not None:
            return float(self.epsilonM)
        return 2.0 * self.meanSpacing()
