from dataclasses import dataclass
from typing import Optional

import numpy as np

from mirrorfield.render.camera import Ray

SAMPLES_KEY = 0
NOISE_KEY = 1


@dataclass
class SampleSet:
    """Sample depths along one ray

    Args:
        t (np.ndarray): (N,) strictly increasing depths (m)
        delta (np.ndarray): (N,) spacings, delta[i] = t[i+1] - t[i] and a terminal\
          spacing for the last sample
    """

    t: np.ndarray
    delta: np.ndarray


class RayStreams:
    """Independent random generators for one work item (a tile of pixels or a
    chunk of a training batch). Every generator is keyed by the base seed, the
    stream id, the bounce and a purpose, so its draws never depend on how work is
    scheduled

    Args:
        seed (int): Base seed, e.g. the frame or step seed
        streamId (int, optional): Tile or chunk index. Defaults to 0
    """

    def __init__(self, seed: int, streamId: int = 0):
        if seed < 0 or streamId < 0:
            raise ValueError("Seeds and stream ids must be nonnegative")
        self.seed = int(seed)
        self.streamId = int(streamId)

    def generator(self, bounce: int, *key: int) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([self.seed, self.streamId, int(bounce), *key])
        )

    def samplesGenerator(self, bounce: int, entry: int = 0) -> np.random.Generator:
        """Generator of the stratified samples of the rays of a bounce, rendered in
        the given scene entry"""
        return self.generator(bounce, SAMPLES_KEY, entry)

    def noiseGenerator(self, bounce: int, draw: int) -> np.random.Generator:
        """Generator of the normal perturbations of rough mirrors"""
        return self.generator(bounce, NOISE_KEY, draw)

    def __repr__(self):
        return f"RayStreams(seed={self.seed}, streamId={self.streamId})"


def asStreams(rng, streamId: int = 0) -> RayStreams:
    """Turn a seed, a numpy generator or RayStreams into RayStreams. A generator
    contributes a single draw as seed"""
    if isinstance(rng, RayStreams):
        return rng
    if isinstance(rng, (int, np.integer)):
        return RayStreams(int(rng), streamId)
    if isinstance(rng, np.random.Generator):
        return RayStreams(int(rng.integers(0, 2**63 - 1)), streamId)
    raise TypeError(f"Expected a seed, a numpy Generator or RayStreams, got {rng!r}")


def stratifiedDepths(
    tMin: np.ndarray,
    tMax: np.ndarray,
    nSamples: int,
    rng,
    terminalDelta: Optional[float] = None,
) -> "tuple[np.ndarray, np.ndarray]":
    """Stratified sample depths for a batch of rays: one uniform draw in each of N
    equal sub-intervals of [tMin, tMax]

    Args:
        tMin (np.ndarray): (R,) start of every range (m)
        tMax (np.ndarray): (R,) end of every range (m)
        nSamples (int): Samples per ray, at least 2
        rng: Anything with a numpy-Generator-like random(size) method
        terminalDelta (float, optional): Spacing of the last sample. Defaults to\
          the mean spacing of each ray

    Returns:
        tuple[np.ndarray, np.ndarray]: Depths and spacings, both (R, N)
    """
    if nSamples < 2:
        raise ValueError(f"At least 2 samples per ray are needed, got {nSamples}")
    nRays = tMin.shape[0]
    stratum = (tMax - tMin) / nSamples
    u = np.asarray(rng.random(size=(nRays, nSamples)), dtype=np.float64)
    u = np.broadcast_to(u, (nRays, nSamples))
    t = tMin[:, None] + (np.arange(nSamples)[None, :] + u) * stratum[:, None]
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = stratum if terminalDelta is None else terminalDelta
    return t, delta


def stratifiedSamples(ray: Ray, nSamples: int, rng, terminalDelta=None) -> SampleSet:
    """Stratified sample depths along a single ray

    Example:
      >>> import numpy as np
      >>> class Half:
      ...     def random(self, size):
      ...         return np.full(size, 0.5)
      >>> ray = Ray(np.zeros(3), np.array([0.0, 0.0, 1.0]), tMin=0.0, tMax=1.0)
      >>> stratifiedSamples(ray, 2, Half()).t.tolist()
      [0.25, 0.75]
    """
    t, delta = stratifiedDepths(
        np.array([ray.tMin]), np.array([ray.tMax]), nSamples, rng, terminalDelta
    )
    return SampleSet(t=t[0], delta=delta[0])
