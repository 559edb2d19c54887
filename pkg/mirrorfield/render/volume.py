from dataclasses import dataclass
from typing import Optional

import numpy as np

from mirrorfield.field.params import DegenerateNormalError, FieldParams, GradientBuffer
from mirrorfield.field.query import (
    QueryRecord,
    accumulateGradients,
    directionCotangent,
    evaluatePoints,
    pointCotangent,
)
from mirrorfield.render.camera import Ray, RayBatch
from mirrorfield.render.config import RenderConfig
from mirrorfield.render.sampling import stratifiedDepths

# Samples with a degenerate normal only fail their ray above this weight
DEGENERATE_WEIGHT = 1e-4
# Below this opacity a ray has no defined termination depth
DEPTH_OPACITY_EPS = 1e-10


def compositeWeights(sigma: np.ndarray, delta: np.ndarray):
    """Volume rendering weights along the last axis

    Args:
        sigma (np.ndarray): (..., N) densities, nonnegative
        delta (np.ndarray): (..., N) spacings, positive

    Returns:
        tuple[np.ndarray, np.ndarray]: The weights w (..., N) and the
            transmittance (..., N + 1), whose entry i is exp(-sum_{j<i} sigma_j delta_j)
    """
    tau = sigma * delta
    cumulative = np.concatenate(
        [np.zeros(tau.shape[:-1] + (1,)), np.cumsum(tau, axis=-1)], axis=-1
    )
    transmittance = np.exp(-cumulative)
    alpha = -np.expm1(-tau)
    return transmittance[..., :-1] * alpha, transmittance


def compositeBackward(
    weights: np.ndarray,
    transmittance: np.ndarray,
    delta: np.ndarray,
    weightCotangent: np.ndarray,
) -> np.ndarray:
    """Pull the cotangent of the weights back to the densities

    With tau = sigma * delta, d w_i / d tau_k is T_{k+1} for i = k and -w_i for
    i > k, so dL/dtau_k = g_k T_{k+1} - sum_{i>k} g_i w_i.

    Returns:
        np.ndarray: dL/dsigma, shaped like the weights
    """
    gw = weightCotangent * weights
    later = np.cumsum(gw[..., ::-1], axis=-1)[..., ::-1] - gw
    dTau = weightCotangent * transmittance[..., 1:] - later
    return dTau * delta


def composite(sigma, values, delta):
    """Alpha-composite per-sample values along a ray

    Args:
        sigma (array-like): (N,) densities, nonnegative
        values (array-like): (N,) or (N, C) values
        delta (array-like): (N,) spacings, positive

    Returns:
        tuple: The accumulated value, the weights w_i and the opacity sum(w_i)

    Example:
      >>> import numpy as np
      >>> value, weights, opacity = composite([np.log(2)] * 2, [1.0, 1.0], [1.0, 1.0])
      >>> weights.round(12).tolist(), round(float(opacity), 12)
      ([0.5, 0.25], 0.75)
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if sigma.ndim != 1 or sigma.shape != delta.shape or values.shape[0] != sigma.shape[0]:
        raise ValueError(
            f"composite needs equal lengths, got {sigma.shape[0] if sigma.ndim else 0} "
            f"densities, {values.shape[0] if values.ndim else 0} values and "
            f"{delta.shape[0] if delta.ndim else 0} spacings"
        )
    if np.any(sigma < 0):
        raise ValueError("Densities must be nonnegative")
    if np.any(delta <= 0):
        raise ValueError("Spacings must be positive")
    weights, _ = compositeWeights(sigma, delta)
    if values.ndim == 1:
        accumulated = float(np.dot(weights, values))
    else:
        accumulated = np.einsum("n,nc->c", weights, values)
    return accumulated, weights, float(np.sum(weights))


@dataclass
class RayRadiometry:
    """Volume rendered quantities of one ray

    Args:
        color (np.ndarray): Rendered color in [0, 1]^3
        depth (float): Expected termination depth (m)
        normal (np.ndarray): Weighted smoothed normal, possibly shorter than 1
        reflprob (float): Rendered reflection probability in [0, 1]
        opacity (float): Sum of the weights in [0, 1]
    """

    color: np.ndarray
    depth: float
    normal: np.ndarray
    reflprob: float
    opacity: float

    def surfacePoint(self, ray: Ray) -> np.ndarray:
        return ray.origin + self.depth * ray.dir


@dataclass
class RadiometryBatch:
    """RayRadiometry of R rays as arrays, plus a per-ray failure flag for rays with
    a degenerate normal at a sample of non-negligible weight"""

    color: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    reflprob: np.ndarray
    opacity: np.ndarray
    failed: np.ndarray

    def __len__(self):
        return self.color.shape[0]

    def ray(self, index: int) -> RayRadiometry:
        return RayRadiometry(
            color=self.color[index].copy(),
            depth=float(self.depth[index]),
            normal=self.normal[index].copy(),
            reflprob=float(self.reflprob[index]),
            opacity=float(self.opacity[index]),
        )

    @staticmethod
    def empty(rays: RayBatch) -> "RadiometryBatch":
        nRays = len(rays)
        return RadiometryBatch(
            color=np.zeros((nRays, 3)),
            depth=rays.tMax.copy(),
            normal=np.zeros((nRays, 3)),
            reflprob=np.zeros(nRays),
            opacity=np.zeros(nRays),
            failed=np.zeros(nRays, dtype=bool),
        )

    def surfacePoints(self, rays: RayBatch) -> np.ndarray:
        return rays.origins + self.depth[:, None] * rays.dirs


@dataclass
class PrimaryTape:
    """What renderRays remembers for backpropRays"""

    rays: RayBatch
    t: np.ndarray  # (R, N)
    delta: np.ndarray  # (R, N)
    records: "dict[str, QueryRecord]"
    sigma: np.ndarray  # (R, N)
    rgb: np.ndarray  # (R, N, 3)
    normal: np.ndarray  # (R, N, 3)
    m: np.ndarray  # (R, N)
    weights: np.ndarray  # (R, N)
    transmittance: np.ndarray  # (R, N + 1)
    radiometry: RadiometryBatch


@dataclass
class RadiometryCotangent:
    """Cotangents of the outputs of a batch of rendered rays. Unset entries are
    zero. sampleNormal and sampleWeight act directly on the per-sample smoothed
    normals and compositing weights"""

    color: Optional[np.ndarray] = None
    depth: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    reflprob: Optional[np.ndarray] = None
    sampleNormal: Optional[np.ndarray] = None
    sampleWeight: Optional[np.ndarray] = None


def renderRays(
    params: FieldParams,
    rays: RayBatch,
    nSamples: int,
    rng,
    terminalDelta: Optional[float] = None,
    recordTape: bool = False,
) -> "tuple[RadiometryBatch, Optional[PrimaryTape]]":
    """Volume render a batch of rays in one field. Color, normal, reflection
    probability and depth are composited with the same weights; the depth is the
    weighted mean sample depth (tMax where the ray is fully transparent)

    Args:
        params (FieldParams): The field
        rays (RayBatch): Rays in the frame of the field
        nSamples (int): Stratified samples per ray
        rng: Generator of the sample depths
        terminalDelta (float, optional): Spacing of the last sample
        recordTape (bool, optional): Keep what backpropRays needs. Defaults to False

    Returns:
        tuple[RadiometryBatch, PrimaryTape|None]
    """
    nRays = len(rays)
    t, delta = stratifiedDepths(rays.tMin, rays.tMax, nSamples, rng, terminalDelta)
    if nRays == 0:
        return RadiometryBatch.empty(rays), None
    points = rays.origins[:, None, :] + t[:, :, None] * rays.dirs[:, None, :]
    dirs = np.repeat(rays.dirs, nSamples, axis=0)
    sample, records = evaluatePoints(params, points.reshape(-1, 3), dirs)
    sigma = sample.sigma.reshape(nRays, nSamples)
    rgb = sample.rgb.reshape(nRays, nSamples, 3)
    normal = sample.normal.reshape(nRays, nSamples, 3)
    m = sample.m.reshape(nRays, nSamples)
    weights, transmittance = compositeWeights(sigma, delta)
    opacity = np.sum(weights, axis=1)
    weightedDepth = np.sum(weights * t, axis=1)
    hasDepth = opacity > DEPTH_OPACITY_EPS
    depth = np.where(
        hasDepth, weightedDepth / np.where(hasDepth, opacity, 1.0), rays.tMax
    )
    invalid = ~sample.normalValid.reshape(nRays, nSamples)
    radiometry = RadiometryBatch(
        color=np.einsum("rn,rnc->rc", weights, rgb),
        depth=depth,
        normal=np.einsum("rn,rnc->rc", weights, normal),
        reflprob=np.sum(weights * m, axis=1),
        opacity=opacity,
        failed=np.any(invalid & (weights > DEGENERATE_WEIGHT), axis=1),
    )
    tape = None
    if recordTape:
        tape = PrimaryTape(
            rays=rays,
            t=t,
            delta=delta,
            records=records,
            sigma=sigma,
            rgb=rgb,
            normal=normal,
            m=m,
            weights=weights,
            transmittance=transmittance,
            radiometry=radiometry,
        )
    return radiometry, tape


def _zerosOr(value: Optional[np.ndarray], shape) -> np.ndarray:
    return np.zeros(shape) if value is None else np.asarray(value, dtype=np.float64)


def backpropRays(
    params: FieldParams,
    grad: GradientBuffer,
    tape: PrimaryTape,
    cotangent: RadiometryCotangent,
    rayCotangents: bool = False,
    detachReflprobWeights: bool = False,
) -> "tuple[np.ndarray, np.ndarray]|None":
    """Backpropagate cotangents of rendered quantities into grad

    Args:
        params (FieldParams): The field the tape was recorded on
        grad (GradientBuffer): Accumulators
        tape (PrimaryTape): Tape of renderRays
        cotangent (RadiometryCotangent): Cotangents of the outputs
        rayCotangents (bool, optional): Also return dL/d(origin) and dL/d(dir) of
            every ray. Defaults to False
        detachReflprobWeights (bool, optional): Do not let the reflection
            probability cotangent reach the density through the weights

    Returns:
        tuple[np.ndarray, np.ndarray]|None: Origin and direction cotangents (R, 3)
            when rayCotangents is set
    """
    nRays, nSamples = tape.sigma.shape
    rad = tape.radiometry
    dColor = _zerosOr(cotangent.color, (nRays, 3))
    dDepth = _zerosOr(cotangent.depth, (nRays,))
    dNormal = _zerosOr(cotangent.normal, (nRays, 3))
    dReflprob = _zerosOr(cotangent.reflprob, (nRays,))
    weights = tape.weights

    dWeight = np.einsum("rc,rnc->rn", dColor, tape.rgb)
    dWeight += np.einsum("rc,rnc->rn", dNormal, tape.normal)
    if not detachReflprobWeights:
        dWeight += dReflprob[:, None] * tape.m
    hasDepth = rad.opacity > DEPTH_OPACITY_EPS
    safeOpacity = np.where(hasDepth, rad.opacity, 1.0)
    depthScale = np.where(hasDepth, dDepth / safeOpacity, 0.0)
    dWeight += depthScale[:, None] * (tape.t - rad.depth[:, None])
    if cotangent.sampleWeight is not None:
        dWeight += cotangent.sampleWeight

    dSigma = compositeBackward(weights, tape.transmittance, tape.delta, dWeight)
    dRgb = weights[:, :, None] * dColor[:, None, :]
    dSampleNormal = weights[:, :, None] * dNormal[:, None, :]
    if cotangent.sampleNormal is not None:
        dSampleNormal = dSampleNormal + cotangent.sampleNormal
    dM = weights * dReflprob[:, None]

    perKind = {
        "density": dSigma.reshape(-1),
        "radiance": dRgb.reshape(-1, 3),
        "normal": dSampleNormal.reshape(-1, 3),
        "reflprob": dM.reshape(-1),
    }
    for kind, cot in perKind.items():
        accumulateGradients(params, grad, tape.records[kind], cot)
    if not rayCotangents:
        return None

    dPoints = np.zeros((nRays * nSamples, 3))
    for kind, cot in perKind.items():
        dPoints += pointCotangent(params, tape.records[kind], cot)
    dPoints = dPoints.reshape(nRays, nSamples, 3)
    dOrigins = np.sum(dPoints, axis=1)
    dDirs = np.einsum("rn,rnc->rc", tape.t, dPoints)
    dViewDirs = directionCotangent(tape.records["radiance"], perKind["radiance"])
    dDirs += np.sum(dViewDirs.reshape(nRays, nSamples, 3), axis=1)
    return dOrigins, dDirs


def renderPrimary(
    field: FieldParams,
    ray: Ray,
    nSamples: int,
    rng,
    config: "RenderConfig|None" = None,
) -> RayRadiometry:
    """Volume render a single ray

    Raises:
        DegenerateNormalError: when a sample with weight above 1e-4 has a
            degenerate normal
    """
    terminalDelta = None if config is None else config.terminalDeltaM
    radiometry, _ = renderRays(
        field, RayBatch.fromRays([ray]), nSamples, rng, terminalDelta
    )
    if radiometry.failed[0]:
        raise DegenerateNormalError(
            "Degenerate normal at a sample with non-negligible weight along "
            f"ray {ray.origin.tolist()} -> {ray.dir.tolist()}"
        )
    return radiometry.ray(0)
