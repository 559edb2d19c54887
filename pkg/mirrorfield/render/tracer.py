from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from mirrorfield.field.params import DegenerateNormalError, FieldParams, GradientBuffer
from mirrorfield.field.query import analyticNormalsBatch
from mirrorfield.render.camera import UNIT_TOLERANCE, Ray, RayBatch
from mirrorfield.render.compose import (
    ComposedScene,
    SceneEntry,
    asScene,
    intersectVirtualMirrorBatch,
)
from mirrorfield.render.config import RenderConfig
from mirrorfield.render.sampling import RayStreams, asStreams
from mirrorfield.render.volume import (
    PrimaryTape,
    RadiometryBatch,
    RadiometryCotangent,
    RayRadiometry,
    backpropRays,
    renderRays,
)

SPAWN_NORMAL_EPS = 1e-6


def reflectDirections(d: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Batched d - 2 (n.d) n, renormalized. Inputs are (R, 3) unit vectors"""
    r = d - 2.0 * np.sum(n * d, axis=1, keepdims=True) * n
    return r / np.linalg.norm(r, axis=1, keepdims=True)


def reflectDir(d, n) -> np.ndarray:
    """Mirror reflection of direction d at a surface with normal n

    Example:
      >>> reflectDir([0.0, 0.0, -1.0], [0.0, 0.0, 1.0]).tolist()
      [0.0, 0.0, 1.0]
    """
    d = np.asarray(d, dtype=np.float64).reshape(3)
    n = np.asarray(n, dtype=np.float64).reshape(3)
    for name, vector in (("Direction", d), ("Normal", n)):
        if not np.all(np.isfinite(vector)):
            raise ValueError(f"{name} must be finite")
        if abs(np.linalg.norm(vector) - 1.0) > UNIT_TOLERANCE:
            raise ValueError(f"{name} {vector.tolist()} is not a unit vector")
    return reflectDirections(d[None, :], n[None, :])[0]


def spawnReflected(
    ray: Ray, rad: RayRadiometry, epsilon: float, tMax: "float|None" = None
) -> Ray:
    """The reflected ray leaving the expected surface point of ray

    Args:
        ray (Ray): The incoming ray
        rad (RayRadiometry): Its rendered radiometry
        epsilon (float): Forward offset (m), the start of the sampling range
        tMax (float, optional): End of the sampling range. Defaults to ray.tMax

    Raises:
        DegenerateNormalError: when the rendered normal is shorter than 1e-6
    """
    normalNorm = float(np.linalg.norm(rad.normal))
    if normalNorm < SPAWN_NORMAL_EPS:
        raise DegenerateNormalError(
            f"Rendered normal {np.asarray(rad.normal).tolist()} is too short to reflect at"
        )
    return Ray(
        origin=ray.origin + rad.depth * ray.dir,
        dir=reflectDir(ray.dir, np.asarray(rad.normal) / normalNorm),
        bounce=ray.bounce + 1,
        tMin=float(epsilon),
        tMax=ray.tMax if tMax is None else float(tMax),
    )


@dataclass
class SpawnTape:
    """Reflection intermediates of the children of one level, in child order"""

    parentDirs: np.ndarray  # (A, 3)
    depth: np.ndarray  # (A,)
    unitNormal: np.ndarray  # (A, 3) the normal the rays were reflected at
    normalNorm: np.ndarray  # (A,) length of the rendered normal
    reflected: np.ndarray  # (A, 3) before renormalisation
    reflectedNorm: np.ndarray  # (A,)
    normalDetached: np.ndarray  # (A,) bool, normal did not come from the rendered one


@dataclass
class LevelRecord:
    """The rays of one bounce level and what became of them"""

    rays: RayBatch
    radiometry: RadiometryBatch
    active: np.ndarray  # rays that spawned a child
    childIndex: np.ndarray  # index of the child in the next level, -1 without child
    tape: Optional[PrimaryTape] = None
    spawn: Optional[SpawnTape] = None
    out: Optional[np.ndarray] = None


@dataclass
class TraceResult:
    """Traced colors of a batch of camera rays

    Args:
        color (np.ndarray): (R, 3) blended colors
        primary (RadiometryBatch): Radiometry of the camera rays
        failed (np.ndarray): (R,) rays that met a degenerate normal somewhere
        levels (list[LevelRecord]): Per-bounce records, the first one holding the\
          camera rays
    """

    color: np.ndarray
    primary: RadiometryBatch
    failed: np.ndarray
    levels: List[LevelRecord]


class WhittedTracer:
    """Traces batches of camera rays through a composed scene. A ray is volume
    rendered, and when its rendered reflection probability M exceeds the branch
    threshold a reflected ray is spawned at its expected surface point; the traced
    color is C (1 - M) + C_reflected M. All rays of one bounce are processed
    together, so the recursion runs level by level.

    Args:
        scene (ComposedScene|FieldParams): What to trace
        config (RenderConfig): Sampling, recursion and offset settings
        recordTape (bool, optional): Keep what backward needs. Only scenes made of\
          one untransformed learned field can be recorded. Defaults to False
        jointOptimization (bool, optional): Let the traced color backpropagate\
          through the reflection geometry and the blend weights into the density\
          and normals. Defaults to True
    """

    def __init__(
        self,
        scene,
        config: "RenderConfig|None" = None,
        recordTape: bool = False,
        jointOptimization: bool = True,
    ):
        self.scene: ComposedScene = asScene(scene)
        self.config = RenderConfig() if config is None else config
        self.recordTape = recordTape
        self.jointOptimization = jointOptimization
        self.field = self.scene.singleField()
        if recordTape and (self.field is None or self.scene.substitution is not None):
            raise ValueError(
                "Only a single untransformed learned field can be traced with a tape"
            )

    def _entriesAt(self, bounce: int) -> "list[SceneEntry]":
        substitution = self.scene.substitution
        if substitution is not None and bounce >= 1:
            return [SceneEntry.learned(substitution.target)]
        return self.scene.entries

    def renderLevel(
        self, rays: RayBatch, bounce: int, streams: RayStreams
    ) -> "tuple[RadiometryBatch, Optional[PrimaryTape]]":
        """Radiometry of the rays of one bounce, rendered in every entry of the
        scene; the entry with the nearest termination wins"""
        entries = self._entriesAt(bounce)
        config = self.config
        if len(entries) == 1 and entries[0].kind == "learned-field":
            entry = entries[0]
            local = entry.transform.applyRays(rays)
            rad, tape = renderRays(
                entry.field,  # type: ignore
                local,
                config.nSamples,
                streams.samplesGenerator(bounce, 0),
                config.terminalDeltaM,
                self.recordTape,
            )
            if not entry.transform.isIdentity():
                rad.normal = rad.normal @ entry.transform.rotation
            return rad, tape

        nRays = len(rays)
        candidates = []
        depths = np.full((len(entries), nRays), np.inf)
        for i, entry in enumerate(entries):
            local = entry.transform.applyRays(rays)
            if entry.kind == "learned-field":
                rad, _ = renderRays(
                    entry.field,  # type: ignore
                    local,
                    config.nSamples,
                    streams.samplesGenerator(bounce, i),
                    config.terminalDeltaM,
                )
                depths[i] = np.where(
                    rad.opacity > config.occlusionThreshold, rad.depth, np.inf
                )
            else:
                hit, t, facing = intersectVirtualMirrorBatch(local, entry.mirror)  # type: ignore
                rad = RadiometryBatch(
                    color=np.zeros((nRays, 3)),
                    depth=np.where(hit, t, local.tMax),
                    normal=np.where(hit[:, None], facing, 0.0),
                    reflprob=hit.astype(np.float64),
                    opacity=hit.astype(np.float64),
                    failed=np.zeros(nRays, dtype=bool),
                )
                depths[i] = t
            if not entry.transform.isIdentity():
                rad.normal = rad.normal @ entry.transform.rotation
            candidates.append(rad)

        learned = [i for i, e in enumerate(entries) if e.kind == "learned-field"]
        fallback = learned[0] if len(learned) > 0 else None
        winner = np.argmin(depths, axis=0)
        noWinner = ~np.isfinite(np.min(depths, axis=0))
        result = RadiometryBatch.empty(rays)
        for i, rad in enumerate(candidates):
            chosen = (winner == i) & ~noWinner
            if fallback == i:
                chosen |= noWinner
            if not np.any(chosen):
                continue
            result.color[chosen] = rad.color[chosen]
            result.depth[chosen] = rad.depth[chosen]
            result.normal[chosen] = rad.normal[chosen]
            result.reflprob[chosen] = rad.reflprob[chosen]
            result.opacity[chosen] = rad.opacity[chosen]
            result.failed[chosen] = rad.failed[chosen]
        return result, None

    def _reflectionNormals(
        self,
        rays: RayBatch,
        rad: RadiometryBatch,
        spawning: np.ndarray,
        bounce: int,
        streams: RayStreams,
        kappa: float,
        noiseDraw: int,
    ) -> "tuple[np.ndarray, np.ndarray, np.ndarray]":
        """Unit normals to reflect the spawning rays at, the norms of the rendered
        normals and which normals carry no gradient"""
        rendered = rad.normal[spawning]
        norms = np.linalg.norm(rendered, axis=1)
        unit = rendered / np.maximum(norms, SPAWN_NORMAL_EPS)[:, None]
        detached = np.zeros(unit.shape[0], dtype=bool)
        field = self.field if self.scene.substitution is None or bounce == 0 else None
        if self.config.normalSource == "analytic" and field is not None:
            points = rad.surfacePoints(rays)[spawning]
            analytic = analyticNormalsBatch(field, points)
            unit = np.where(analytic.valid[:, None], analytic.normal, unit)
            detached |= analytic.valid
        if kappa > 0:
            noise = streams.noiseGenerator(bounce, noiseDraw).normal(
                0.0, kappa, size=unit.shape
            )
            perturbed = unit + noise
            perturbedNorm = np.linalg.norm(perturbed, axis=1, keepdims=True)
            unit = np.where(
                perturbedNorm > 1e-12, perturbed / np.maximum(perturbedNorm, 1e-12), unit
            )
            detached[:] = True
        return unit, norms, detached

    def trace(
        self,
        rays: RayBatch,
        streams: RayStreams,
        kappa: float = 0.0,
        noiseDraw: int = 0,
    ) -> TraceResult:
        """Trace a batch of camera rays

        Args:
            rays (RayBatch): Camera rays
            streams (RayStreams): Random streams of this batch
            kappa (float, optional): Standard deviation of the normal perturbation.
                Defaults to 0
            noiseDraw (int, optional): Index of the perturbation draw. Defaults to 0

        Returns:
            TraceResult
        """
        config = self.config
        epsilon = config.forwardOffset()
        levels: "list[LevelRecord]" = []
        current = rays
        bounce = 0
        while True:
            rad, tape = self.renderLevel(current, bounce, streams)
            failed = rad.failed
            spawning = (
                (current.bounce < config.maxDepth)
                & (rad.reflprob > config.branchThreshold)
                & (rad.opacity > config.spawnOpacityThreshold)
                & ~failed
            )
            degenerate = spawning & (np.linalg.norm(rad.normal, axis=1) < SPAWN_NORMAL_EPS)
            if np.any(degenerate):
                failed |= degenerate
                spawning &= ~degenerate
            childIndex = np.full(len(current), -1, dtype=np.int64)
            childIndex[spawning] = np.arange(int(np.sum(spawning)))
            level = LevelRecord(current, rad, spawning, childIndex, tape=tape)
            levels.append(level)
            if not np.any(spawning):
                break
            unit, norms, detached = self._reflectionNormals(
                current, rad, spawning, bounce, streams, kappa, noiseDraw
            )
            parentDirs = current.dirs[spawning]
            reflected = parentDirs - 2.0 * np.sum(unit * parentDirs, axis=1, keepdims=True) * unit
            reflectedNorm = np.linalg.norm(reflected, axis=1)
            level.spawn = SpawnTape(
                parentDirs=parentDirs,
                depth=rad.depth[spawning],
                unitNormal=unit,
                normalNorm=norms,
                reflected=reflected,
                reflectedNorm=reflectedNorm,
                normalDetached=detached,
            )
            nChildren = parentDirs.shape[0]
            children = RayBatch(
                origins=rad.surfacePoints(current)[spawning],
                dirs=reflected / reflectedNorm[:, None],
                bounce=current.bounce[spawning] + 1,
                tMin=np.full(nChildren, epsilon),
                tMax=np.full(nChildren, config.tFarM),
            )
            if self.scene.substitution is not None and bounce == 0:
                children = self.scene.substitution.portal.applyRays(children)
            current = children
            bounce += 1

        levels[-1].out = levels[-1].radiometry.color.copy()
        for b in range(len(levels) - 2, -1, -1):
            level, below = levels[b], levels[b + 1]
            rad = level.radiometry
            out = rad.color.copy()
            active = level.active
            m = rad.reflprob[active][:, None]
            childOut = below.out[level.childIndex[active]]  # type: ignore
            out[active] = rad.color[active] * (1.0 - m) + childOut * m
            level.out = out
            level.radiometry.failed[active] |= below.radiometry.failed[
                level.childIndex[active]
            ]
        top = levels[0]
        return TraceResult(
            color=top.out,  # type: ignore
            primary=top.radiometry,
            failed=top.radiometry.failed.copy(),
            levels=levels,
        )

    def traceRough(
        self, rays: RayBatch, streams: RayStreams, samples: int, kappa: float
    ) -> TraceResult:
        """Average of `samples` traces whose reflection normals are perturbed by
        independent Gaussian noise of standard deviation kappa. With kappa = 0 this
        is exactly trace"""
        if samples < 1:
            raise ValueError(f"Rough mirrors need at least 1 sample, got {samples}")
        if kappa < 0:
            raise ValueError(f"kappa must be nonnegative, got {kappa}")
        if kappa == 0:
            return self.trace(rays, streams)
        results = [self.trace(rays, streams, kappa, draw) for draw in range(samples)]
        color = np.mean(np.stack([r.color for r in results]), axis=0)
        failed = np.any(np.stack([r.failed for r in results]), axis=0)
        return TraceResult(color, results[0].primary, failed, results[0].levels)

    def backward(
        self,
        grad: GradientBuffer,
        result: TraceResult,
        colorCotangent: np.ndarray,
        primaryCotangent: "RadiometryCotangent|None" = None,
    ):
        """Backpropagate the cotangent of the traced colors (and optional
        cotangents of the camera-ray radiometry) into grad, through the blends,
        the reflected rays and the reflection geometry

        Args:
            grad (GradientBuffer): Accumulators shaped like the traced field
            result (TraceResult): Result of trace on a recording tracer
            colorCotangent (np.ndarray): (R, 3) dL/d(traced color)
            primaryCotangent (RadiometryCotangent, optional): Extra cotangents of the
                camera rays' radiometry and samples
        """
        if not self.recordTape or self.field is None:
            raise ValueError("backward needs a tracer created with recordTape=True")
        params: FieldParams = self.field
        levels = result.levels
        nLevels = len(levels)
        joint = self.jointOptimization

        colorCots = [np.zeros((len(level.rays), 3)) for level in levels]
        colorCots[0] = np.asarray(colorCotangent, dtype=np.float64).copy()
        blendCots = [np.zeros(len(level.rays)) for level in levels]
        renderCots = []
        for b, level in enumerate(levels):
            rad = level.radiometry
            gOut = colorCots[b]
            dColor = gOut.copy()
            if b + 1 < nLevels:
                active = level.active
                m = rad.reflprob[active]
                child = level.childIndex[active]
                childOut = levels[b + 1].out[child]  # type: ignore
                dColor[active] *= (1.0 - m)[:, None]
                blendCots[b][active] = np.sum(gOut[active] * (childOut - rad.color[active]), axis=1)
                colorCots[b + 1][child] = gOut[active] * m[:, None]
            renderCots.append(dColor)

        depthCots = [np.zeros(len(level.rays)) for level in levels]
        normalCots = [np.zeros((len(level.rays), 3)) for level in levels]
        originCots = [np.zeros((len(level.rays), 3)) for level in levels]
        dirCots = [np.zeros((len(level.rays), 3)) for level in levels]
        for b in range(nLevels - 1, -1, -1):
            level = levels[b]
            cot = RadiometryCotangent(
                color=renderCots[b],
                depth=depthCots[b],
                normal=normalCots[b],
            )
            reflprobCot = blendCots[b]
            if b == 0 and primaryCotangent is not None:
                if primaryCotangent.color is not None:
                    cot.color = cot.color + primaryCotangent.color
                if primaryCotangent.depth is not None:
                    cot.depth = cot.depth + primaryCotangent.depth
                if primaryCotangent.normal is not None:
                    cot.normal = cot.normal + primaryCotangent.normal
                cot.sampleNormal = primaryCotangent.sampleNormal
                cot.sampleWeight = primaryCotangent.sampleWeight
            extraReflprob = (
                primaryCotangent.reflprob
                if b == 0 and primaryCotangent is not None
                else None
            )
            needRays = b >= 1 and joint
            if joint:
                cot.reflprob = reflprobCot if extraReflprob is None else reflprobCot + extraReflprob
                rayCots = backpropRays(params, grad, level.tape, cot, rayCotangents=needRays)  # type: ignore
            else:
                cot.reflprob = extraReflprob
                rayCots = backpropRays(params, grad, level.tape, cot)  # type: ignore
                if np.any(reflprobCot):
                    backpropRays(
                        params,
                        grad,
                        level.tape,  # type: ignore
                        RadiometryCotangent(reflprob=reflprobCot),
                        detachReflprobWeights=True,
                    )
            if not needRays or rayCots is None:
                continue
            dOrigins = rayCots[0] + originCots[b]
            dDirs = rayCots[1] + dirCots[b]
            self._spawnBackward(levels[b - 1], b - 1, dOrigins, dDirs, depthCots, normalCots, originCots, dirCots)

    @staticmethod
    def _spawnBackward(parent, parentLevel, dOrigins, dDirs, depthCots, normalCots, originCots, dirCots):
        """Backward pass of origin = o + D d and dir = normalize(reflect(d, N / |N|))"""
        spawn: SpawnTape = parent.spawn
        active = parent.active
        d = spawn.parentDirs
        u = spawn.unitNormal
        ref = spawn.reflected / spawn.reflectedNorm[:, None]

        depthCots[parentLevel][active] += np.sum(dOrigins * d, axis=1)
        originCots[parentLevel][active] += dOrigins
        dParentDirs = spawn.depth[:, None] * dOrigins

        gRef = (dDirs - ref * np.sum(ref * dDirs, axis=1, keepdims=True)) / spawn.reflectedNorm[:, None]
        uDotG = np.sum(u * gRef, axis=1, keepdims=True)
        uDotD = np.sum(u * d, axis=1, keepdims=True)
        dParentDirs += gRef - 2.0 * u * uDotG
        dirCots[parentLevel][active] += dParentDirs

        gUnit = -2.0 * (uDotG * d + uDotD * gRef)
        dNormal = (gUnit - u * np.sum(u * gUnit, axis=1, keepdims=True)) / spawn.normalNorm[:, None]
        dNormal[spawn.normalDetached] = 0.0
        normalCots[parentLevel][active] += dNormal


def _tracerFor(scene, config, maxDepth, nSamples) -> WhittedTracer:
    config = RenderConfig() if config is None else config
    return WhittedTracer(scene, replace(config, maxDepth=int(maxDepth), nSamples=int(nSamples)))


def _singleColor(result: TraceResult) -> np.ndarray:
    if result.failed[0]:
        raise DegenerateNormalError("Degenerate normal met while tracing the ray")
    return result.color[0]


def trace(scene, ray: Ray, maxDepth: int, nSamples: int, rng, config=None) -> np.ndarray:
    """Traced color of one ray: C (1 - M) + trace(reflected) M while M exceeds the
    branch threshold and the bounce is below maxDepth, C otherwise

    Args:
        scene (FieldParams|ComposedScene): What to trace
        ray (Ray): The ray
        maxDepth (int): Maximum recursion depth, nonnegative
        nSamples (int): Samples per ray
        rng (int|np.random.Generator|RayStreams): Source of the random streams
        config (RenderConfig, optional): Remaining settings

    Returns:
        np.ndarray: The color
    """
    if maxDepth < 0:
        raise ValueError(f"maxDepth must be nonnegative, got {maxDepth}")
    tracer = _tracerFor(scene, config, maxDepth, nSamples)
    return _singleColor(tracer.trace(RayBatch.fromRays([ray]), asStreams(rng)))


def traceRough(
    scene, ray: Ray, maxDepth: int, samples: int, kappa: float, rng, nSamples=None, config=None
) -> np.ndarray:
    """Traced color of one ray over rough mirrors: the average of `samples` traces
    with Gaussian perturbed reflection normals"""
    config = RenderConfig() if config is None else config
    nSamples = config.nSamples if nSamples is None else nSamples
    tracer = _tracerFor(scene, config, maxDepth, nSamples)
    result = tracer.traceRough(RayBatch.fromRays([ray]), asStreams(rng), samples, kappa)
    return _singleColor(result)


def traceComposed(
    scene: ComposedScene, ray: Ray, maxDepth: int, nSamples: int, rng, config=None
) -> np.ndarray:
    """Traced color of one ray in a composed scene. At every bounce the ray is
    rendered in all learned fields and intersected with all virtual mirrors; the
    nearest termination (among fields opaque enough to occlude) wins"""
    if not isinstance(scene, ComposedScene):
        raise TypeError("traceComposed needs a ComposedScene")
    return trace(scene, ray, maxDepth, nSamples, rng, config)


def traceSubstituted(
    scene: ComposedScene, ray: Ray, maxDepth: int, nSamples: int, rng, config=None
) -> np.ndarray:
    """Traced color of one ray where every reflected ray is carried through the
    portal of the scene's substitution and rendered in its target field"""
    if not isinstance(scene, ComposedScene) or scene.substitution is None:
        raise ValueError("traceSubstituted needs a ComposedScene with a substitution")
    return trace(scene, ray, maxDepth, nSamples, rng, config)
