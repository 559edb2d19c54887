import numpy as np
import pytest

from mirrorfield.field.params import DegenerateNormalError
from mirrorfield.pool import WorkerPool
from mirrorfield.render.camera import Camera, Ray, RayBatch, generateRayBatch, lookAt
from mirrorfield.render.compose import (
    ComposedScene,
    RigidTransform,
    SceneEntry,
    Substitution,
    VirtualMirror,
    intersectVirtualMirror,
)
from mirrorfield.render.config import RenderConfig
from mirrorfield.render.image import renderImage
from mirrorfield.render.sampling import RayStreams, stratifiedDepths
from mirrorfield.render.tracer import (
    WhittedTracer,
    reflectDir,
    spawnReflected,
    trace,
    traceComposed,
    traceRough,
    traceSubstituted,
)
from mirrorfield.render.volume import (
    RayRadiometry,
    composite,
    compositeBackward,
    compositeWeights,
    renderPrimary,
)

AXIS_RAY = Ray(
    origin=np.array([0.0, 0.0, -2.5]),
    dir=np.array([0.0, 0.0, 1.0]),
    tMin=0.5,
    tMax=4.0,
)


def slantedRay(x: float, y: float) -> Ray:
    target = np.array([x, y, 0.0])
    origin = np.array([0.0, 0.0, -2.5])
    d = target - origin
    return Ray(origin, d / np.linalg.norm(d), tMin=0.5, tMax=4.0)


class TestComposite:
    def test_weightsAndOpacity(self):
        sigma = np.array([0.5, 1.0, 2.0])
        delta = np.array([0.2, 0.3, 0.1])
        value, weights, opacity = composite(sigma, np.ones(3), delta)
        assert opacity == pytest.approx(1.0 - np.exp(-np.sum(sigma * delta)))
        assert value == pytest.approx(opacity)
        assert weights[0] == pytest.approx(1.0 - np.exp(-0.1))

    def test_emptyDensityGivesNothing(self):
        value, weights, opacity = composite(np.zeros(4), np.ones((4, 3)), np.full(4, 0.5))
        assert opacity == 0.0
        np.testing.assert_array_equal(value, np.zeros(3))

    def test_rejectsMismatchedLengths(self):
        with pytest.raises(ValueError):
            composite([1.0, 1.0], [1.0], [0.1, 0.1])

    def test_rejectsNegativeDensity(self):
        with pytest.raises(ValueError):
            composite([-1.0], [1.0], [0.1])

    def test_backwardMatchesFiniteDifferences(self):
        rng = np.random.default_rng(0)
        sigma = rng.uniform(0.1, 3.0, size=6)
        delta = rng.uniform(0.05, 0.3, size=6)
        cot = rng.normal(size=6)
        weights, transmittance = compositeWeights(sigma, delta)
        analytic = compositeBackward(weights, transmittance, delta, cot)
        h = 1e-6
        for k in range(6):
            plus, minus = sigma.copy(), sigma.copy()
            plus[k] += h
            minus[k] -= h
            numeric = (
                np.dot(compositeWeights(plus, delta)[0], cot)
                - np.dot(compositeWeights(minus, delta)[0], cot)
            ) / (2 * h)
            assert analytic[k] == pytest.approx(numeric, rel=1e-6, abs=1e-9)


class TestCamera:
    def test_lookAtPointsTheOpticalAxisAtTheTarget(self):
        rotation, translation = lookAt([3.0, 0.0, 1.0], [0.0, 0.0, 1.0])
        camera = Camera.fromFov(60.0, 5, 5, rotation, translation)
        np.testing.assert_allclose(camera.opticalAxis(), [-1.0, 0.0, 0.0], atol=1e-12)
        # Image rows go down in the world
        assert rotation[2, 1] == pytest.approx(-1.0)

    def test_centerPixelLooksAlongTheOpticalAxis(self):
        rotation, translation = lookAt([1.0, 2.0, 0.5], [0.0, 0.0, 0.5])
        camera = Camera.fromFov(70.0, 7, 5, rotation, translation)
        rays = generateRayBatch(camera, [(2, 3)], RenderConfig(tNearM=0.1, tFarM=3.0))
        np.testing.assert_allclose(rays.dirs[0], camera.opticalAxis(), atol=1e-12)
        np.testing.assert_allclose(rays.origins[0], translation)
        assert rays.tMin[0] == 0.1 and rays.tMax[0] == 3.0

    def test_pixelOutsideTheImageRaises(self):
        rotation, translation = lookAt([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])
        camera = Camera.fromFov(70.0, 4, 3, rotation, translation)
        with pytest.raises(IndexError):
            generateRayBatch(camera, [(3, 0)])

    def test_lookAtRejectsUpAlongTheViewingDirection(self):
        with pytest.raises(ValueError):
            lookAt([0.0, 0.0, 2.0], [0.0, 0.0, 0.0])

    def test_jsonRoundTrip(self):
        rotation, translation = lookAt([1.0, 1.0, 1.0], [0.0, 0.0, 0.0])
        camera = Camera.fromFov(50.0, 8, 6, rotation, translation)
        restored = Camera.fromJson(camera.toJson())
        np.testing.assert_array_equal(restored.rotation, camera.rotation)
        assert (restored.fx, restored.width, restored.height) == (camera.fx, 8, 6)

    def test_rayRejectsNonUnitDirection(self):
        with pytest.raises(ValueError):
            Ray(np.zeros(3), np.array([0.0, 0.0, 2.0]))


class TestSampling:
    def test_streamsAreReproducible(self):
        first = RayStreams(7, 3).samplesGenerator(1).random(5)
        second = RayStreams(7, 3).samplesGenerator(1).random(5)
        other = RayStreams(7, 4).samplesGenerator(1).random(5)
        np.testing.assert_array_equal(first, second)
        assert not np.array_equal(first, other)

    def test_stratifiedDepthsStayInTheirStrata(self):
        rng = np.random.default_rng(0)
        t, delta = stratifiedDepths(np.array([1.0, 0.0]), np.array([3.0, 1.0]), 4, rng)
        assert t.shape == (2, 4)
        assert np.all(np.diff(t, axis=1) > 0)
        assert np.all((t[0] >= 1.0) & (t[0] < 3.0))
        assert delta[1, -1] == pytest.approx(0.25)

    def test_needsTwoSamples(self):
        with pytest.raises(ValueError):
            stratifiedDepths(np.zeros(1), np.ones(1), 1, np.random.default_rng(0))


class TestReflection:
    def test_reflectDir(self):
        d = np.array([1.0, 0.0, -1.0]) / np.sqrt(2.0)
        np.testing.assert_allclose(
            reflectDir(d, [0.0, 0.0, 1.0]), [1 / np.sqrt(2.0), 0.0, 1 / np.sqrt(2.0)]
        )

    def test_reflectDirRejectsNonUnitNormal(self):
        with pytest.raises(ValueError):
            reflectDir([0.0, 0.0, 1.0], [0.0, 0.0, 0.5])

    def test_spawnReflectedLeavesTheSurfacePoint(self):
        rad = RayRadiometry(
            color=np.zeros(3),
            depth=2.0,
            normal=np.array([0.0, 0.0, -0.5]),
            reflprob=1.0,
            opacity=1.0,
        )
        child = spawnReflected(AXIS_RAY, rad, 0.1)
        np.testing.assert_allclose(child.origin, [0.0, 0.0, -0.5])
        np.testing.assert_allclose(child.dir, [0.0, 0.0, -1.0])
        assert child.bounce == 1
        assert child.tMin == 0.1 and child.tMax == AXIS_RAY.tMax

    def test_spawnReflectedRejectsAVanishingNormal(self):
        rad = RayRadiometry(np.zeros(3), 2.0, np.zeros(3), 1.0, 1.0)
        with pytest.raises(DegenerateNormalError):
            spawnReflected(AXIS_RAY, rad, 0.1)


class TestTrace:
    def test_depthZeroIsThePrimaryColor(self, field, smallRender):
        streams = RayStreams(3)
        primary = renderPrimary(
            field, AXIS_RAY, smallRender.nSamples, streams.samplesGenerator(0), smallRender
        )
        traced = trace(field, AXIS_RAY, 0, smallRender.nSamples, RayStreams(3), smallRender)
        np.testing.assert_array_equal(traced, primary.color)

    def test_nonReflectiveFieldIgnoresTheDepth(self, field, smallRender):
        field.reflprobGrid[:] = -30.0
        shallow = trace(field, AXIS_RAY, 0, 8, 1, smallRender)
        deep = trace(field, AXIS_RAY, 3, 8, 1, smallRender)
        np.testing.assert_array_equal(shallow, deep)

    def test_reflectionChangesTheColor(self, field, smallRender):
        field.reflprobGrid[:] = 5.0
        field.densityGrid[:] = 2.0
        shallow = trace(field, AXIS_RAY, 0, 8, 1, smallRender)
        deep = trace(field, AXIS_RAY, 1, 8, 1, smallRender)
        assert not np.allclose(shallow, deep)
        assert np.all((deep >= 0.0) & (deep <= 1.0))

    def test_negativeDepthRaises(self, field):
        with pytest.raises(ValueError):
            trace(field, AXIS_RAY, -1, 8, 0)

    def test_roughWithoutNoiseIsThePerfectTrace(self, field, smallRender):
        field.reflprobGrid[:] = 3.0
        perfect = trace(field, AXIS_RAY, 1, 8, 5, smallRender)
        rough = traceRough(field, AXIS_RAY, 1, 4, 0.0, 5, 8, smallRender)
        np.testing.assert_array_equal(perfect, rough)

    def test_roughIsReproducible(self, field, smallRender):
        field.reflprobGrid[:] = 3.0
        first = traceRough(field, AXIS_RAY, 1, 3, 0.1, 9, 8, smallRender)
        second = traceRough(field, AXIS_RAY, 1, 3, 0.1, 9, 8, smallRender)
        np.testing.assert_array_equal(first, second)

    def test_roughMirrorsBlurTheReflection(self, field, smallRender):
        field.reflprobGrid[:] = 5.0
        field.densityGrid[:] = 2.0
        perfect = trace(field, AXIS_RAY, 1, 8, 5, smallRender)
        slightly = traceRough(field, AXIS_RAY, 1, 8, 0.02, 5, 8, smallRender)
        strongly = traceRough(field, AXIS_RAY, 1, 8, 0.5, 5, 8, smallRender)
        reseeded = traceRough(field, AXIS_RAY, 1, 8, 0.5, 6, 8, smallRender)
        assert not np.allclose(strongly, perfect)
        assert not np.allclose(strongly, reseeded)
        assert np.abs(strongly - perfect).max() > np.abs(slightly - perfect).max()

    def test_roughRejectsNegativeKappa(self, field, smallRender):
        with pytest.raises(ValueError):
            traceRough(field, AXIS_RAY, 1, 2, -0.1, 0, 8, smallRender)

    def test_batchTracesEveryRay(self, field, smallRender):
        field.reflprobGrid[:] = 3.0
        rays = [slantedRay(0.1 * i, -0.05 * i) for i in range(4)]
        tracer = WhittedTracer(field, smallRender)
        batch = tracer.trace(RayBatch.fromRays(rays), RayStreams(2))
        assert batch.color.shape == (4, 3)
        assert not np.any(batch.failed)


class TestComposition:
    def test_singleEntryIsBitwiseThePlainField(self, field, smallRender):
        field.reflprobGrid[:] = 3.0
        plain = trace(field, AXIS_RAY, 1, 8, 4, smallRender)
        composed = traceComposed(ComposedScene.single(field), AXIS_RAY, 1, 8, 4, smallRender)
        np.testing.assert_array_equal(plain, composed)

    def test_identitySubstitutionIsBitwiseThePlainField(self, field, smallRender):
        field.reflprobGrid[:] = 3.0
        plain = trace(field, AXIS_RAY, 2, 8, 4, smallRender)
        scene = ComposedScene([SceneEntry.learned(field)], Substitution(field))
        substituted = traceSubstituted(scene, AXIS_RAY, 2, 8, 4, smallRender)
        np.testing.assert_array_equal(plain, substituted)

    def test_substitutionNeedsASubstitution(self, field):
        with pytest.raises(ValueError):
            traceSubstituted(ComposedScene.single(field), AXIS_RAY, 1, 8, 0)

    def test_virtualMirrorIntersection(self):
        mirror = VirtualMirror.fromNormal([0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0], (0.5, 0.5))
        t, n = intersectVirtualMirror(AXIS_RAY, mirror)
        assert t == pytest.approx(2.5)
        np.testing.assert_allclose(n, [0.0, 0.0, -1.0])
        behind = Ray(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0]), tMin=0.0, tMax=4.0)
        assert intersectVirtualMirror(behind, mirror) is None
        assert intersectVirtualMirror(slantedRay(0.9, 0.0), mirror) is None

    def test_virtualMirrorBeyondTheFarPlaneIsMissed(self):
        mirror = VirtualMirror.fromNormal([0.0, 0.0, 2.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0], (0.5, 0.5))
        # The mirror sits at t = 4.5, past tMax = 4
        assert intersectVirtualMirror(AXIS_RAY, mirror) is None
        farther = Ray(AXIS_RAY.origin, AXIS_RAY.dir, tMin=0.5, tMax=5.0)
        t, _ = intersectVirtualMirror(farther, mirror)
        assert t == pytest.approx(4.5)

    def test_backFacingHitReportsTheFlippedNormal(self):
        mirror = VirtualMirror.fromNormal([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0], (0.5, 0.5))
        _, n = intersectVirtualMirror(AXIS_RAY, mirror)
        np.testing.assert_allclose(n, [0.0, 0.0, -1.0])

    @pytest.mark.parametrize("mirrorZ, mirrorWins", [(-1.8, True), (1.5, False)])
    def test_nearestTerminationWins(self, field, smallRender, mirrorZ, mirrorWins):
        field.densityGrid[:] = 10.0
        mirror = VirtualMirror.fromNormal([0.0, 0.0, mirrorZ], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0], (0.5, 0.5))
        scene = ComposedScene([SceneEntry.learned(field), SceneEntry.virtualMirror(mirror)])
        tracer = WhittedTracer(scene, smallRender)
        result = tracer.trace(RayBatch.fromRays([AXIS_RAY]), RayStreams(0))
        if mirrorWins:
            assert result.primary.depth[0] == pytest.approx(2.5 + mirrorZ)
            assert result.primary.reflprob[0] == 1.0
            assert len(result.levels) == 2
        else:
            assert result.primary.depth[0] < 3.0
            assert result.primary.opacity[0] > 0.99

    def test_placedFieldMatchesMovedRays(self, field, smallRender):
        field.reflprobGrid[:] = -30.0
        placement = RigidTransform.fromPlacement((0.3, -0.2, 0.0), 30.0)
        scene = ComposedScene([SceneEntry.learned(field, placement.inverse())])
        composed = traceComposed(scene, AXIS_RAY, 0, 8, 6, smallRender)
        local = placement.inverse()
        ray = Ray(local.applyPoints(AXIS_RAY.origin[None])[0], local.applyDirections(AXIS_RAY.dir[None])[0], tMin=0.5, tMax=4.0)
        plain = trace(field, ray, 0, 8, 6, smallRender)
        np.testing.assert_allclose(composed, plain, atol=1e-12)


class TestRenderImage:
    def test_frameDoesNotDependOnThePoolSize(self, field):
        field.reflprobGrid[:] = 2.0
        rotation, translation = lookAt([0.0, -2.5, 0.3], [0.0, 0.0, 0.0])
        camera = Camera.fromFov(60.0, 6, 4, rotation, translation)
        config = RenderConfig(nSamples=6, tNearM=0.5, tFarM=4.0, maxDepth=1, tileSize=5, seed=11)
        with WorkerPool(1) as inline:
            first = renderImage(field, camera, config, inline)
        with WorkerPool(3) as threaded:
            second = renderImage(field, camera, config, threaded)
        np.testing.assert_array_equal(first.image, second.image)
        np.testing.assert_array_equal(first.depth, second.depth)
        assert first.image.shape == (4, 6, 3)
        assert first.report.tiles == 5

    def test_seedChangesTheFrame(self, field, inlinePool):
        rotation, translation = lookAt([0.0, -2.5, 0.3], [0.0, 0.0, 0.0])
        camera = Camera.fromFov(60.0, 4, 4, rotation, translation)
        config = RenderConfig(nSamples=6, tNearM=0.5, tFarM=4.0, maxDepth=0)
        first = renderImage(field, camera, config, inlinePool)
        second = renderImage(field, camera, RenderConfig(nSamples=6, tNearM=0.5, tFarM=4.0, maxDepth=0, seed=1), inlinePool)
        assert not np.array_equal(first.image, second.image)
        assert first.mask().shape == (4, 4)
