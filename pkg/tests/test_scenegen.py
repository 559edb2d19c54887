import numpy as np
import pytest

from mirrorfield.render.camera import Ray
from mirrorfield.scenegen.builtin import UnknownSceneError, builtinScene
from mirrorfield.scenegen.dataset import (
    DatasetLayoutError,
    DegenerateOrbitError,
    OrbitSpec,
    generateDataset,
    loadDataset,
    saveDataset,
)
from mirrorfield.scenegen.oracle import oraclePath, oracleTrace, shadeLambertian
from mirrorfield.scenegen.scene import AnalyticScene, AxisAlignedBox, Rectangle, Sphere


def one(vector) -> np.ndarray:
    return np.asarray(vector, dtype=np.float64)[None, :]


class TestShapes:
    def test_sphereFromOutsideAndInside(self):
        sphere = Sphere((0.0, 0.0, 0.0), 1.0)
        t, normal = sphere.intersect(one([0, 0, -3]), one([0, 0, 1]), 1e-9)
        assert t[0] == pytest.approx(2.0)
        np.testing.assert_allclose(normal[0], [0, 0, -1])
        t, normal = sphere.intersect(one([0, 0, 0]), one([0, 0, 1]), 1e-9)
        assert t[0] == pytest.approx(1.0)
        np.testing.assert_allclose(normal[0], [0, 0, 1])

    def test_sphereMiss(self):
        t, normal = Sphere((0.0, 0.0, 0.0), 1.0).intersect(one([0, 2, -3]), one([0, 0, 1]), 1e-9)
        assert np.isinf(t[0])
        np.testing.assert_array_equal(normal[0], 0.0)

    def test_boxEntryExitAndParallelMiss(self):
        box = AxisAlignedBox((-1, -1, -1), (1, 1, 1))
        origins = np.array([[-3.0, 0.0, 0.0], [0.0, 0.0, 0.0], [-3.0, 2.0, 0.0]])
        dirs = np.array([[1.0, 0.0, 0.0]] * 3)
        t, normal = box.intersect(origins, dirs, 1e-9)
        assert t[0] == pytest.approx(2.0)
        np.testing.assert_allclose(normal[0], [-1, 0, 0])
        assert t[1] == pytest.approx(1.0)
        np.testing.assert_allclose(normal[1], [1, 0, 0])
        assert np.isinf(t[2])

    def test_rectangleNormalFacesTheRay(self):
        rect = Rectangle((0, 0, 0), (0, 0, 1), (1, 0, 0), (1.0, 0.5))
        origins = np.array([[0.0, 0.0, 2.0], [0.0, 0.0, -2.0], [0.0, 0.8, 2.0]])
        dirs = np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        t, normal = rect.intersect(origins, dirs, 1e-9)
        np.testing.assert_allclose(t[:2], [2.0, 2.0])
        np.testing.assert_allclose(normal[0], [0, 0, 1])
        np.testing.assert_allclose(normal[1], [0, 0, -1])
        # Outside the half height
        assert np.isinf(t[2])

    def test_invalidShapesRaise(self):
        with pytest.raises(ValueError):
            Sphere((0, 0, 0), 0.0)
        with pytest.raises(ValueError):
            AxisAlignedBox((0, 0, 0), (1, 0, 1))
        with pytest.raises(ValueError):
            Rectangle((0, 0, 0), (0, 0, 1), (0, 0, 2), (1.0, 1.0))


class TestOracle:
    def test_shadowedPointOnlySeesTheAmbientTerm(self):
        scene = builtinScene("mirror-box")
        light = scene.lights[0].direction
        sphereCenter = np.array([-0.6, 0.5, 0.4])
        # Floor point straight below the sphere along the light direction
        point = sphereCenter - sphereCenter[2] / light[2] * light
        albedo = np.array([0.5, 0.4, 0.3])
        shaded = shadeLambertian(scene, point[None, :], one([0, 0, 1]), albedo[None, :])
        np.testing.assert_allclose(shaded[0], albedo * scene.ambient)

    def test_litPointAddsTheLambertTerm(self):
        scene = builtinScene("mirror-box")
        albedo = np.array([0.5, 0.4, 0.3])
        shaded = shadeLambertian(scene, one([0, 0, 0]), one([0, 0, 1]), albedo[None, :])
        cosine = scene.lights[0].direction[2]
        expected = albedo * scene.ambient + cosine * albedo * scene.lights[0].intensity
        np.testing.assert_allclose(shaded[0], expected)

    def test_mirrorShowsTheReflectedSurface(self):
        scene = builtinScene("mirror-box")
        ray = Ray([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0, 0.0, 10.0)
        color, tFirst, isMirror = oracleTrace(scene, ray, depth=1)
        assert isMirror
        assert tFirst == pytest.approx(1.98)
        # Straight back onto the opposite wall at x = -2
        wall = next(p for p in scene.primitives if p.name == "wallNegX")
        expected = shadeLambertian(
            scene, one([-2.0, 0.0, 1.0]), one([1, 0, 0]), wall.material.albedo[None, :]
        )
        np.testing.assert_allclose(color, expected[0])

    def test_exhaustedBouncesShowTheBackground(self):
        scene = builtinScene("mirror-box")
        ray = Ray([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0, 0.0, 10.0)
        color, _, isMirror = oracleTrace(scene, ray, depth=0)
        assert isMirror
        np.testing.assert_allclose(color, scene.background)

    def test_pathBetweenFacingMirrorsUsesEveryBounce(self):
        scene = builtinScene("two-mirrors")
        ray = Ray([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0, 0.0, 10.0)
        path = oraclePath(scene, ray, depth=3)
        assert len(path) == 4
        assert all(hit.material.isMirror for hit in path)
        assert [round(hit.t, 6) for hit in path] == [1.98, 3.96, 3.96, 3.96]

    def test_negativeDepthRaises(self):
        ray = Ray([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 0, 0.0, 10.0)
        with pytest.raises(ValueError):
            oracleTrace(builtinScene("mirror-box"), ray, depth=-1)


class TestDataset:
    def test_unknownSceneRaises(self):
        with pytest.raises(UnknownSceneError):
            builtinScene("hall-of-mirrors")

    def test_sceneRoundTripsThroughJson(self):
        scene = builtinScene("two-mirrors")
        restored = AnalyticScene.fromJson(scene.toJson())
        assert restored.toJson() == scene.toJson()
        assert restored.mirrorCount() == 2

    def test_zeroRadiusOrbitRaises(self):
        with pytest.raises(DegenerateOrbitError):
            generateDataset(builtinScene("mirror-box"), 2, (8, 8), OrbitSpec(radiusM=0.0), 0)

    def test_viewsSeeTheMirror(self, tinyDataset):
        assert len(tinyDataset) == 3
        for view in tinyDataset.views:
            assert view.image.shape == (12, 12, 3)
            assert np.any(view.mask)
            np.testing.assert_array_equal(np.round(view.image * 255) / 255, view.image)

    def test_generationIsDeterministic(self):
        orbit = OrbitSpec(startDeg=10.0, arcDeg=60.0, azimuthJitterDeg=3.0)
        a = generateDataset(builtinScene("mirror-box"), 2, (8, 6), orbit, 5)
        b = generateDataset(builtinScene("mirror-box"), 2, (8, 6), orbit, 5)
        for viewA, viewB in zip(a.views, b.views):
            np.testing.assert_array_equal(viewA.image, viewB.image)
            np.testing.assert_array_equal(viewA.camera.rotation, viewB.camera.rotation)

    def test_saveAndLoad(self, tinyDataset, tmp_path):
        path = str(tmp_path / "data")
        saveDataset(tinyDataset, path)
        loaded = loadDataset(path)
        assert len(loaded) == len(tinyDataset)
        assert loaded.scene.toJson() == tinyDataset.scene.toJson()
        for saved, view in zip(tinyDataset.views, loaded.views):
            np.testing.assert_allclose(view.image, saved.image, atol=1e-12)
            np.testing.assert_array_equal(view.mask, saved.mask)
            np.testing.assert_allclose(view.depth, saved.depth, rtol=1e-6)
            np.testing.assert_allclose(view.camera.rotation, saved.camera.rotation)

    def test_saveRefusesToOverwrite(self, tinyDataset, tmp_path):
        path = str(tmp_path / "data")
        saveDataset(tinyDataset, path)
        with pytest.raises(FileExistsError):
            saveDataset(tinyDataset, path)
        saveDataset(tinyDataset.subset([0]), path, force=True)
        assert len(loadDataset(path)) == 1

    def test_loadRejectsAnIncompleteDirectory(self, tmp_path):
        (tmp_path / "images").mkdir()
        with pytest.raises(DatasetLayoutError):
            loadDataset(str(tmp_path))
