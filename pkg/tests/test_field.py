import numpy as np
import pytest

from mirrorfield.field.params import (
    DegenerateGradientError,
    DegenerateNormalError,
    FieldConfig,
    FieldParams,
    GradientBuffer,
    mergeGradientBuffers,
)
from mirrorfield.field.query import (
    accumulateGradients,
    analyticalNormal,
    directionCotangent,
    pointCotangent,
    queryDensity,
    queryNormal,
    queryRadiance,
    queryReflectionProb,
)
from mirrorfield.field.sh import shBasis


def latticePoint(params: FieldParams, name: str, index) -> np.ndarray:
    return params.bboxMin + np.asarray(index) * params.cellSize(name)


def test_densityIsExactAtLatticePoints(field):
    index = (1, 2, 3)
    raw = field.densityGrid[index]
    expected = np.logaddexp(0.0, raw)
    assert queryDensity(field, latticePoint(field, "densityGrid", index)) == pytest.approx(expected)


def test_densityInterpolatesLinearlyAlongAnEdge(field):
    a = latticePoint(field, "densityGrid", (1, 1, 1))
    b = latticePoint(field, "densityGrid", (2, 1, 1))
    rawA, rawB = field.densityGrid[1, 1, 1], field.densityGrid[2, 1, 1]
    expected = np.logaddexp(0.0, 0.25 * rawA + 0.75 * rawB)
    assert queryDensity(field, 0.25 * a + 0.75 * b) == pytest.approx(expected)


def test_outsideTheBoxEverythingVanishes(field):
    outside = np.array([[1.5, 0.0, 0.0], [0.0, -1.01, 0.0]])
    assert np.all(queryDensity(field, outside) == 0.0)
    assert np.all(queryReflectionProb(field, outside) == 0.0)


def test_radianceLiesInTheOpenUnitInterval(field):
    rng = np.random.default_rng(1)
    points = rng.uniform(-1.0, 1.0, size=(50, 3))
    dirs = rng.normal(size=(50, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rgb = queryRadiance(field, points, dirs)
    assert rgb.shape == (50, 3)
    assert np.all((rgb > 0.0) & (rgb < 1.0))


def test_radianceRejectsNonUnitDirections(field):
    with pytest.raises(ValueError):
        queryRadiance(field, [0.0, 0.0, 0.0], [0.0, 0.0, 2.0])


def test_degreeZeroRadianceIgnoresTheDirection(makeField):
    params = makeField(shDegree=0)
    up = queryRadiance(params, [0.1, 0.2, 0.3], [0.0, 0.0, 1.0])
    side = queryRadiance(params, [0.1, 0.2, 0.3], [1.0, 0.0, 0.0])
    np.testing.assert_allclose(up, side)


def test_normalsHaveUnitLength(field):
    points = np.random.default_rng(2).uniform(-0.9, 0.9, size=(20, 3))
    normals = queryNormal(field, points)
    np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-12)


def test_degenerateNormalRaises(field):
    field.normalGrid[:] = 0.0
    with pytest.raises(DegenerateNormalError):
        queryNormal(field, [0.0, 0.0, 0.0])


def test_analyticalNormalOfALayeredDensity():
    params = FieldParams.create(
        FieldConfig(bboxMin=(-1, -1, -1), bboxMax=(1, 1, 1), shDegree=0).withResolution(9)
    )
    # Density decreasing with z: the normal points up
    z = np.linspace(-1.0, 1.0, 9)
    params.densityGrid[:] = -3.0 * z[None, None, :]
    normal = analyticalNormal(params, [0.1, -0.2, 0.05])
    np.testing.assert_allclose(normal, [0.0, 0.0, 1.0], atol=1e-9)


def test_analyticalNormalOfAConstantDensityRaises():
    params = FieldParams.create(FieldConfig(shDegree=0).withResolution(5))
    with pytest.raises(DegenerateGradientError):
        analyticalNormal(params, [0.0, 0.0, 0.0])


def test_shBasisHasNineFunctionsAtDegreeTwo():
    basis = shBasis(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]), 2)
    assert basis.shape == (2, 9)


@pytest.mark.parametrize("kind", ["density", "radiance", "normal", "reflprob"])
def test_latticeGradientsMatchFiniteDifferences(makeField, kind):
    params = makeField(seed=3, resolution=4)
    rng = np.random.default_rng(4)
    points = rng.uniform(-0.95, 0.95, size=(6, 3))
    dirs = rng.normal(size=(6, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    def query(p):
        if kind == "density":
            return queryDensity(p, points, withRecord=True)
        if kind == "radiance":
            return queryRadiance(p, points, dirs, withRecord=True)
        if kind == "normal":
            return queryNormal(p, points, withRecord=True)
        return queryReflectionProb(p, points, withRecord=True)

    value, record = query(params)
    cotangent = rng.normal(size=np.shape(value))
    grad = GradientBuffer.zerosLike(params)
    accumulateGradients(params, grad, record, cotangent)
    lattice = getattr(params, record.lattice)
    analytic = getattr(grad, record.lattice)
    h = 1e-6
    for flat in rng.choice(lattice.size, size=8, replace=False):
        index = np.unravel_index(flat, lattice.shape)
        lattice[index] += h
        plus = float(np.sum(query(params)[0] * cotangent))
        lattice[index] -= 2 * h
        minus = float(np.sum(query(params)[0] * cotangent))
        lattice[index] += h
        assert analytic[index] == pytest.approx((plus - minus) / (2 * h), rel=1e-5, abs=1e-8)


def test_pointAndDirectionCotangentsMatchFiniteDifferences(makeField):
    params = makeField(seed=5, resolution=4, shDegree=2)
    rng = np.random.default_rng(6)
    points = rng.uniform(-0.9, 0.9, size=(4, 3))
    dirs = rng.normal(size=(4, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    value, record = queryRadiance(params, points, dirs, withRecord=True)
    cotangent = rng.normal(size=value.shape)
    dPoints = pointCotangent(params, record, cotangent)
    dDirs = directionCotangent(record, cotangent)
    h = 1e-6
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = h
        plus = np.sum(queryRadiance(params, points + offset, dirs) * cotangent, axis=1)
        minus = np.sum(queryRadiance(params, points - offset, dirs) * cotangent, axis=1)
        np.testing.assert_allclose(dPoints[:, axis], (plus - minus) / (2 * h), rtol=1e-5, atol=1e-8)
    # Tangential direction changes only, so the perturbed directions stay unit
    tangent = np.cross(dirs, rng.normal(size=(4, 3)))
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)

    def rotated(angle):
        return np.cos(angle) * dirs + np.sin(angle) * tangent

    plus = np.sum(queryRadiance(params, points, rotated(h)) * cotangent, axis=1)
    minus = np.sum(queryRadiance(params, points, rotated(-h)) * cotangent, axis=1)
    np.testing.assert_allclose(
        np.sum(dDirs * tangent, axis=1), (plus - minus) / (2 * h), rtol=1e-5, atol=1e-8
    )


def test_gradientBuffersAccumulateAndMerge(field):
    first = GradientBuffer.zerosLike(field)
    second = GradientBuffer.zerosLike(field)
    first.densityGrid[0, 0, 0] = 1.0
    second.densityGrid[0, 0, 0] = 2.0
    second.reflprobGrid[1, 1, 1] = -1.0
    merged = mergeGradientBuffers(field, [first, second])
    assert merged.densityGrid[0, 0, 0] == 3.0
    assert merged.reflprobGrid[1, 1, 1] == -1.0
    assert first.densityGrid[0, 0, 0] == 1.0
    merged.reset()
    assert merged.isZero()


def test_fieldParamsRejectsAnInvertedBox(field):
    with pytest.raises(ValueError):
        FieldParams(
            bboxMin=field.bboxMax,
            bboxMax=field.bboxMin,
            densityGrid=field.densityGrid,
            radianceGrid=field.radianceGrid,
            normalGrid=field.normalGrid,
            reflprobGrid=field.reflprobGrid,
            shDegree=field.shDegree,
        )


def test_fieldConfigRoundTripsThroughJson():
    config = FieldConfig(densityResolution=(4, 5, 6), shDegree=1)
    restored = FieldConfig.fromJson(config.toJson())
    assert restored.hash() == config.hash()
    assert tuple(restored.densityResolution) == (4, 5, 6)
