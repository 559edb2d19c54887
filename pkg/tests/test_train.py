import numpy as np
import pytest

from mirrorfield.field.params import GradientBuffer
from mirrorfield.pool import WorkerPool
from mirrorfield.render.config import RenderConfig
from mirrorfield.train.batch import TrainBatch, maskComponents, sampleTrainBatch
from mirrorfield.train.config import TrainConfig, loadTrainConfig, saveTrainConfig
from mirrorfield.train.losses import (
    LossParts,
    forwardNormalGrad,
    lossForwardNormal,
    lossMaskBce,
    lossMaskedPhotometric,
    lossNormalSupervision,
    lossPhotometric,
    lossPlaneConsistency,
    maskBceGrad,
    planeConsistencyGrad,
    totalLoss,
)
from mirrorfield.train.optim import OptimState, adamUpdate, cosineLearningRate
from mirrorfield.train.quads import quadGroups, samplePlaneQuadIndices
from mirrorfield.train.schedule import LossWeights, Schedule, scheduleAt
from mirrorfield.train.step import NonFiniteLossError, lossAndGradients, stepSeed, trainStep


def syntheticBatch(makeRays, nRays: int = 12, seed: int = 0) -> TrainBatch:
    """Rays from below the unit box towards a grid of points, the first half of
    them flagged as mirror rays of one region"""
    rng = np.random.default_rng(seed)
    targets = np.column_stack(
        [rng.uniform(-0.6, 0.6, nRays), rng.uniform(-0.6, 0.6, nRays), np.zeros(nRays)]
    )
    rays = makeRays([0.0, 0.0, -2.5], targets)
    mask = np.arange(nRays) < nRays // 2
    return TrainBatch(
        rays=rays,
        colors=rng.uniform(0.0, 1.0, size=(nRays, 3)),
        mask=mask,
        viewIndex=np.zeros(nRays, dtype=np.int64),
        pixels=np.column_stack([np.arange(nRays), np.zeros(nRays, dtype=np.int64)]),
        component=np.where(mask, 0, -1),
    )


class TestLosses:
    def test_photometricIsASum(self):
        pred = np.array([[0.5, 0.5, 0.5], [1.0, 0.0, 0.0]])
        gt = np.array([[0.0, 0.5, 0.5], [1.0, 0.0, 1.0]])
        assert lossPhotometric(pred, gt) == pytest.approx(0.25 + 1.0)

    def test_maskedPhotometricPullsMirrorRaysToK(self):
        pred = np.array([[0.2, 0.2, 0.2], [0.5, 0.5, 0.5]])
        gt = np.array([[0.9, 0.9, 0.9], [0.5, 0.5, 0.5]])
        assert lossMaskedPhotometric(pred, gt, [1, 0], (0.2, 0.2, 0.2)) == 0.0
        assert lossMaskedPhotometric(pred, gt, [0, 0]) == pytest.approx(3 * 0.49)

    def test_maskRejectsNonBinaryValues(self):
        with pytest.raises(ValueError):
            lossMaskedPhotometric([[0.0, 0.0, 0.0]], [[0.0, 0.0, 0.0]], [0.5])

    def test_bceIsClamped(self):
        assert np.isfinite(lossMaskBce([0.0, 1.0], [1, 0]))
        assert lossMaskBce([0.0], [1]) == pytest.approx(-np.log(1e-6))
        np.testing.assert_array_equal(maskBceGrad([0.0], [1]), [0.0])

    def test_bceGradient(self):
        p = np.array([0.3, 0.8])
        gt = np.array([1, 0])
        h = 1e-7
        for i in range(2):
            plus, minus = p.copy(), p.copy()
            plus[i] += h
            minus[i] -= h
            numeric = (lossMaskBce(plus, gt) - lossMaskBce(minus, gt)) / (2 * h)
            assert maskBceGrad(p, gt)[i] == pytest.approx(numeric, rel=1e-5)

    def test_planeConsistencyOfCoplanarPointsVanishes(self):
        quad = [[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [3.0, -2.0, 1.0]]
        assert lossPlaneConsistency([quad]) == 0.0
        assert lossPlaneConsistency([]) == 0.0
        assert planeConsistencyGrad([]).shape == (0, 4, 3)

    def test_planeConsistencyIsAMeanWithAMatchingGradient(self):
        rng = np.random.default_rng(1)
        quads = rng.normal(size=(3, 4, 3))
        expected = np.mean(
            [abs(np.dot(np.cross(q[1] - q[0], q[2] - q[0]), q[3] - q[0])) for q in quads]
        )
        assert lossPlaneConsistency(quads) == pytest.approx(expected)
        grad = planeConsistencyGrad(quads)
        h = 1e-7
        plus, minus = quads.copy(), quads.copy()
        plus[1, 2, 0] += h
        minus[1, 2, 0] -= h
        numeric = (lossPlaneConsistency(plus) - lossPlaneConsistency(minus)) / (2 * h)
        assert grad[1, 2, 0] == pytest.approx(numeric, rel=1e-5)

    def test_forwardNormalOnlyPenalisesAwayFacingNormals(self):
        dirs = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        normals = np.array([[0.0, 0.0, -1.0], [0.0, 0.6, 0.8]])
        assert lossForwardNormal(normals, dirs) == pytest.approx(0.64)
        np.testing.assert_allclose(forwardNormalGrad(normals, dirs)[0], 0.0)

    def test_normalSupervisionIsWeighted(self):
        smoothed = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        analytic = np.array([[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
        assert lossNormalSupervision(smoothed, analytic, [0.5, 1.0]) == pytest.approx(1.0)

    def test_totalLossWeighsEveryTerm(self):
        parts = LossParts(1.0, 2.0, 3.0, 4.0, 5.0)
        weights = LossWeights(1.0, 0.1, 0.01, 0.01, 0.01)
        assert totalLoss(parts, weights) == pytest.approx(1.0 + 0.2 + 0.03 + 0.04 + 0.05)

    def test_lossPartsDetectNonFiniteValues(self):
        assert not LossParts(photometric=np.nan).isFinite()


class TestSchedule:
    def test_stagesSwitchTermsAndVariant(self):
        schedule = Schedule(stage1End=10, stage2End=20, k=(0.1, 0.2, 0.3))
        weights, variant = scheduleAt(schedule, 9)
        assert variant == "masked" and weights.lambdaM == 0.0 and weights.lambdaC == 1.0
        weights, variant = scheduleAt(schedule, 10)
        assert variant == "masked" and weights.lambdaM == 0.1 and weights.lambdaPc == 0.01
        weights, variant = scheduleAt(schedule, 20)
        assert variant == "full" and weights.lambdaM == 0.1

    def test_stageThreeCanDropTheMaskLoss(self):
        schedule = Schedule(stage1End=1, stage2End=2, maskLossInStage3=False)
        weights, variant = scheduleAt(schedule, 5)
        assert weights.lambdaM == 0.0 and variant == "full"

    def test_withoutMaskedStageTheFullLossIsUsedThroughout(self):
        schedule = Schedule(stage1End=5, stage2End=6, maskedStage=False)
        assert scheduleAt(schedule, 0)[1] == "full"

    def test_invalidBoundariesRaise(self):
        with pytest.raises(ValueError):
            Schedule(stage1End=10, stage2End=5)
        with pytest.raises(ValueError):
            Schedule(stage1End=1, stage2End=1).stage(-1)

    def test_negativeWeightsRaise(self):
        with pytest.raises(ValueError):
            LossWeights(lambdaM=-1.0)


class TestOptim:
    def test_cosineLearningRate(self):
        assert cosineLearningRate(1.0, 50, 100, 0.0) == pytest.approx(0.5)
        assert cosineLearningRate(1.0, 500, 100, 0.2) == pytest.approx(0.2)
        assert cosineLearningRate(0.3, 7, 0, 0.1) == 0.3

    def test_zeroGradientLeavesEverythingUnchanged(self, field):
        before = field.copy()
        state = OptimState.create(field)
        assert not adamUpdate(field, GradientBuffer.zerosLike(field), state, 0.1)
        assert state.step == 0
        np.testing.assert_array_equal(field.densityGrid, before.densityGrid)

    def test_firstStepMovesByTheLearningRate(self, field):
        before = field.densityGrid.copy()
        grad = GradientBuffer.zerosLike(field)
        grad.densityGrid[1, 1, 1] = 3.0
        grad.densityGrid[2, 2, 2] = -0.5
        state = OptimState.create(field)
        assert adamUpdate(field, grad, state, 0.1)
        assert state.step == 1
        delta = field.densityGrid - before
        assert delta[1, 1, 1] == pytest.approx(-0.1, rel=1e-6)
        assert delta[2, 2, 2] == pytest.approx(0.1, rel=1e-6)
        assert delta[0, 0, 0] == 0.0


class TestBatch:
    def test_sameSeedSameBatch(self, tinyDataset):
        config = RenderConfig(nSamples=4)
        first = sampleTrainBatch(tinyDataset.views, 20, np.random.default_rng(3), 2, config)
        second = sampleTrainBatch(tinyDataset.views, 20, np.random.default_rng(3), 2, config)
        np.testing.assert_array_equal(first.pixels, second.pixels)
        np.testing.assert_array_equal(first.rays.dirs, second.rays.dirs)
        assert len(first) == 20
        assert len(np.unique(first.viewIndex)) == 2

    def test_supervisionComesFromThePixels(self, tinyDataset):
        batch = sampleTrainBatch(tinyDataset.views, 15, np.random.default_rng(0), 3)
        for i in range(len(batch)):
            view = tinyDataset.views[batch.viewIndex[i]]
            row, col = batch.pixels[i]
            np.testing.assert_array_equal(batch.colors[i], view.image[row, col])
            assert batch.mask[i] == view.mask[row, col]

    def test_maskComponentsAreEightConnected(self):
        mask = np.zeros((5, 5), dtype=bool)
        mask[0, 0] = mask[1, 1] = True
        mask[4, 4] = True
        labels = maskComponents(mask)
        assert labels[0, 0] == labels[1, 1] == 0
        assert labels[4, 4] == 1
        assert labels[2, 2] == -1

    def test_emptyRequestRaises(self, tinyDataset):
        with pytest.raises(ValueError):
            sampleTrainBatch(tinyDataset.views, 0, np.random.default_rng(0))


class TestQuads:
    def test_quadsNeverMixViews(self, makeRays):
        batch = syntheticBatch(makeRays, nRays=16)
        batch.viewIndex[:] = np.repeat([0, 1], 8)
        batch.mask[:] = np.tile([True, True, True, True, True, False, False, False], 2)
        quads = samplePlaneQuadIndices(batch, np.random.default_rng(0), 20)
        assert quads.shape == (20, 4)
        for quad in quads:
            assert len(set(quad.tolist())) == 4
            assert len(set(batch.viewIndex[quad].tolist())) == 1
            assert np.all(batch.mask[quad])

    def test_componentAwareQuadsStayInOneRegion(self, makeRays):
        batch = syntheticBatch(makeRays, nRays=12)
        batch.mask[:] = True
        batch.component[:] = np.repeat([0, 1, 2], 4)
        quads = samplePlaneQuadIndices(batch, np.random.default_rng(0), 10, componentAware=True)
        for quad in quads:
            assert len(set(batch.component[quad].tolist())) == 1

    def test_tooFewMirrorRaysGiveNoQuads(self, makeRays):
        batch = syntheticBatch(makeRays, nRays=12)
        batch.mask[:] = False
        batch.mask[:3] = True
        assert quadGroups(batch) == []
        assert samplePlaneQuadIndices(batch, np.random.default_rng(0), 5).shape == (0, 4)


def fdConfig(**kwargs) -> TrainConfig:
    return TrainConfig(
        chunkSize=5,
        render=RenderConfig(nSamples=8, tNearM=0.5, tFarM=4.0, maxDepth=1),
        planeQuads=3,
        **kwargs,
    )


@pytest.mark.parametrize("variant", ["full", "masked"])
def test_gradientsMatchFiniteDifferencesOfTheTotalLoss(makeField, makeRays, variant):
    params = makeField(seed=7, resolution=5, shDegree=1)
    params.reflprobGrid += 1.0
    batch = syntheticBatch(makeRays)
    config = fdConfig()
    weights = LossWeights(1.0, 0.5, 1.0, 1.0, 1.0)
    grad = GradientBuffer.zerosLike(params)
    evaluation = lossAndGradients(params, grad, batch, weights, variant, config, 11, k=(0.2, 0.3, 0.4))
    assert evaluation.failedRays == 0

    def total() -> float:
        scratch = GradientBuffer.zerosLike(params)
        return lossAndGradients(
            params, scratch, batch, weights, variant, config, 11, k=(0.2, 0.3, 0.4),
            normals=evaluation.normals,
        ).total

    assert total() == pytest.approx(evaluation.total, rel=1e-12)
    h = 1e-5
    for name, analytic in grad.lattices().items():
        lattice = getattr(params, name)
        scale = float(np.max(np.abs(analytic)))
        if scale == 0.0:
            continue
        strongest = np.argsort(np.abs(analytic).ravel())[-3:]
        for flat in strongest:
            index = np.unravel_index(flat, lattice.shape)
            lattice[index] += h
            plus = total()
            lattice[index] -= 2 * h
            minus = total()
            lattice[index] += h
            numeric = (plus - minus) / (2 * h)
            assert analytic[index] == pytest.approx(numeric, rel=1e-3, abs=1e-5 * scale), name


@pytest.mark.slow
def test_gradientsThroughTwoBouncesMatchFiniteDifferences(makeField, makeRays):
    params = makeField(seed=8, resolution=8, shDegree=2)
    params.reflprobGrid += 1.0
    batch = syntheticBatch(makeRays, nRays=32, seed=1)
    config = TrainConfig(
        chunkSize=8,
        render=RenderConfig(nSamples=12, tNearM=0.5, tFarM=4.0, maxDepth=2),
        planeQuads=4,
    )
    weights = LossWeights(1.0, 0.5, 1.0, 1.0, 1.0)
    grad = GradientBuffer.zerosLike(params)
    evaluation = lossAndGradients(params, grad, batch, weights, "full", config, 3)

    def total() -> float:
        scratch = GradientBuffer.zerosLike(params)
        return lossAndGradients(
            params, scratch, batch, weights, "full", config, 3, normals=evaluation.normals
        ).total

    rng = np.random.default_rng(9)
    h = 1e-5
    for name, analytic in grad.lattices().items():
        lattice = getattr(params, name)
        for flat in rng.choice(lattice.size, size=20, replace=False):
            index = np.unravel_index(flat, lattice.shape)
            lattice[index] += h
            plus = total()
            lattice[index] -= 2 * h
            minus = total()
            lattice[index] += h
            numeric = (plus - minus) / (2 * h)
            assert analytic[index] == pytest.approx(numeric, rel=1e-3, abs=1e-8), name


def test_detachedBlendKeepsPhotometricGradientOutOfTheGeometry(makeField, makeRays):
    params = makeField(seed=7, resolution=5, shDegree=1)
    params.reflprobGrid += 1.0
    batch = syntheticBatch(makeRays)
    weights = LossWeights(1.0, 0.0, 0.0, 0.0, 0.0)
    joint = GradientBuffer.zerosLike(params)
    detached = GradientBuffer.zerosLike(params)
    lossAndGradients(params, joint, batch, weights, "full", fdConfig(jointOptimization=True), 11)
    lossAndGradients(params, detached, batch, weights, "full", fdConfig(jointOptimization=False), 11)
    np.testing.assert_array_equal(detached.normalGrid, 0.0)
    assert np.any(joint.normalGrid != 0.0)
    np.testing.assert_allclose(detached.radianceGrid, joint.radianceGrid)


def test_nonFiniteLossRaisesAndLeavesTheGradientAlone(makeField, makeRays):
    params = makeField()
    batch = syntheticBatch(makeRays)
    batch.colors[0, 0] = np.nan
    grad = GradientBuffer.zerosLike(params)
    with pytest.raises(NonFiniteLossError):
        lossAndGradients(params, grad, batch, LossWeights(), "full", fdConfig(), 0, step=3)
    assert grad.isZero()


def test_trainStepIsDeterministic(makeField, makeRays):
    batch = syntheticBatch(makeRays)
    config = fdConfig(steps=10)
    schedule = config.buildSchedule()
    outcomes = []
    for poolSize in (1, 2):
        params = makeField(seed=2)
        optim = OptimState.create(params, config.optim)
        with WorkerPool(poolSize) as pool:
            result = trainStep(
                params, GradientBuffer.zerosLike(params), optim, batch, schedule, config, 4, pool
            )
        assert result.updated and result.stage == schedule.stage(4)
        outcomes.append((params, result))
    (first, firstResult), (second, secondResult) = outcomes
    assert firstResult.total == secondResult.total
    for name, lattice in first.lattices().items():
        np.testing.assert_array_equal(lattice, getattr(second, name))


def test_stepSeedsDiffer():
    assert stepSeed(0, 1) != stepSeed(0, 2)
    assert stepSeed(5, 1) == stepSeed(5, 1)


def test_trainConfigYamlRoundTrip(tmp_path, tinyTrainConfig):
    path = str(tmp_path / "train.yaml")
    saveTrainConfig(tinyTrainConfig, path)
    restored = loadTrainConfig(path)
    assert restored.hash() == tinyTrainConfig.hash()


def test_trainConfigRejectsUnknownKeys(tmp_path):
    path = tmp_path / "train.yaml"
    path.write_text("steps: 3\nlearnigRate: 0.1\n")
    with pytest.raises(ValueError, match="learnigRate"):
        loadTrainConfig(str(path))


def test_emptyTrainConfigKeepsDefaults(tmp_path):
    path = tmp_path / "train.yaml"
    path.write_text("")
    assert loadTrainConfig(str(path)).steps == TrainConfig().steps


def test_ablationSwitchesZeroTheirWeights():
    config = TrainConfig(planeConsistency=False, forwardNormal=False, steps=100)
    weights = config.buildSchedule().weights
    assert weights.lambdaPc == 0.0 and weights.lambdaNreg == 0.0
    assert config.buildSchedule().stage1End == 20
