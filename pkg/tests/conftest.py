import numpy as np
import pytest

from mirrorfield.field.params import FieldConfig, FieldParams
from mirrorfield.pool import WorkerPool
from mirrorfield.render.camera import RayBatch
from mirrorfield.render.config import RenderConfig
from mirrorfield.scenegen.builtin import builtinScene
from mirrorfield.scenegen.dataset import OrbitSpec, generateDataset
from mirrorfield.train.config import TrainConfig


def randomField(seed: int = 0, resolution: int = 5, shDegree: int = 1) -> FieldParams:
    """A small field over [-1, 1]^3 with random values in every lattice"""
    rng = np.random.default_rng(seed)
    config = FieldConfig(
        bboxMin=(-1.0, -1.0, -1.0),
        bboxMax=(1.0, 1.0, 1.0),
        shDegree=shDegree,
        densityInit=0.0,
        reflprobInit=0.0,
    ).withResolution(resolution)
    params = FieldParams.create(config, rng)
    params.densityGrid += rng.normal(0.0, 1.0, params.densityGrid.shape)
    params.radianceGrid += rng.normal(0.0, 0.5, params.radianceGrid.shape)
    params.reflprobGrid += rng.normal(0.0, 1.0, params.reflprobGrid.shape)
    return params


def raysTowards(origin, targets, tMin: float = 0.5, tMax: float = 4.0) -> RayBatch:
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.asarray(targets, dtype=np.float64) - origin
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    nRays = dirs.shape[0]
    return RayBatch(
        origins=np.repeat(origin[None, :], nRays, axis=0),
        dirs=dirs,
        bounce=np.zeros(nRays, dtype=np.int64),
        tMin=np.full(nRays, tMin),
        tMax=np.full(nRays, tMax),
    )


@pytest.fixture
def makeField():
    return randomField


@pytest.fixture
def field() -> FieldParams:
    return randomField()


@pytest.fixture
def makeRays():
    return raysTowards


@pytest.fixture
def smallRender() -> RenderConfig:
    return RenderConfig(nSamples=8, tNearM=0.5, tFarM=4.0, maxDepth=1, tileSize=16)


@pytest.fixture
def inlinePool():
    with WorkerPool(1) as pool:
        yield pool


@pytest.fixture(scope="session")
def tinyDataset():
    """Three oracle views of the mirror box at 12x12, all facing the mirror"""
    orbit = OrbitSpec(startDeg=160.0, arcDeg=40.0)
    return generateDataset(builtinScene("mirror-box"), 3, (12, 12), orbit, 0)


@pytest.fixture
def tinyTrainConfig() -> TrainConfig:
    return TrainConfig(
        steps=4,
        raysPerBatch=32,
        viewsPerBatch=2,
        chunkSize=16,
        field=FieldConfig(shDegree=1).withResolution(4),
        render=RenderConfig(nSamples=6, maxDepth=1),
        planeQuads=4,
        checkpointEvery=2,
        logEvery=1,
    )
