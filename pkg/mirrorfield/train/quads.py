import numpy as np

from mirrorfield.field.params import FieldParams
from mirrorfield.render.config import RenderConfig
from mirrorfield.render.volume import renderRays
from mirrorfield.train.batch import TrainBatch

QUAD_SIZE = 4


def quadGroups(batch: TrainBatch, componentAware: bool = False) -> "list[np.ndarray]":
    """Indices of the mask rays of the batch, grouped per view (and per connected
    mirror region with componentAware). Groups with fewer than 4 rays are dropped
    """
    maskIndex = np.flatnonzero(batch.mask)
    if componentAware:
        keys = np.stack([batch.viewIndex[maskIndex], batch.component[maskIndex]], axis=1)
    else:
        keys = batch.viewIndex[maskIndex][:, None]
    groups = []
    for key in np.unique(keys, axis=0):
        members = maskIndex[np.all(keys == key, axis=1)]
        if members.shape[0] >= QUAD_SIZE:
            groups.append(members)
    return groups


def samplePlaneQuadIndices(
    batch: TrainBatch,
    rng: np.random.Generator,
    nQuads: int,
    componentAware: bool = False,
) -> np.ndarray:
    """Draw nQuads quads of four distinct mask rays, all four from the same image

    Returns:
        np.ndarray: (Q, 4) ray indices, empty when no image has 4 mask rays
    """
    groups = quadGroups(batch, componentAware)
    if len(groups) == 0 or nQuads <= 0:
        return np.zeros((0, QUAD_SIZE), dtype=np.int64)
    chosenGroups = rng.integers(0, len(groups), size=nQuads)
    quads = np.empty((nQuads, QUAD_SIZE), dtype=np.int64)
    for q, g in enumerate(chosenGroups):
        quads[q] = rng.choice(groups[g], size=QUAD_SIZE, replace=False)
    return quads


def samplePlaneQuads(
    batch: TrainBatch,
    field: FieldParams,
    rng: np.random.Generator,
    nQuads: int,
    config: "RenderConfig|None" = None,
    componentAware: bool = False,
) -> np.ndarray:
    """Quads of expected surface points X = o + D d of mask rays, rendered in
    field

    Returns:
        np.ndarray: (Q, 4, 3) points; empty when fewer than 4 mask rays share an
            image
    """
    config = RenderConfig() if config is None else config
    quads = samplePlaneQuadIndices(batch, rng, nQuads, componentAware)
    if quads.shape[0] == 0:
        return np.zeros((0, QUAD_SIZE, 3))
    used = np.unique(quads)
    radiometry, _ = renderRays(
        field, batch.rays.subset(used), config.nSamples, rng, config.terminalDeltaM
    )
    points = np.zeros((len(batch), 3))
    points[used] = radiometry.surfacePoints(batch.rays.subset(used))
    return points[quads]
