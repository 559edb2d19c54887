from dataclasses import dataclass

import numpy as np

# (dx, dy, dz) offsets of the 8 cell corners, corner c = 4*dx + 2*dy + dz
CORNER_OFFSETS = np.array(
    [[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=np.int64
)


@dataclass
class TrilinearRecord:
    """Where a batch of P points falls in a lattice: the flat indices of the 8
    surrounding lattice points, their interpolation weights and the derivative of
    those weights with respect to the world position. Points outside the bounding
    box get all-zero weights, so they read 0 and scatter nothing.
    """

    shape: "tuple[int, int, int]"
    cornerIndex: np.ndarray  # (P, 8) int64
    cornerWeight: np.ndarray  # (P, 8)
    cornerWeightGrad: np.ndarray  # (P, 8, 3)
    inside: np.ndarray  # (P,) bool


def locate(
    shape: "tuple[int, int, int]",
    bboxMin: np.ndarray,
    bboxMax: np.ndarray,
    points: np.ndarray,
) -> TrilinearRecord:
    """Compute the trilinear footprint of points in a lattice spanning a box

    Args:
        shape (tuple[int, int, int]): Lattice resolution per axis
        bboxMin (np.ndarray): Minimum corner of the box
        bboxMax (np.ndarray): Maximum corner of the box
        points (np.ndarray): (P, 3) world positions

    Returns:
        TrilinearRecord
    """
    res = np.asarray(shape, dtype=np.int64)
    extent = bboxMax - bboxMin
    scale = (res - 1) / extent
    inside = np.all((points >= bboxMin) & (points <= bboxMax), axis=1)
    u = (points - bboxMin) * scale
    u = np.where(inside[:, None], u, 0.0)
    i0 = np.clip(np.floor(u).astype(np.int64), 0, res - 2)
    frac = u - i0
    # factors[b] is the 1D weight of the lower (b=0) or upper (b=1) neighbour
    factors = np.stack([1.0 - frac, frac])  # (2, P, 3)
    slopes = np.array([-1.0, 1.0])[:, None, None] * scale[None, None, :]  # (2, 1, 3)
    nPoints = points.shape[0]
    cornerIndex = np.empty((nPoints, 8), dtype=np.int64)
    cornerWeight = np.empty((nPoints, 8))
    cornerWeightGrad = np.empty((nPoints, 8, 3))
    for c, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        fx, fy, fz = factors[ox, :, 0], factors[oy, :, 1], factors[oz, :, 2]
        cornerIndex[:, c] = ((i0[:, 0] + ox) * res[1] + (i0[:, 1] + oy)) * res[2] + (
            i0[:, 2] + oz
        )
        cornerWeight[:, c] = fx * fy * fz
        cornerWeightGrad[:, c, 0] = slopes[ox, 0, 0] * fy * fz
        cornerWeightGrad[:, c, 1] = fx * slopes[oy, 0, 1] * fz
        cornerWeightGrad[:, c, 2] = fx * fy * slopes[oz, 0, 2]
    cornerWeight[~inside] = 0.0
    cornerWeightGrad[~inside] = 0.0
    return TrilinearRecord(
        shape=tuple(int(r) for r in res),  # type: ignore
        cornerIndex=cornerIndex,
        cornerWeight=cornerWeight,
        cornerWeightGrad=cornerWeightGrad,
        inside=inside,
    )


def _flatChannels(lattice: np.ndarray, shape: "tuple[int, int, int]") -> np.ndarray:
    nCells = shape[0] * shape[1] * shape[2]
    return lattice.reshape(nCells, -1)


def lookup(lattice: np.ndarray, record: TrilinearRecord) -> np.ndarray:
    """Interpolate a lattice at the recorded points

    Returns:
        np.ndarray: (P, C) values, C being the product of the trailing lattice axes
    """
    flat = _flatChannels(lattice, record.shape)
    corners = flat[record.cornerIndex]  # (P, 8, C)
    return np.einsum("pk,pkc->pc", record.cornerWeight, corners)


def spatialVjp(
    lattice: np.ndarray, record: TrilinearRecord, cotangent: np.ndarray
) -> np.ndarray:
    """Vector-Jacobian product of the interpolated values with respect to the point
    positions

    Args:
        lattice (np.ndarray): The interpolated lattice
        record (TrilinearRecord): Footprint of the points
        cotangent (np.ndarray): (P, C) cotangent of the interpolated values

    Returns:
        np.ndarray: (P, 3) cotangent of the positions
    """
    flat = _flatChannels(lattice, record.shape)
    corners = flat[record.cornerIndex]  # (P, 8, C)
    perCorner = np.einsum("pkc,pc->pk", corners, cotangent)
    return np.einsum("pk,pkd->pd", perCorner, record.cornerWeightGrad)


def scatter(gradLattice: np.ndarray, record: TrilinearRecord, cotangent: np.ndarray):
    """Add the vector-Jacobian product of the interpolation with respect to the
    lattice values into gradLattice (in place)

    Args:
        gradLattice (np.ndarray): Accumulator with the shape of the lattice
        record (TrilinearRecord): Footprint of the points
        cotangent (np.ndarray): (P, C) cotangent of the interpolated values
    """
    flat = _flatChannels(gradLattice, record.shape)
    if not np.shares_memory(flat, gradLattice):
        raise ValueError("Gradient lattices must be contiguous")
    rows = record.inside
    if not np.any(rows):
        return
    index = record.cornerIndex[rows].ravel()
    weight = record.cornerWeight[rows]
    cot = cotangent[rows]
    for channel in range(flat.shape[1]):
        contributions = (weight * cot[:, channel : channel + 1]).ravel()
        flat[:, channel] += np.bincount(
            index, weights=contributions, minlength=flat.shape[0]
        )
