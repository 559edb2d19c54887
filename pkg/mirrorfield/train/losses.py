"""Loss terms of the training objective. Every term is a sum over rays (or
samples), except plane consistency which averages over quads. Each loss has a
companion returning its gradient with respect to the predictions."""
from dataclasses import dataclass, fields

import numpy as np

from mirrorfield.train.schedule import LossWeights

DEFAULT_BCE_EPS = 1e-6


def _pair(pred, gt) -> "tuple[np.ndarray, np.ndarray]":
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise ValueError(
            f"Got {pred.shape[0]} predicted and {gt.shape[0]} ground truth colors"
        )
    return pred, gt


def _binaryMask(mask, nRays: int) -> np.ndarray:
    mask = np.asarray(mask).reshape(-1)
    if mask.shape[0] != nRays:
        raise ValueError(f"Got {mask.shape[0]} mask bits for {nRays} rays")
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("Mirror masks must be binary")
    return mask.astype(bool)


def lossPhotometric(pred, gt) -> float:
    """Sum over rays of the squared color error

    >>> lossPhotometric([[1.0, 1.0, 1.0]], [[0.0, 0.0, 0.0]])
    3.0
    """
    pred, gt = _pair(pred, gt)
    return float(np.sum((pred - gt) ** 2))


def photometricGrad(pred, gt) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    return 2.0 * (pred - gt)


def maskedTargets(gt, mask, k) -> np.ndarray:
    """Ground truth colors with mirror pixels replaced by the constant color k"""
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    mask = _binaryMask(mask, gt.shape[0])
    return np.where(mask[:, None], np.asarray(k, dtype=np.float64)[None, :], gt)


def lossMaskedPhotometric(pred, gt, mask, k=(0.0, 0.0, 0.0)) -> float:
    """Photometric loss where mirror rays are pulled towards the constant color k
    instead of their ground truth"""
    pred, gt = _pair(pred, gt)
    return lossPhotometric(pred, maskedTargets(gt, mask, k))


def maskedPhotometricGrad(pred, gt, mask, k=(0.0, 0.0, 0.0)) -> np.ndarray:
    pred, gt = _pair(pred, gt)
    return photometricGrad(pred, maskedTargets(gt, mask, k))


def lossMaskBce(predM, gtM, clampEps: float = DEFAULT_BCE_EPS) -> float:
    """Binary cross entropy between rendered reflection probabilities (clamped to
    [eps, 1 - eps]) and mirror mask bits, summed over rays

    >>> round(lossMaskBce([0.5], [1]), 4)
    0.6931
    """
    predM = np.asarray(predM, dtype=np.float64).reshape(-1)
    gt = _binaryMask(gtM, predM.shape[0]).astype(np.float64)
    p = np.clip(predM, clampEps, 1.0 - clampEps)
    return float(-np.sum(gt * np.log(p) + (1.0 - gt) * np.log1p(-p)))


def maskBceGrad(predM, gtM, clampEps: float = DEFAULT_BCE_EPS) -> np.ndarray:
    predM = np.asarray(predM, dtype=np.float64).reshape(-1)
    gt = _binaryMask(gtM, predM.shape[0]).astype(np.float64)
    inside = (predM > clampEps) & (predM < 1.0 - clampEps)
    p = np.clip(predM, clampEps, 1.0 - clampEps)
    return np.where(inside, -gt / p + (1.0 - gt) / (1.0 - p), 0.0)


def _quads(quads) -> np.ndarray:
    quads = np.asarray(quads, dtype=np.float64)
    if quads.size == 0:
        return np.zeros((0, 4, 3))
    return quads.reshape(-1, 4, 3)


def tripleProducts(quads) -> np.ndarray:
    quads = _quads(quads)
    a, b, c, d = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    return np.sum(np.cross(b - a, c - a) * (d - a), axis=1)


def lossPlaneConsistency(quads) -> float:
    """Mean absolute scalar triple product (AB x AC) . AD over quads of points
    (A, B, C, D). An empty list of quads gives 0

    >>> lossPlaneConsistency([[[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]])
    1.0
    """
    products = tripleProducts(quads)
    if products.shape[0] == 0:
        return 0.0
    return float(np.mean(np.abs(products)))


def planeConsistencyGrad(quads) -> np.ndarray:
    """Gradient with respect to the quad points, (Q, 4, 3)"""
    quads = _quads(quads)
    nQuads = quads.shape[0]
    if nQuads == 0:
        return np.zeros((0, 4, 3))
    a, b, c, d = quads[:, 0], quads[:, 1], quads[:, 2], quads[:, 3]
    ab, ac, ad = b - a, c - a, d - a
    scale = (np.sign(np.sum(np.cross(ab, ac) * ad, axis=1)) / nQuads)[:, None]
    gradB = np.cross(ac, ad) * scale
    gradC = np.cross(ad, ab) * scale
    gradD = np.cross(ab, ac) * scale
    gradA = -(gradB + gradC + gradD)
    return np.stack([gradA, gradB, gradC, gradD], axis=1)


def lossForwardNormal(normals, rayDirs) -> float:
    """Penalty sum max(0, n . d)^2 on normals facing away from the viewer"""
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    rayDirs = np.asarray(rayDirs, dtype=np.float64).reshape(-1, 3)
    if normals.shape != rayDirs.shape:
        raise ValueError("Got different numbers of normals and ray directions")
    return float(np.sum(np.maximum(0.0, np.sum(normals * rayDirs, axis=1)) ** 2))


def forwardNormalGrad(normals, rayDirs) -> np.ndarray:
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    rayDirs = np.asarray(rayDirs, dtype=np.float64).reshape(-1, 3)
    facing = np.maximum(0.0, np.sum(normals * rayDirs, axis=1))
    return 2.0 * facing[:, None] * rayDirs


def lossNormalSupervision(smoothed, analytic, weights) -> float:
    """Weighted squared distance sum w_i |n_smoothed_i - n_analytic_i|^2. The
    analytic normals are targets: no gradient flows into them"""
    smoothed = np.asarray(smoothed, dtype=np.float64).reshape(-1, 3)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1, 3)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if not smoothed.shape == analytic.shape or weights.shape[0] != smoothed.shape[0]:
        raise ValueError("Normals and weights must have matching lengths")
    return float(np.sum(weights * np.sum((smoothed - analytic) ** 2, axis=1)))


def normalSupervisionGrad(smoothed, analytic, weights) -> "tuple[np.ndarray, np.ndarray]":
    """Gradients with respect to the smoothed normals and to the weights"""
    smoothed = np.asarray(smoothed, dtype=np.float64).reshape(-1, 3)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1, 3)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    difference = smoothed - analytic
    return 2.0 * weights[:, None] * difference, np.sum(difference**2, axis=1)


@dataclass
class LossParts:
    """Values of the loss terms of one step"""

    photometric: float = 0.0
    mask: float = 0.0
    planeConsistency: float = 0.0
    normalSupervision: float = 0.0
    normalRegularizer: float = 0.0

    def toJson(self) -> "dict[str, float]":
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def isFinite(self) -> bool:
        return all(np.isfinite(v) for v in self.toJson().values())


def totalLoss(parts: LossParts, weights: LossWeights) -> float:
    """Weighted sum of the loss terms

    >>> totalLoss(LossParts(photometric=3.0), LossWeights(2.0, 0.0, 0.0, 0.0, 0.0))
    6.0
    """
    return float(
        weights.lambdaC * parts.photometric
        + weights.lambdaM * parts.mask
        + weights.lambdaPc * parts.planeConsistency
        + weights.lambdaN * parts.normalSupervision
        + weights.lambdaNreg * parts.normalRegularizer
    )
