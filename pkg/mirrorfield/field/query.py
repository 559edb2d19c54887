from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from mirrorfield.field import interp
from mirrorfield.field.params import (
    DegenerateGradientError,
    DegenerateNormalError,
    FieldParams,
    GradientBuffer,
    PointSample,
)
from mirrorfield.field.sh import shBasis, shBasisGrad

NORMAL_NORM_EPS = 1e-8
GRADIENT_NORM_EPS = 1e-8
UNIT_TOLERANCE = 1e-6

QUERY_KINDS = ("density", "radiance", "normal", "reflprob")
_LATTICE_OF_KIND = {
    "density": "densityGrid",
    "radiance": "radianceGrid",
    "normal": "normalGrid",
    "reflprob": "reflprobGrid",
}


@dataclass
class QueryRecord:
    """Everything a forward query needs to remember for its backward pass.

    raw holds the interpolated pre-activation values (P, C), output the returned
    values. Radiance records also keep the SH basis at the query directions and
    the interpolated coefficients; normal records keep the raw vector norms.
    """

    kind: str
    points: np.ndarray
    trilinear: interp.TrilinearRecord
    raw: np.ndarray
    output: np.ndarray
    dirs: Optional[np.ndarray] = None
    basis: Optional[np.ndarray] = None
    rawNorm: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None

    @property
    def lattice(self) -> str:
        return _LATTICE_OF_KIND[self.kind]


def asPoints(x) -> "tuple[np.ndarray, bool]":
    """Coerce a point or a batch of points to a (P, 3) float array

    Returns:
        tuple[np.ndarray, bool]: The points and whether a single point was passed
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = arr.reshape(-1, 3)
    if not np.all(np.isfinite(arr)):
        raise ValueError("Query points must be finite")
    return arr, single


def _unwrap(values: np.ndarray, single: bool):
    return values[0] if single else values


def softplus(raw: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, raw)


def _densityRecord(params: FieldParams, points: np.ndarray) -> QueryRecord:
    trilinear = interp.locate(
        params.densityGrid.shape, params.bboxMin, params.bboxMax, points
    )
    raw = interp.lookup(params.densityGrid, trilinear)[:, 0]
    sigma = np.where(trilinear.inside, softplus(raw), 0.0)
    return QueryRecord("density", points, trilinear, raw, sigma)


def _reflprobRecord(params: FieldParams, points: np.ndarray) -> QueryRecord:
    trilinear = interp.locate(
        params.reflprobGrid.shape, params.bboxMin, params.bboxMax, points
    )
    raw = interp.lookup(params.reflprobGrid, trilinear)[:, 0]
    m = np.where(trilinear.inside, expit(raw), 0.0)
    return QueryRecord("reflprob", points, trilinear, raw, m)


def _radianceRecord(
    params: FieldParams, points: np.ndarray, dirs: np.ndarray
) -> QueryRecord:
    trilinear = interp.locate(
        params.radianceGrid.shape[:3], params.bboxMin, params.bboxMax, points
    )
    nCoefficients = params.radianceGrid.shape[4]
    coefficients = interp.lookup(params.radianceGrid, trilinear).reshape(
        -1, 3, nCoefficients
    )
    basis = shBasis(dirs, params.shDegree)
    logits = np.einsum("pck,pk->pc", coefficients, basis)
    rgb = expit(logits)
    return QueryRecord(
        "radiance", points, trilinear, coefficients, rgb, dirs=dirs, basis=basis
    )


def _normalRecord(params: FieldParams, points: np.ndarray) -> QueryRecord:
    trilinear = interp.locate(
        params.normalGrid.shape[:3], params.bboxMin, params.bboxMax, points
    )
    raw = interp.lookup(params.normalGrid, trilinear)
    rawNorm = np.linalg.norm(raw, axis=1)
    valid = rawNorm >= NORMAL_NORM_EPS
    normal = np.zeros_like(raw)
    normal[valid] = raw[valid] / rawNorm[valid, None]
    return QueryRecord(
        "normal", points, trilinear, raw, normal, rawNorm=rawNorm, valid=valid
    )


def queryDensity(params: FieldParams, x, withRecord: bool = False):
    """Density (1/m) at one or more world points: softplus of the trilinearly
    interpolated raw density inside the bounding box, exactly 0 outside

    Args:
        params (FieldParams): Scene parameters
        x (array-like): A point (3,) or points (P, 3)
        withRecord (bool, optional): Also return the QueryRecord needed by
            accumulateGradients. Defaults to False

    Returns:
        float|np.ndarray (and QueryRecord when withRecord is set)
    """
    points, single = asPoints(x)
    record = _densityRecord(params, points)
    value = _unwrap(record.output, single)
    return (value, record) if withRecord else value


def queryReflectionProb(params: FieldParams, x, withRecord: bool = False):
    """Reflection probability in [0, 1] at one or more world points; 0 outside
    the bounding box"""
    points, single = asPoints(x)
    record = _reflprobRecord(params, points)
    value = _unwrap(record.output, single)
    return (value, record) if withRecord else value


def _unitDirections(d, nPoints: int) -> np.ndarray:
    dirs = np.asarray(d, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(dirs)):
        raise ValueError("Directions must be finite")
    norms = np.linalg.norm(dirs, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
        raise ValueError("Directions must have unit length (tolerance 1e-6)")
    if dirs.shape[0] == 1 and nPoints != 1:
        dirs = np.repeat(dirs, nPoints, axis=0)
    if dirs.shape[0] != nPoints:
        raise ValueError(
            f"Got {dirs.shape[0]} directions for {nPoints} points"
        )
    return dirs


def queryRadiance(params: FieldParams, x, d, withRecord: bool = False):
    """Color in (0, 1)^3 seen at x from direction d: per channel the sigmoid of the
    SH expansion at d, with coefficients interpolated trilinearly

    Args:
        params (FieldParams): Scene parameters
        x (array-like): A point (3,) or points (P, 3)
        d (array-like): Unit direction(s), (3,) or (P, 3)
        withRecord (bool, optional): Also return the QueryRecord. Defaults to False
    """
    points, single = asPoints(x)
    dirs = _unitDirections(d, points.shape[0])
    record = _radianceRecord(params, points, dirs)
    value = _unwrap(record.output, single)
    return (value, record) if withRecord else value


def queryNormal(params: FieldParams, x, withRecord: bool = False):
    """Smoothed surface normal: the interpolated raw vector normalised to unit
    length. Points must lie inside the bounding box

    Raises:
        DegenerateNormalError: when the interpolated raw vector is shorter than 1e-8
    """
    points, single = asPoints(x)
    inside = np.all((points >= params.bboxMin) & (points <= params.bboxMax), axis=1)
    if not np.all(inside):
        raise ValueError("queryNormal points must lie inside the bounding box")
    record = _normalRecord(params, points)
    if not np.all(record.valid):
        bad = points[~record.valid][0]
        raise DegenerateNormalError(
            f"Degenerate normal at {bad.tolist()}: interpolated raw vector has norm "
            f"{record.rawNorm[~record.valid][0]:.3g}"
        )
    value = _unwrap(record.output, single)
    return (value, record) if withRecord else value


def evaluatePoints(
    params: FieldParams, points: np.ndarray, dirs: np.ndarray
) -> "tuple[PointSample, dict[str, QueryRecord]]":
    """Evaluate all four fields at a batch of points, without input validation.
    Degenerate normals are returned as zero vectors and flagged

    Args:
        params (FieldParams): Scene parameters
        points (np.ndarray): (P, 3) world points
        dirs (np.ndarray): (P, 3) unit view directions

    Returns:
        tuple[PointSample, dict[str, QueryRecord]]: The values and the records,
            keyed by query kind
    """
    records = {
        "density": _densityRecord(params, points),
        "radiance": _radianceRecord(params, points, dirs),
        "normal": _normalRecord(params, points),
        "reflprob": _reflprobRecord(params, points),
    }
    sample = PointSample(
        sigma=records["density"].output,
        rgb=records["radiance"].output,
        normal=records["normal"].output,
        m=records["reflprob"].output,
        normalValid=records["normal"].valid,  # type: ignore
    )
    return sample, records


def _outputShape(record: QueryRecord) -> "tuple[int, ...]":
    return record.output.shape


def _rawCotangent(record: QueryRecord, cotangent: np.ndarray) -> np.ndarray:
    """Pull the cotangent of the query output back to the interpolated raw values,
    flattened to (P, C)"""
    if record.kind == "density":
        dRaw = cotangent * expit(record.raw) * record.trilinear.inside
        return dRaw[:, None]
    if record.kind == "reflprob":
        m = expit(record.raw)
        dRaw = cotangent * m * (1.0 - m) * record.trilinear.inside
        return dRaw[:, None]
    if record.kind == "radiance":
        rgb = record.output
        dLogit = cotangent * rgb * (1.0 - rgb)
        dCoefficients = dLogit[:, :, None] * record.basis[:, None, :]  # type: ignore
        return dCoefficients.reshape(dCoefficients.shape[0], -1)
    if record.kind == "normal":
        normal = record.output
        valid = record.valid
        dRaw = np.zeros_like(normal)
        radial = np.sum(normal * cotangent, axis=1, keepdims=True)
        dRaw[valid] = (cotangent[valid] - normal[valid] * radial[valid]) / record.rawNorm[
            valid, None
        ]  # type: ignore
        return dRaw
    raise ValueError(f"Unknown query kind '{record.kind}'")


def _checkCotangent(record: QueryRecord, cotangent) -> np.ndarray:
    cot = np.asarray(cotangent, dtype=np.float64)
    expected = _outputShape(record)
    if cot.shape != expected:
        if cot.size == int(np.prod(expected)) and cot.ndim <= 1 and len(expected) == 2:
            cot = cot.reshape(expected)
        elif cot.ndim == 0 and expected == (1,):
            cot = cot.reshape(expected)
        else:
            raise ValueError(
                f"Cotangent shape {cot.shape} does not match the query output "
                f"shape {expected}"
            )
    return cot


def accumulateGradients(
    params: FieldParams, grad: GradientBuffer, record: QueryRecord, cotangent
):
    """Add the vector-Jacobian product of a recorded query with respect to the
    lattice it reads into grad. Repeated calls add up

    Args:
        params (FieldParams): The parameters the query was evaluated on
        grad (GradientBuffer): Accumulators, shaped like params
        record (QueryRecord): Record returned by a query with withRecord=True
        cotangent (array-like): Cotangent with the shape of the query output
    """
    grad.checkShapes(params)
    cot = _checkCotangent(record, cotangent)
    dRaw = _rawCotangent(record, cot)
    interp.scatter(getattr(grad, record.lattice), record.trilinear, dRaw)


def pointCotangent(params: FieldParams, record: QueryRecord, cotangent) -> np.ndarray:
    """Vector-Jacobian product of a recorded query with respect to the query
    positions

    Returns:
        np.ndarray: (P, 3)
    """
    cot = _checkCotangent(record, cotangent)
    dRaw = _rawCotangent(record, cot)
    return interp.spatialVjp(getattr(params, record.lattice), record.trilinear, dRaw)


def directionCotangent(record: QueryRecord, cotangent) -> np.ndarray:
    """Vector-Jacobian product of a recorded radiance query with respect to the
    (unnormalised) view directions

    Returns:
        np.ndarray: (P, 3)
    """
    if record.kind != "radiance":
        raise ValueError("Only radiance queries depend on a direction")
    cot = _checkCotangent(record, cotangent)
    rgb = record.output
    dLogit = cot * rgb * (1.0 - rgb)
    shDegree = int(round(np.sqrt(record.raw.shape[2]))) - 1
    basisGrad = shBasisGrad(record.dirs, shDegree)  # type: ignore
    return np.einsum("pc,pck,pkd->pd", dLogit, record.raw, basisGrad)


def defaultNormalStep(params: FieldParams) -> float:
    """Finite-difference step of analytical normals: half the smallest density
    cell size"""
    return 0.5 * float(np.min(params.cellSize("densityGrid")))


@dataclass
class AnalyticNormalRecord:
    """The six density queries behind a batch of central-difference normals"""

    step: float
    plus: "list[QueryRecord]"
    minus: "list[QueryRecord]"
    gradient: np.ndarray
    gradientNorm: np.ndarray
    normal: np.ndarray
    valid: np.ndarray


def analyticNormalsBatch(
    params: FieldParams, points: np.ndarray, step: "float|None" = None
) -> AnalyticNormalRecord:
    """Central-difference normals n = -grad(sigma) / |grad(sigma)| at a batch of
    points, without raising. Points closer than one step to a bounding box face,
    or with a vanishing gradient, are flagged invalid and get a zero normal
    """
    h = defaultNormalStep(params) if step is None else float(step)
    plus, minus = [], []
    gradient = np.zeros_like(points)
    for axis in range(3):
        offset = np.zeros(3)
        offset[axis] = h
        plusRecord = _densityRecord(params, points + offset)
        minusRecord = _densityRecord(params, points - offset)
        plus.append(plusRecord)
        minus.append(minusRecord)
        gradient[:, axis] = (plusRecord.output - minusRecord.output) / (2.0 * h)
    gradientNorm = np.linalg.norm(gradient, axis=1)
    margin = np.all(
        (points - h >= params.bboxMin) & (points + h <= params.bboxMax), axis=1
    )
    valid = margin & (gradientNorm >= GRADIENT_NORM_EPS)
    normal = np.zeros_like(points)
    normal[valid] = -gradient[valid] / gradientNorm[valid, None]
    return AnalyticNormalRecord(h, plus, minus, gradient, gradientNorm, normal, valid)


def accumulateAnalyticNormalGradients(
    params: FieldParams,
    grad: GradientBuffer,
    record: AnalyticNormalRecord,
    cotangent: np.ndarray,
):
    """Backward pass of analyticNormalsBatch into the density lattice"""
    valid = record.valid
    normal = record.normal
    cot = np.where(valid[:, None], cotangent, 0.0)
    radial = np.sum(normal * cot, axis=1, keepdims=True)
    safeNorm = np.where(valid, record.gradientNorm, 1.0)[:, None]
    dGradient = -(cot - normal * radial) / safeNorm
    for axis in range(3):
        dDensity = dGradient[:, axis] / (2.0 * record.step)
        accumulateGradients(params, grad, record.plus[axis], dDensity)
        accumulateGradients(params, grad, record.minus[axis], -dDensity)


def analyticalNormal(params: FieldParams, x, step: "float|None" = None):
    """Normal derived from the density field, n = -grad(sigma) / |grad(sigma)|, with
    the gradient taken by central differences on queryDensity

    Args:
        params (FieldParams): Scene parameters
        x (array-like): A point (3,) or points (P, 3), at least one step away from
            every bounding box face
        step (float, optional): Finite-difference step (m). Defaults to half the
            density cell size

    Raises:
        DegenerateGradientError: when |grad(sigma)| < 1e-8
    """
    points, single = asPoints(x)
    record = analyticNormalsBatch(params, points, step)
    margin = np.all(
        (points - record.step >= params.bboxMin)
        & (points + record.step <= params.bboxMax),
        axis=1,
    )
    if not np.all(margin):
        raise ValueError(
            "analyticalNormal points must lie at least one step inside the bounding box"
        )
    if not np.all(record.valid):
        bad = np.flatnonzero(~record.valid)[0]
        raise DegenerateGradientError(
            f"Density gradient vanishes at {points[bad].tolist()} "
            f"(norm {record.gradientNorm[bad]:.3g})"
        )
    return _unwrap(record.normal, single)
