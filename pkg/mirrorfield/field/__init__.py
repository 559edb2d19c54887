from mirrorfield.field.params import (
    FieldConfig,
    FieldParams,
    GradientBuffer,
    PointSample,
    DegenerateNormalError,
    DegenerateGradientError,
    mergeGradientBuffers,
)
from mirrorfield.field.query import (
    QueryRecord,
    queryDensity,
    queryRadiance,
    queryNormal,
    queryReflectionProb,
    analyticalNormal,
    accumulateGradients,
    evaluatePoints,
)

__all__ = [
    "FieldConfig",
    "FieldParams",
    "GradientBuffer",
    "PointSample",
    "DegenerateNormalError",
    "DegenerateGradientError",
    "mergeGradientBuffers",
    "QueryRecord",
    "queryDensity",
    "queryRadiance",
    "queryNormal",
    "queryReflectionProb",
    "analyticalNormal",
    "accumulateGradients",
    "evaluatePoints",
]
