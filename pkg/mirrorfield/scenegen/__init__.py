from mirrorfield.scenegen.scene import (
    AnalyticScene,
    AxisAlignedBox,
    DirectionalLight,
    Material,
    Primitive,
    Rectangle,
    Sphere,
)
from mirrorfield.scenegen.oracle import OracleHit, oraclePath, oracleTrace, oracleTraceBatch
from mirrorfield.scenegen.builtin import BUILTIN_SCENES, UnknownSceneError, builtinScene
from mirrorfield.scenegen.dataset import (
    DatasetLayoutError,
    DatasetView,
    DegenerateOrbitError,
    OrbitSpec,
    SceneDataset,
    generateDataset,
    loadDataset,
    saveDataset,
)

__all__ = [
    "AnalyticScene",
    "AxisAlignedBox",
    "DirectionalLight",
    "Material",
    "Primitive",
    "Rectangle",
    "Sphere",
    "OracleHit",
    "oraclePath",
    "oracleTrace",
    "oracleTraceBatch",
    "BUILTIN_SCENES",
    "UnknownSceneError",
    "builtinScene",
    "DatasetLayoutError",
    "DatasetView",
    "DegenerateOrbitError",
    "OrbitSpec",
    "SceneDataset",
    "generateDataset",
    "loadDataset",
    "saveDataset",
]
