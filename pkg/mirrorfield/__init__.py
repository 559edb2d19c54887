from mirrorfield.field import FieldConfig, FieldParams
from mirrorfield.render import Camera, ComposedScene, RenderConfig, renderImage, trace
from mirrorfield.scenegen import builtinScene, generateDataset, loadDataset, oracleTrace
from mirrorfield.train import TrainConfig, loadTrainConfig

__all__ = [
    "FieldConfig",
    "FieldParams",
    "Camera",
    "ComposedScene",
    "RenderConfig",
    "renderImage",
    "trace",
    "builtinScene",
    "generateDataset",
    "loadDataset",
    "oracleTrace",
    "TrainConfig",
    "loadTrainConfig",
]
