from mirrorfield.render.config import RenderConfig
from mirrorfield.render.camera import Camera, Ray, RayBatch, generateRays, lookAt
from mirrorfield.render.sampling import RayStreams, SampleSet, stratifiedSamples
from mirrorfield.render.volume import RayRadiometry, composite, renderPrimary
from mirrorfield.render.compose import (
    ComposedScene,
    RigidTransform,
    SceneEntry,
    Substitution,
    VirtualMirror,
    intersectVirtualMirror,
)
from mirrorfield.render.tracer import (
    WhittedTracer,
    reflectDir,
    spawnReflected,
    trace,
    traceComposed,
    traceRough,
    traceSubstituted,
)
from mirrorfield.render.image import FrameReport, RenderedFrame, renderImage

__all__ = [
    "RenderConfig",
    "Camera",
    "Ray",
    "RayBatch",
    "generateRays",
    "lookAt",
    "RayStreams",
    "SampleSet",
    "stratifiedSamples",
    "RayRadiometry",
    "composite",
    "renderPrimary",
    "ComposedScene",
    "RigidTransform",
    "SceneEntry",
    "Substitution",
    "VirtualMirror",
    "intersectVirtualMirror",
    "WhittedTracer",
    "reflectDir",
    "spawnReflected",
    "trace",
    "traceComposed",
    "traceRough",
    "traceSubstituted",
    "FrameReport",
    "RenderedFrame",
    "renderImage",
]
