from dataclasses import dataclass
from typing import List

import numpy as np

from mirrorfield.render.camera import Ray
from mirrorfield.render.tracer import reflectDirections
from mirrorfield.scenegen.scene import AnalyticScene, Material

DEFAULT_ORACLE_DEPTH = 4
PRIMARY_T_MIN = 1e-9
SECONDARY_T_MIN = 1e-6


@dataclass
class OracleHit:
    """One surface hit of the reference tracer

    Args:
        t (float): Distance from the origin of the segment (m)
        point (np.ndarray): World position
        normal (np.ndarray): Unit normal facing the incoming segment
        material (Material): Material of the hit primitive
        primitive (int): Index of the primitive in the scene
    """

    t: float
    point: np.ndarray
    normal: np.ndarray
    material: Material
    primitive: int


def shadeLambertian(
    scene: AnalyticScene, points: np.ndarray, normals: np.ndarray, albedo: np.ndarray
) -> np.ndarray:
    """ambient * albedo + sum over lights of max(0, n.l) * albedo * intensity, each
    light tested with a binary shadow ray"""
    radiance = albedo * scene.ambient
    for light in scene.lights:
        cosine = np.maximum(0.0, normals @ light.direction)
        lit = cosine > 0
        if np.any(lit):
            towards = np.broadcast_to(light.direction, (int(np.sum(lit)), 3))
            blocked = scene.intersect(points[lit], towards, SECONDARY_T_MIN).hit
            visible = np.zeros(points.shape[0], dtype=bool)
            visible[np.flatnonzero(lit)[~blocked]] = True
            cosine = np.where(visible, cosine, 0.0)
        radiance = radiance + cosine[:, None] * albedo * light.intensity
    return radiance


def oracleTraceBatch(
    scene: AnalyticScene,
    origins: np.ndarray,
    dirs: np.ndarray,
    depth: int = DEFAULT_ORACLE_DEPTH,
) -> "tuple[np.ndarray, np.ndarray, np.ndarray]":
    """Whitted ray tracing of a batch of rays: lambertian hits are shaded, mirror
    hits continue along the reflected direction while bounces remain and show the
    background otherwise, misses show the background

    Args:
        scene (AnalyticScene): What to trace
        origins (np.ndarray): (R, 3) ray origins
        dirs (np.ndarray): (R, 3) unit directions
        depth (int, optional): Mirror bounces allowed. Defaults to 4

    Returns:
        tuple[np.ndarray, np.ndarray, np.ndarray]: (R, 3) colors, (R,) distance to\
            the first hit (inf on a miss) and (R,) whether the first hit is a mirror
    """
    if depth < 0:
        raise ValueError(f"Oracle depth must be nonnegative, got {depth}")
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    nRays = origins.shape[0]
    color = np.zeros((nRays, 3))
    tFirst = np.full(nRays, np.inf)
    mirrorFlag = np.zeros(nRays, dtype=bool)
    isMirror = np.array([p.material.isMirror for p in scene.primitives])
    albedo = np.stack([p.material.albedo for p in scene.primitives])

    alive = np.arange(nRays)
    currentOrigins, currentDirs = origins, dirs
    for bounce in range(depth + 1):
        hits = scene.intersect(
            currentOrigins, currentDirs, PRIMARY_T_MIN if bounce == 0 else SECONDARY_T_MIN
        )
        if bounce == 0:
            tFirst[:] = hits.t
            mirrorFlag[:] = hits.hit & isMirror[np.maximum(hits.primitive, 0)]
        missed = ~hits.hit
        color[alive[missed]] = scene.background
        mirror = hits.hit & isMirror[np.maximum(hits.primitive, 0)]
        diffuse = hits.hit & ~mirror
        if np.any(diffuse):
            points = currentOrigins[diffuse] + hits.t[diffuse, None] * currentDirs[diffuse]
            color[alive[diffuse]] = shadeLambertian(
                scene, points, hits.normal[diffuse], albedo[hits.primitive[diffuse]]
            )
        if bounce == depth:
            color[alive[mirror]] = scene.background
            break
        if not np.any(mirror):
            break
        points = currentOrigins[mirror] + hits.t[mirror, None] * currentDirs[mirror]
        currentDirs = reflectDirections(currentDirs[mirror], hits.normal[mirror])
        currentOrigins = points
        alive = alive[mirror]
    return color, tFirst, mirrorFlag


def oracleTrace(
    scene: AnalyticScene, ray: Ray, depth: int = DEFAULT_ORACLE_DEPTH
) -> "tuple[np.ndarray, float, bool]":
    """Reference color of one ray, with the distance to its first hit and whether
    that hit is a mirror

    Example:
      >>> from mirrorfield.scenegen.builtin import builtinScene
      >>> scene = builtinScene("mirror-box")
      >>> _, t, flag = oracleTrace(scene, Ray([0.0, 0.0, 1.0], [0.0, 0.0, 1.0], 0, 0.0, 10.0))
      >>> t, flag
      (inf, False)
    """
    color, tFirst, mirrorFlag = oracleTraceBatch(scene, ray.origin[None, :], ray.dir[None, :], depth)
    return color[0], float(tFirst[0]), bool(mirrorFlag[0])


def oraclePath(
    scene: AnalyticScene, ray: Ray, depth: int = DEFAULT_ORACLE_DEPTH
) -> "List[OracleHit]":
    """Surface hits along the path of one ray: every mirror it is reflected at and
    the surface it terminates on (if any)"""
    if depth < 0:
        raise ValueError(f"Oracle depth must be nonnegative, got {depth}")
    path: "list[OracleHit]" = []
    origin, direction = ray.origin, ray.dir
    for bounce in range(depth + 1):
        hits = scene.intersect(
            origin[None, :], direction[None, :], PRIMARY_T_MIN if bounce == 0 else SECONDARY_T_MIN
        )
        if not hits.hit[0]:
            break
        index = int(hits.primitive[0])
        point = origin + hits.t[0] * direction
        material = scene.primitives[index].material
        path.append(OracleHit(float(hits.t[0]), point, hits.normal[0].copy(), material, index))
        if not material.isMirror:
            break
        direction = reflectDirections(direction[None, :], hits.normal)[0]
        origin = point
    return path
