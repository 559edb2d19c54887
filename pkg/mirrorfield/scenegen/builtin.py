import numpy as np

from mirrorfield.scenegen.scene import (
    AnalyticScene,
    AxisAlignedBox,
    DirectionalLight,
    Material,
    Primitive,
    Rectangle,
    Sphere,
)

ROOM_HALF_WIDTH_M = 2.0
ROOM_HEIGHT_M = 2.0
MIRROR_INSET_M = 0.02
BUILTIN_SCENES = ("mirror-box", "two-mirrors")

WALL_ALBEDOS = {
    "floor": (0.55, 0.5, 0.45),
    "wallPosX": (0.75, 0.25, 0.2),
    "wallNegX": (0.2, 0.6, 0.3),
    "wallPosY": (0.25, 0.35, 0.75),
    "wallNegY": (0.8, 0.7, 0.25),
}


class UnknownSceneError(ValueError):
    "Raised when a built-in scene name is not known"


def _room() -> "list[Primitive]":
    h = ROOM_HALF_WIDTH_M
    zMid = ROOM_HEIGHT_M / 2.0
    walls = [
        ("floor", (0.0, 0.0, 0.0), (0.0, 0.0, 1.0), (1.0, 0.0, 0.0), (h, h)),
        ("wallPosX", (h, 0.0, zMid), (-1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (h, zMid)),
        ("wallNegX", (-h, 0.0, zMid), (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (h, zMid)),
        ("wallPosY", (0.0, h, zMid), (0.0, -1.0, 0.0), (1.0, 0.0, 0.0), (h, zMid)),
        ("wallNegY", (0.0, -h, zMid), (0.0, 1.0, 0.0), (1.0, 0.0, 0.0), (h, zMid)),
    ]
    return [
        Primitive(Rectangle(c, n, u, e), Material.lambertian(WALL_ALBEDOS[name]), name)
        for name, c, n, u, e in walls
    ]


def _objects() -> "list[Primitive]":
    return [
        Primitive(
            Sphere((-0.6, 0.5, 0.4), 0.4), Material.lambertian((0.9, 0.85, 0.8)), "sphere"
        ),
        Primitive(
            AxisAlignedBox((0.2, -1.0, 0.0), (0.8, -0.4, 0.6)),
            Material.lambertian((0.35, 0.2, 0.5)),
            "box",
        ),
    ]


def _wallMirror(side: float, name: str) -> Primitive:
    x = side * (ROOM_HALF_WIDTH_M - MIRROR_INSET_M)
    return Primitive(
        Rectangle((x, 0.0, 1.0), (-side, 0.0, 0.0), (0.0, 1.0, 0.0), (0.8, 0.6)),
        Material.mirror(),
        name,
    )


def _scene(name: str, primitives: "list[Primitive]") -> AnalyticScene:
    return AnalyticScene(
        primitives=primitives,
        lights=[DirectionalLight(np.array([0.3, 0.2, 1.0]), (0.7, 0.7, 0.7))],
        ambient=(0.3, 0.3, 0.3),
        background=(0.05, 0.05, 0.1),
        name=name,
    )


def builtinScene(name: str) -> AnalyticScene:
    """One of the built-in scenes, inside a room of 5 lambertian walls with distinct
    albedos, a floor at z = 0 and an open top:
        - "mirror-box": a sphere, a box and one wall mirror in front of x = +2
        - "two-mirrors": the same room with facing mirrors in front of x = +2 and x = -2

    Raises:
        UnknownSceneError: for any other name
    """
    if name == "mirror-box":
        return _scene(name, _room() + _objects() + [_wallMirror(1.0, "mirror")])
    if name == "two-mirrors":
        return _scene(
            name,
            _room()
            + _objects()
            + [_wallMirror(1.0, "mirrorPosX"), _wallMirror(-1.0, "mirrorNegX")],
        )
    raise UnknownSceneError(
        f"Unknown scene '{name}', expected one of {', '.join(BUILTIN_SCENES)}"
    )

