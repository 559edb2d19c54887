from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from mirrorfield.render.camera import RayBatch, generateRayBatch
from mirrorfield.render.config import RenderConfig


@dataclass
class TrainBatch:
    """Camera rays with their supervision

    Args:
        rays (RayBatch): R camera rays (bounce 0)
        colors (np.ndarray): (R, 3) ground truth colors in [0, 1]
        mask (np.ndarray): (R,) mirror mask bits
        viewIndex (np.ndarray): (R,) dataset view of every ray
        pixels (np.ndarray): (R, 2) (row, col) of every ray
        component (np.ndarray): (R,) connected mirror region of mask rays within\
          their view, -1 for other rays
    """

    rays: RayBatch
    colors: np.ndarray
    mask: np.ndarray
    viewIndex: np.ndarray
    pixels: np.ndarray
    component: np.ndarray

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        mask = np.asarray(self.mask).reshape(-1)
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("TrainBatch mask must be binary")
        self.mask = mask.astype(bool)
        nRays = len(self.rays)
        for name in ("colors", "mask", "viewIndex", "pixels", "component"):
            if getattr(self, name).shape[0] != nRays:
                raise ValueError(
                    f"TrainBatch {name} has {getattr(self, name).shape[0]} entries "
                    f"for {nRays} rays"
                )

    def __len__(self):
        return len(self.rays)

    def subset(self, index) -> "TrainBatch":
        return TrainBatch(
            rays=self.rays.subset(index),
            colors=self.colors[index],
            mask=self.mask[index],
            viewIndex=self.viewIndex[index],
            pixels=self.pixels[index],
            component=self.component[index],
        )


def maskComponents(mask: np.ndarray) -> np.ndarray:
    """Label the 8-connected regions of a mirror mask, 0-based; -1 outside the
    mask"""
    labels, _ = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    return labels.astype(np.int64) - 1


def sampleTrainBatch(
    views: Sequence,
    nRays: int,
    rng: np.random.Generator,
    viewsPerBatch: int = 4,
    renderConfig: "RenderConfig|None" = None,
    components: "Optional[Sequence[np.ndarray]]" = None,
) -> TrainBatch:
    """Draw a batch of camera rays from a few random views

    Args:
        views: Dataset views with camera, image and mask attributes
        nRays (int): Rays in the batch
        rng (np.random.Generator): Source of the view and pixel choice
        viewsPerBatch (int, optional): Views the rays are drawn from. Defaults to 4
        renderConfig (RenderConfig, optional): Sampling range of the rays
        components (list[np.ndarray], optional): Mask components per view, see\
          maskComponents. Computed when missing

    Returns:
        TrainBatch
    """
    if nRays < 1:
        raise ValueError(f"A batch needs at least one ray, got {nRays}")
    nViews = len(views)
    if nViews == 0:
        raise ValueError("Cannot draw a batch from a dataset without views")
    chosenViews = np.sort(
        rng.choice(nViews, size=min(viewsPerBatch, nViews), replace=False)
    )
    perView = np.full(chosenViews.shape[0], nRays // chosenViews.shape[0])
    perView[: nRays - int(np.sum(perView))] += 1
    parts = []
    for viewIndex, count in zip(chosenViews, perView):
        if count == 0:
            continue
        view = views[int(viewIndex)]
        camera = view.camera
        nPixels = camera.width * camera.height
        flat = rng.choice(nPixels, size=int(count), replace=int(count) > nPixels)
        pixels = np.stack([flat // camera.width, flat % camera.width], axis=1)
        labels = (
            maskComponents(view.mask) if components is None else components[int(viewIndex)]
        )
        parts.append(
            (
                generateRayBatch(camera, pixels, renderConfig),
                view.image[pixels[:, 0], pixels[:, 1]],
                view.mask[pixels[:, 0], pixels[:, 1]],
                np.full(int(count), int(viewIndex), dtype=np.int64),
                pixels,
                labels[pixels[:, 0], pixels[:, 1]],
            )
        )
    rays = RayBatch(
        origins=np.concatenate([p[0].origins for p in parts]),
        dirs=np.concatenate([p[0].dirs for p in parts]),
        bounce=np.concatenate([p[0].bounce for p in parts]),
        tMin=np.concatenate([p[0].tMin for p in parts]),
        tMax=np.concatenate([p[0].tMax for p in parts]),
    )
    return TrainBatch(
        rays=rays,
        colors=np.concatenate([p[1] for p in parts]),
        mask=np.concatenate([p[2] for p in parts]),
        viewIndex=np.concatenate([p[3] for p in parts]),
        pixels=np.concatenate([p[4] for p in parts]),
        component=np.concatenate([p[5] for p in parts]),
    )
