from dataclasses import dataclass, field
import logging
from typing import List, Optional

import numpy as np
from scipy import ndimage

from mirrorfield.pool import WorkerPool
from mirrorfield.render.config import RenderConfig
from mirrorfield.render.image import renderImage

PSNR_CAP_DB = 99.0
SSIM_SIGMA = 1.5
SSIM_WINDOW = 11
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
OMITTED_METRICS = ("LPIPS",)


class EmptyMaskError(ValueError):
    "Raised when a masked metric is asked for a mask without pixels"


def _images(a, b) -> "tuple[np.ndarray, np.ndarray]":
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"Images differ in shape: {a.shape} and {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.ndim != 3:
        raise ValueError(f"Expected (H, W) or (H, W, C) images, got {a.shape}")
    return a, b


def _mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask)
    if mask.shape != shape:
        raise ValueError(f"Mask of shape {mask.shape} does not match images of {shape}")
    mask = mask.astype(bool)
    if not np.any(mask):
        raise EmptyMaskError("The mask selects no pixels")
    return mask


def psnr(a, b, mask=None) -> float:
    """Peak signal to noise ratio 10 log10(1 / MSE) of images in [0, 1], over the
    masked pixels when a mask is given. Identical images give 99 dB

    >>> round(psnr(np.zeros((2, 2, 3)), np.full((2, 2, 3), 0.1)), 6)
    20.0
    """
    a, b = _images(a, b)
    mask = _mask(mask, a.shape[:2])
    mse = float(np.mean((a[mask] - b[mask]) ** 2))
    if mse <= 10.0 ** (-PSNR_CAP_DB / 10.0):
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def ssimMap(a, b) -> np.ndarray:
    """Local SSIM per pixel and channel, with Gaussian windows of standard
    deviation 1.5 pixels truncated to 11 x 11"""
    a, b = _images(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(
            f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, "
            f"got {a.shape[1]}x{a.shape[0]}"
        )
    truncate = (SSIM_WINDOW // 2) / SSIM_SIGMA

    def blur(x):
        return np.stack(
            [
                ndimage.gaussian_filter(x[:, :, c], SSIM_SIGMA, mode="reflect", truncate=truncate)
                for c in range(x.shape[2])
            ],
            axis=2,
        )

    muA, muB = blur(a), blur(b)
    varA = blur(a * a) - muA**2
    varB = blur(b * b) - muB**2
    covariance = blur(a * b) - muA * muB
    numerator = (2.0 * muA * muB + SSIM_C1) * (2.0 * covariance + SSIM_C2)
    denominator = (muA**2 + muB**2 + SSIM_C1) * (varA + varB + SSIM_C2)
    return numerator / denominator


def ssim(a, b, mask=None) -> float:
    """Mean structural similarity over the channels and over the window centers
    selected by mask"""
    localSsim = ssimMap(a, b)
    mask = _mask(mask, localSsim.shape[:2])
    return float(np.mean(localSsim[mask]))


def mirrorDepthMae(predDepth, gtDepth, mask) -> float:
    """Mean absolute depth error over the masked pixels (m)

    Raises:
        EmptyMaskError: when the mask selects nothing
    """
    predDepth = np.asarray(predDepth, dtype=np.float64)
    gtDepth = np.asarray(gtDepth, dtype=np.float64)
    if predDepth.shape != gtDepth.shape:
        raise ValueError(f"Depth maps differ in shape: {predDepth.shape} and {gtDepth.shape}")
    if mask is None:
        raise EmptyMaskError("mirrorDepthMae needs a mask")
    mask = _mask(mask, predDepth.shape)
    return float(np.mean(np.abs(predDepth[mask] - gtDepth[mask])))


@dataclass
class ViewMetrics:
    """Metrics of one view. Inside-mask values are None for views without mirror
    pixels"""

    view: int
    psnr: float
    ssim: float
    pixels: int
    maskPixels: int
    psnrMask: Optional[float] = None
    ssimMask: Optional[float] = None
    mirrorDepthMaeM: Optional[float] = None
    degeneratePixels: int = 0

    def toJson(self) -> dict:
        return dict(self.__dict__)


def _mean(values) -> Optional[float]:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if len(values) > 0 else None


@dataclass
class MetricsReport:
    """Per-view and mean image metrics of a rendered dataset. Inside-mask metrics
    use the ground truth mirror masks"""

    views: List[ViewMetrics]
    omittedMetrics: "list[str]" = field(default_factory=lambda: list(OMITTED_METRICS))

    @property
    def meanPsnr(self) -> Optional[float]:
        return _mean(v.psnr for v in self.views)

    @property
    def meanSsim(self) -> Optional[float]:
        return _mean(v.ssim for v in self.views)

    @property
    def meanPsnrMask(self) -> Optional[float]:
        return _mean(v.psnrMask for v in self.views)

    @property
    def meanSsimMask(self) -> Optional[float]:
        return _mean(v.ssimMask for v in self.views)

    @property
    def meanMirrorDepthMaeM(self) -> Optional[float]:
        return _mean(v.mirrorDepthMaeM for v in self.views)

    def toJson(self) -> dict:
        return {
            "mean": {
                "psnr": self.meanPsnr,
                "ssim": self.meanSsim,
                "psnrMask": self.meanPsnrMask,
                "ssimMask": self.meanSsimMask,
                "mirrorDepthMaeM": self.meanMirrorDepthMaeM,
            },
            "pixels": int(sum(v.pixels for v in self.views)),
            "maskPixels": int(sum(v.maskPixels for v in self.views)),
            "views": [v.toJson() for v in self.views],
            "omittedMetrics": list(self.omittedMetrics),
        }


def compareView(index: int, image, gtImage, gtMask, depth=None, gtDepth=None) -> ViewMetrics:
    gtMask = np.asarray(gtMask, dtype=bool)
    metrics = ViewMetrics(
        view=index,
        psnr=psnr(image, gtImage),
        ssim=ssim(image, gtImage),
        pixels=int(gtMask.size),
        maskPixels=int(np.sum(gtMask)),
    )
    if metrics.maskPixels > 0:
        metrics.psnrMask = psnr(image, gtImage, gtMask)
        metrics.ssimMask = ssim(image, gtImage, gtMask)
        if depth is not None and gtDepth is not None:
            metrics.mirrorDepthMaeM = mirrorDepthMae(depth, gtDepth, gtMask)
    return metrics


def evaluate(
    scene,
    views,
    config: "RenderConfig|None" = None,
    pool: "WorkerPool|None" = None,
) -> MetricsReport:
    """Render every view of a dataset and compare it to the ground truth

    Args:
        scene (FieldParams|ComposedScene): What to render
        views (list[DatasetView]): Ground truth views
        config (RenderConfig, optional): Renderer settings
        pool (WorkerPool, optional): Workers for the frame tiles

    Returns:
        MetricsReport
    """
    results = []
    for index, view in enumerate(views):
        frame = renderImage(scene, view.camera, config, pool)
        metrics = compareView(index, frame.image, view.image, view.mask, frame.depth, view.depth)
        metrics.degeneratePixels = frame.report.degeneratePixels
        logging.info(
            f"View {index}: PSNR {metrics.psnr:.2f} dB, SSIM {metrics.ssim:.4f}"
            + ("" if metrics.psnrMask is None else f", inside mask {metrics.psnrMask:.2f} dB")
        )
        results.append(metrics)
    return MetricsReport(results)
