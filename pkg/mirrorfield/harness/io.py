"""File helpers shared by datasets, frames and reports. Every writer goes through
a temporary sibling and os.replace, so a target path only ever holds a complete
file."""
from contextlib import contextmanager
import json
import logging
import os
import shutil
import struct

import numpy as np
from PIL import Image

FLOAT_BUFFER_MAGIC = b"MFBUF001"
FLOAT_BUFFER_HEADER = struct.Struct("<8sIII")


class FloatBufferError(ValueError):
    "Raised when a float buffer file is malformed"


@contextmanager
def atomicPath(path: str):
    """Yield a temporary path next to `path`; on success it replaces `path`"""
    tmpPath = f"{path}.tmp{os.getpid()}"
    try:
        yield tmpPath
        os.replace(tmpPath, path)
    finally:
        if os.path.exists(tmpPath):
            os.remove(tmpPath)


def writeBytes(path: str, data: bytes):
    with atomicPath(path) as tmpPath:
        with open(tmpPath, "wb") as f:
            f.write(data)


def writeJson(path: str, data):
    text = json.dumps(data, indent=2, sort_keys=True, allow_nan=True)
    writeBytes(path, (text + "\n").encode("utf8"))


def readJson(path: str):
    with open(path, "r", encoding="utf8") as f:
        return json.load(f)


def toUint8(image: np.ndarray) -> np.ndarray:
    """Quantise [0, 1] values to 8 bits, rounding to nearest

    >>> toUint8(np.array([0.0, 0.5, 1.2])).tolist()
    [0, 128, 255]
    """
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def writePng(path: str, image: np.ndarray):
    """Write an (H, W) or (H, W, 3) image, uint8 or float in [0, 1]"""
    pixels = toUint8(image)
    if pixels.ndim not in (2, 3):
        raise ValueError(f"Cannot write an image of shape {pixels.shape}")
    with atomicPath(path) as tmpPath:
        Image.fromarray(pixels).save(tmpPath, format="PNG")


def readPng(path: str) -> np.ndarray:
    """Read a PNG as floats in [0, 1]: (H, W, 3) for color and (H, W) for gray"""
    with Image.open(path) as image:
        mode = "L" if image.mode in ("L", "1", "I", "I;16") else "RGB"
        pixels = np.asarray(image.convert(mode))
    return pixels.astype(np.float64) / 255.0


def writeFloatBuffer(path: str, values: np.ndarray):
    """Write an (H, W) or (H, W, C) array as magic, width, height, channels and
    little-endian float32 values in row-major, channel-last order"""
    values = np.asarray(values)
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3:
        raise ValueError(f"Float buffers hold 2D or 3D arrays, got shape {values.shape}")
    height, width, channels = values.shape
    header = FLOAT_BUFFER_HEADER.pack(FLOAT_BUFFER_MAGIC, width, height, channels)
    writeBytes(path, header + values.astype("<f4").tobytes(order="C"))


def readFloatBuffer(path: str) -> np.ndarray:
    """Read a float buffer as (H, W) for one channel and (H, W, C) otherwise

    Raises:
        FloatBufferError: on a wrong magic or a size mismatch
    """
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < FLOAT_BUFFER_HEADER.size:
        raise FloatBufferError(f"{path} is too short to be a float buffer")
    magic, width, height, channels = FLOAT_BUFFER_HEADER.unpack_from(data)
    if magic != FLOAT_BUFFER_MAGIC:
        raise FloatBufferError(f"{path} does not start with {FLOAT_BUFFER_MAGIC!r}")
    expected = FLOAT_BUFFER_HEADER.size + 4 * width * height * channels
    if len(data) != expected:
        raise FloatBufferError(f"{path} holds {len(data)} bytes, expected {expected}")
    values = np.frombuffer(data, dtype="<f4", offset=FLOAT_BUFFER_HEADER.size)
    values = values.reshape(height, width, channels).astype(np.float32)
    return values[:, :, 0] if channels == 1 else values


def replaceDirectory(tmpDir: str, path: str, force: bool = False):
    """Move a fully written directory into place. An existing target is only
    replaced with force

    Raises:
        FileExistsError: when path exists and force is False
    """
    if os.path.exists(path):
        if not force:
            raise FileExistsError(f"{path} already exists, use --force to overwrite it")
        oldDir = f"{path}.old{os.getpid()}"
        os.replace(path, oldDir)
        os.replace(tmpDir, path)
        shutil.rmtree(oldDir, ignore_errors=True)
    else:
        os.replace(tmpDir, path)
    logging.info(f"Wrote {path}")


def temporaryDirectory(path: str) -> str:
    """Create an empty sibling directory of path to write into"""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmpDir = os.path.join(parent, f".{os.path.basename(os.path.abspath(path))}.tmp{os.getpid()}")
    shutil.rmtree(tmpDir, ignore_errors=True)
    os.makedirs(tmpDir)
    return tmpDir
