"""Binary checkpoints of a field and its optimizer.

Layout: the 8-byte magic MFCKPT01, a uint32 format version, a uint64 header
length, a UTF-8 JSON header and then every array as little-endian float64 in the
order of the header's array table. Offsets in the table count from the first
byte after the header.
"""
from dataclasses import dataclass, field
import json
import logging
import struct
from typing import Optional

import numpy as np

from mirrorfield.field.params import LATTICE_NAMES, FieldParams
from mirrorfield.harness import io
from mirrorfield.train.optim import OptimConfig, OptimState

CHECKPOINT_MAGIC = b"MFCKPT01"
CHECKPOINT_VERSION = 1
PREAMBLE = struct.Struct("<8sIQ")


class CheckpointFormatError(ValueError):
    "Raised when a checkpoint file cannot be decoded"

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"Invalid checkpoint {path}: {reason}")


class ConfigMismatchError(ValueError):
    "Raised when resuming from a checkpoint written with a different configuration"

    def __init__(self, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(
            f"Checkpoint was written with configuration {found[:12]}, "
            f"the current one is {expected[:12]}"
        )


@dataclass
class Checkpoint:
    """Everything needed to resume training or to render a trained field

    Args:
        params (FieldParams): The field
        optim (OptimState): Adam moments and scalars
        step (int): Steps completed
        configHash (str): Hash of the training configuration
        config (dict, optional): The training configuration itself
    """

    params: FieldParams
    optim: OptimState
    step: int = 0
    configHash: str = ""
    config: Optional[dict] = field(default=None)

    @staticmethod
    def initial(params: FieldParams, optimConfig: "OptimConfig|None" = None, **kwargs) -> "Checkpoint":
        return Checkpoint(params, OptimState.create(params, optimConfig), **kwargs)

    def arrays(self) -> "list[tuple[str, np.ndarray]]":
        res = [(f"params/{name}", getattr(self.params, name)) for name in LATTICE_NAMES]
        res += [(f"optim/firstMoment/{name}", self.optim.firstMoment[name]) for name in LATTICE_NAMES]
        res += [(f"optim/secondMoment/{name}", self.optim.secondMoment[name]) for name in LATTICE_NAMES]
        return res

    def checkConfig(self, configHash: str, force: bool = False):
        """Guard against resuming with another configuration

        Raises:
            ConfigMismatchError: when the hashes differ and force is False
        """
        if self.configHash == configHash:
            return
        logging.warning(
            f"Checkpoint configuration hash {self.configHash[:12]} differs from the "
            f"current configuration {configHash[:12]}"
        )
        if not force:
            raise ConfigMismatchError(configHash, self.configHash)


def encodeCheckpoint(checkpoint: Checkpoint) -> bytes:
    table = []
    chunks = []
    offset = 0
    for name, array in checkpoint.arrays():
        data = np.ascontiguousarray(array, dtype="<f8").tobytes(order="C")
        table.append({"name": name, "shape": list(array.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    params = checkpoint.params
    header = {
        "bboxMin": params.bboxMin.tolist(),
        "bboxMax": params.bboxMax.tolist(),
        "resolutions": {k: list(v) for k, v in params.resolutions().items()},
        "shDegree": params.shDegree,
        "step": int(checkpoint.step),
        "configHash": checkpoint.configHash,
        "config": checkpoint.config,
        "optim": checkpoint.optim.scalars(),
        "arrays": table,
    }
    headerBytes = json.dumps(header, sort_keys=True).encode("utf8")
    return (
        PREAMBLE.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(headerBytes))
        + headerBytes
        + b"".join(chunks)
    )


def decodeCheckpoint(data: bytes, path: str = "<bytes>") -> Checkpoint:
    if len(data) < PREAMBLE.size:
        raise CheckpointFormatError(path, "file is truncated")
    magic, version, headerLength = PREAMBLE.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(path, f"unknown magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(path, f"unsupported version {version}")
    start = PREAMBLE.size + headerLength
    if len(data) < start:
        raise CheckpointFormatError(path, "header is truncated")
    try:
        header = json.loads(data[PREAMBLE.size : start].decode("utf8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as ex:
        raise CheckpointFormatError(path, f"unreadable header: {ex}") from ex
    arrays = {}
    end = start
    for entry in header.get("arrays", []):
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        first = start + int(entry["offset"])
        last = first + 8 * count
        if last > len(data):
            raise CheckpointFormatError(path, f"array {entry['name']} is truncated")
        arrays[entry["name"]] = (
            np.frombuffer(data, dtype="<f8", count=count, offset=first)
            .reshape(shape)
            .astype(np.float64)
        )
        end = max(end, last)
    if end != len(data):
        raise CheckpointFormatError(path, f"{len(data) - end} unexpected trailing bytes")
    try:
        params = FieldParams(
            bboxMin=np.array(header["bboxMin"]),
            bboxMax=np.array(header["bboxMax"]),
            shDegree=header["shDegree"],
            **{name: arrays[f"params/{name}"] for name in LATTICE_NAMES},
        )
        scalars = header["optim"]
        optim = OptimState(
            firstMoment={n: arrays[f"optim/firstMoment/{n}"] for n in LATTICE_NAMES},
            secondMoment={n: arrays[f"optim/secondMoment/{n}"] for n in LATTICE_NAMES},
            step=int(scalars["step"]),
            learningRate=float(scalars["learningRate"]),
            beta1=float(scalars["beta1"]),
            beta2=float(scalars["beta2"]),
            eps=float(scalars["eps"]),
        )
        optim.checkShapes(params)
    except KeyError as ex:
        raise CheckpointFormatError(path, f"missing entry {ex}") from ex
    except ValueError as ex:
        raise CheckpointFormatError(path, str(ex)) from ex
    return Checkpoint(
        params, optim, int(header["step"]), header.get("configHash", ""), header.get("config")
    )


def saveCheckpoint(checkpoint: Checkpoint, path: str):
    """Write a checkpoint atomically: the target is replaced only once the new
    file is complete"""
    io.writeBytes(path, encodeCheckpoint(checkpoint))
    logging.info(f"Saved checkpoint of step {checkpoint.step} to '{path}'")


def loadCheckpoint(path: str) -> Checkpoint:
    """Read a checkpoint

    Raises:
        CheckpointFormatError: on a wrong magic or version, a truncated file or an
            inconsistent header
    """
    with open(path, "rb") as f:
        data = f.read()
    return decodeCheckpoint(data, path)
