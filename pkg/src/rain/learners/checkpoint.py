"""Named-tensor checkpoint files.

Layout, all little-endian::

    b"RNCK" | u32 tensor count | u32 version
    per tensor: u32 name length | name (UTF-8) | u32 rank | u32 dims[rank] | float32 data
"""

import logging
import os
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointFormatError, DatasetIOError
from ..utils.constants import CHECKPOINT_MAGIC
from .params import ParamSet

logger = logging.getLogger(__name__)
logger.setLevel(logging.DEBUG)

_U32 = struct.Struct("<I")


def save_checkpoint(paramset: ParamSet, path: Path) -> Path:
    """Write ``paramset`` atomically to ``path``."""
    path = Path(path)
    chunks = [CHECKPOINT_MAGIC, _U32.pack(len(paramset)), _U32.pack(paramset.version)]
    for name, tensor in paramset.items():
        encoded = name.encode("utf-8")
        data = tensor.detach().cpu().to(torch.float32).numpy()
        chunks += [_U32.pack(len(encoded)), encoded, _U32.pack(data.ndim)]
        chunks += [_U32.pack(d) for d in data.shape]
        chunks.append(data.astype("<f4").tobytes())
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(b"".join(chunks))
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {e}", exc_info=e)
        raise DatasetIOError(f"cannot write checkpoint {path}: {e}")
    logger.debug(f"Saved checkpoint {path} ({len(paramset)} tensors, version {paramset.version})")
    return path


class _Reader:
    def __init__(self, raw: bytes, path: Path):
        self.raw, self.path, self.offset = raw, path, 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.raw):
            raise CheckpointFormatError(f"{self.path}: truncated at byte {self.offset}")
        chunk = self.raw[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]


def load_checkpoint(path: Path) -> ParamSet:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DatasetIOError(f"cannot read checkpoint {path}: {e}")
    reader = _Reader(raw, path)
    if reader.take(4) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint (bad magic)")
    count, version = reader.u32(), reader.u32()
    tensors = OrderedDict()
    for _ in range(count):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError(f"{path}: tensor name is not UTF-8")
        if name in tensors:
            raise CheckpointFormatError(f"{path}: duplicate tensor '{name}'")
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = torch.from_numpy(data.astype(np.float32))
    if reader.offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - reader.offset} trailing bytes")
    return ParamSet(tensors=tensors, version=version)
