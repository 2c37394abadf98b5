"""
Flat binary checkpoints:

    magic      8 bytes  b"STRUCTSQ"
    version    u32 little endian
    header     u32 little endian byte length, then that many bytes of UTF-8 JSON
    blocks     float64 little endian, every parameter block in declaration order
    optimizer  (only when the header says so) Adam first moments then second moments, same layout as the blocks

The JSON header holds the model spec, the block names and shapes, the training step and the optimizer update count.
"""
import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from ..core import DataError, FORMAT_VERSION, UnsupportedVersion
from ..misc import atomic_write
from .params import ModelParams, ModelSpec

logger = logging.getLogger(__name__)

MAGIC = b"STRUCTSQ"
_U32 = struct.Struct('<I')
_FLOAT = np.dtype('<f8')


class MalformedCheckpoint(DataError):
    pass


@dataclass
class Checkpoint:
    params: ModelParams
    step: int = 0
    updates: int = 0
    first_moments: Optional[Dict[str, np.ndarray]] = None
    second_moments: Optional[Dict[str, np.ndarray]] = None

    @property
    def has_optimizer(self) -> bool:
        return self.first_moments is not None and self.second_moments is not None


def _write_blocks(file, params: ModelParams, blocks: Dict[str, np.ndarray]):
    for name in params.keys():
        file.write(np.ascontiguousarray(blocks[name], dtype=_FLOAT).tobytes())


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint):
    params = checkpoint.params
    header = {
        'spec': json.loads(params.spec.json()),
        'blocks': [[name, list(block.shape)] for name, block in params.items()],
        'step': checkpoint.step,
        'updates': checkpoint.updates,
        'has_optimizer': checkpoint.has_optimizer,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    with atomic_write(path, 'wb') as file:
        file.write(MAGIC)
        file.write(_U32.pack(FORMAT_VERSION))
        file.write(_U32.pack(len(header_bytes)))
        file.write(header_bytes)
        _write_blocks(file, params, params.blocks)
        if checkpoint.has_optimizer:
            _write_blocks(file, params, checkpoint.first_moments)
            _write_blocks(file, params, checkpoint.second_moments)
    logger.info(f"Saved checkpoint at step {checkpoint.step} to {path}")


class _Reader:

    def __init__(self, content: bytes, path: Path):
        self.content = content
        self.offset = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.offset + count > len(self.content):
            raise MalformedCheckpoint(f"{self.path} is truncated")
        chunk = self.content[self.offset:self.offset + count]
        self.offset += count
        return chunk

    def blocks(self, shapes) -> Dict[str, np.ndarray]:
        result = {}
        for name, shape in shapes:
            count = int(np.prod(shape, dtype=np.int64))
            result[name] = np.frombuffer(self.take(count * _FLOAT.itemsize), dtype=_FLOAT).reshape(shape).copy()
        return result


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    reader = _Reader(path.read_bytes(), path)
    if reader.take(len(MAGIC)) != MAGIC:
        raise MalformedCheckpoint(f"{path} is not a checkpoint")
    version, = _U32.unpack(reader.take(_U32.size))
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"Checkpoint version {version}, expected {FORMAT_VERSION}")
    header_length, = _U32.unpack(reader.take(_U32.size))
    try:
        header = json.loads(reader.take(header_length).decode('utf-8'))
        spec = ModelSpec.parse_obj(header['spec'])
        shapes = [(name, tuple(shape)) for name, shape in header['blocks']]
    except (ValueError, KeyError, TypeError) as ex:
        raise MalformedCheckpoint(f"{path} has a malformed header: {ex}") from ex

    expected = list(spec.block_shapes().items())
    if shapes != expected:
        raise MalformedCheckpoint(f"{path} block layout {shapes} does not match its model spec {expected}")
    params = ModelParams(spec, reader.blocks(shapes))
    checkpoint = Checkpoint(params, step=int(header.get('step', 0)), updates=int(header.get('updates', 0)))
    if header.get('has_optimizer'):
        checkpoint.first_moments = reader.blocks(shapes)
        checkpoint.second_moments = reader.blocks(shapes)
    if reader.offset != len(reader.content):
        raise MalformedCheckpoint(f"{path} has {len(reader.content) - reader.offset} trailing byte(s)")
    return checkpoint
