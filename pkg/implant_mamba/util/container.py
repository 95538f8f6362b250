"""
IMTN tensor container

文件结构, 按顺序:
1. header: magic "IMTN", u32 version, u32 entry count
2. entry * count: u32 length-prefixed UTF-8 name, u8 dtype tag, u32 rank,
   u64 extents * rank, raw little-endian IEEE-754 payload

Used by checkpoints and by phantom volume files.
"""
import io
import os
import tempfile
from collections import OrderedDict
from typing import Dict, Mapping

import numpy as np
from construct import Struct, Const, Int8ul, Int32ul, Int64ul, PascalString, Array, Bytes, this, ConstructError

from . import Log
from .exceptions import ContainerFormatError
from .variables import LOG, DType

log = Log.getLogger(LOG.Core.value)

MAGIC = b'IMTN'
CONTAINER_VERSION = 1

_ITEMSIZE = {DType.f32.tag: 4, DType.f64.tag: 8}
_WIRE_DTYPE = {DType.f32.tag: np.dtype('<f4'), DType.f64.tag: np.dtype('<f8')}


def _payload_size(ctx):
    size = _ITEMSIZE.get(ctx.dtype, 0)
    for extent in ctx.extents:
        size *= extent
    return size


container_header = Struct(
    'magic' / Const(MAGIC),
    'version' / Int32ul,
    'count' / Int32ul,
)

tensor_entry = Struct(
    'name' / PascalString(Int32ul, 'utf8'),
    'dtype' / Int8ul,
    'rank' / Int32ul,
    'extents' / Array(this.rank, Int64ul),
    'payload' / Bytes(_payload_size),
)


def _as_array(value):
    return np.asarray(getattr(value, 'data', value))


def dumps(tensors: Mapping[str, object]) -> bytes:
    """ 打包 named arrays (or Tensors) into an IMTN buffer """
    buf = io.BytesIO()
    buf.write(container_header.build(dict(version=CONTAINER_VERSION, count=len(tensors))))
    for name, value in tensors.items():
        array = _as_array(value)
        tag = DType.from_numpy(array.dtype).tag
        payload = np.ascontiguousarray(array, dtype=_WIRE_DTYPE[tag]).tobytes()
        buf.write(tensor_entry.build(dict(name=name, dtype=tag, rank=array.ndim,
                                          extents=list(array.shape), payload=payload)))
    return buf.getvalue()


def loads(data: bytes) -> Dict[str, np.ndarray]:
    """ 解析 IMTN buffer; nothing is returned unless the whole buffer parses """
    stream = io.BytesIO(data)
    try:
        header = container_header.parse_stream(stream)
    except ConstructError as E:
        raise ContainerFormatError(f'bad header: {E}', offset=0) from E
    if header.version != CONTAINER_VERSION:
        raise ContainerFormatError(f'unsupported version {header.version}', offset=4)

    tensors = OrderedDict()
    for index in range(header.count):
        offset = stream.tell()
        try:
            entry = tensor_entry.parse_stream(stream)
        except (ConstructError, UnicodeDecodeError) as E:
            raise ContainerFormatError(f'entry {index} truncated or corrupt: {E}', offset=offset) from E
        if entry.dtype not in _WIRE_DTYPE:
            raise ContainerFormatError(f'entry {entry.name!r} has unknown dtype tag {entry.dtype}', offset=offset)
        wire = _WIRE_DTYPE[entry.dtype]
        array = np.frombuffer(entry.payload, dtype=wire).reshape(tuple(entry.extents))
        tensors[entry.name] = array.astype(wire.newbyteorder('='), copy=True)
    trailing = len(data) - stream.tell()
    if trailing:
        raise ContainerFormatError(f'{trailing} trailing bytes after {header.count} entries', offset=stream.tell())
    return tensors


def save(path, tensors: Mapping[str, object]):
    """ write atomically: temp file in the same directory, then rename """
    data = dumps(tensors)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.imtn-')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    log.debug(f'wrote {len(tensors)} tensors ({len(data)} bytes) to {path}')


def load(path) -> Dict[str, np.ndarray]:
    with open(path, 'rb') as f:
        data = f.read()
    return loads(data)
