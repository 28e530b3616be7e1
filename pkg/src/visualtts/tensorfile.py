"""Binary tensor container (``.vtts`` files) and checkpoint directories.

Layout, all little-endian::

    magic     4 bytes   b"VTTS"
    version   u8        1
    dtype     u8        0 = float32
    rank      u8        0..4
    reserved  u8        0
    dims      rank x u32
    payload   row-major float32 values
"""

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

MAGIC = b"VTTS"
VERSION = 1
DTYPE_FLOAT32 = 0
MAX_RANK = 4
INDEX_NAME = "index.txt"

_HEADER = struct.Struct("<4sBBBB")


def encode_tensor(x):
    """Serialize an array to the container format and return the bytes."""
    x = np.asarray(x)
    if x.ndim > MAX_RANK:
        raise ValidationError(f"rank {x.ndim} exceeds maximum {MAX_RANK}")
    x = x.astype("<f4", copy=False)
    if not np.all(np.isfinite(x)):
        raise ValidationError("tensor contains non-finite values")
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_FLOAT32, x.ndim, 0)
    dims = struct.pack(f"<{x.ndim}I", *x.shape)
    return header + dims + np.ascontiguousarray(x).tobytes()


def decode_tensor(buf):
    """Inverse of :func:`encode_tensor`."""
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} bytes")
    magic, version, dtype, rank, reserved = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic: {magic!r}")
    if version != VERSION:
        raise FormatError(f"version mismatch: got {version}, expected {VERSION}")
    if dtype != DTYPE_FLOAT32:
        raise FormatError(f"unsupported dtype code: {dtype}")
    if rank > MAX_RANK:
        raise FormatError(f"bad rank: {rank}")
    if reserved != 0:
        raise FormatError(f"reserved byte is {reserved}, expected 0")
    offset = _HEADER.size
    if len(buf) < offset + 4 * rank:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{rank}I", buf, offset)
    offset += 4 * rank
    expected = 4 * int(np.prod(dims, dtype=np.int64))
    payload = len(buf) - offset
    if payload < expected:
        raise FormatError(f"truncated payload: {payload} of {expected} bytes")
    if payload > expected:
        raise FormatError(f"payload length {payload} exceeds {expected} bytes")
    return np.frombuffer(buf, dtype="<f4", offset=offset).reshape(dims).astype(np.float32)


def write_tensor(x, dest):
    dest = Path(dest)
    dest.write_bytes(encode_tensor(x))


def read_tensor(src):
    return decode_tensor(Path(src).read_bytes())


def write_tensor_dir(tensors, directory):
    """Write a name -> array mapping as one file per tensor plus ``index.txt``.

    The index holds one ``name<TAB>relative/path`` line per tensor, in the
    mapping's iteration order. Tensors of rank above four are stored with their
    leading axes merged; a third column then records the original shape as
    comma-separated dims so the reader can restore it.
    """
    directory = Path(directory)
    (directory / "tensors").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (name, value) in enumerate(tensors.items()):
        rel = f"tensors/{i:04d}.vtts"
        value = np.asarray(value)
        if value.ndim > MAX_RANK:
            write_tensor(value.reshape(-1, *value.shape[value.ndim - MAX_RANK + 1 :]), directory / rel)
            lines.append(f"{name}\t{rel}\t{','.join(str(d) for d in value.shape)}")
        else:
            write_tensor(value, directory / rel)
            lines.append(f"{name}\t{rel}")
    (directory / INDEX_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_tensor_dir(directory):
    directory = Path(directory)
    index = directory / INDEX_NAME
    if not index.exists():
        raise FormatError(f"missing checkpoint index: {index}")
    tensors = {}
    for lineno, line in enumerate(index.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise FormatError(f"{index}:{lineno}: expected 'name<TAB>path[<TAB>shape]'")
        name, rel = fields[:2]
        value = read_tensor(directory / rel)
        if len(fields) == 3:
            try:
                shape = tuple(int(d) for d in fields[2].split(","))
                value = value.reshape(shape)
            except ValueError:
                raise FormatError(f"{index}:{lineno}: bad shape {fields[2]!r} for {value.shape}") from None
        tensors[name] = value
    return tensors
