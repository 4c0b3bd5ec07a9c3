"""Binary weight files.

Byte layout (little-endian)::

    8s    magic  b"IBWEIGHT"
    u32   format version (1)
    u32   config length L, then L bytes of UTF-8 JSON (arch config)
    u32   tensor count T, then T table entries:
            u16 name length, name bytes (UTF-8)
            u8  dtype code (1 = float32, 2 = float64)
            u8  ndim, ndim x u32 extents
            u64 offset into the data section
            u64 byte length
            u32 CRC32 of the tensor bytes
    u32   CRC32 of everything above
    ...   data section: tensor bytes back to back, C order

Writes go to a temp file and are renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from ..errors import ArchMismatchError, ChecksumError, TruncatedFileError, VersionError, WeightFileError
from ..tensor_core import Model
from .builders import model_from_config

MAGIC = b"IBWEIGHT"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("float32"): 1, np.dtype("float64"): 2}


def encode_weights(model: Model) -> bytes:
    config = json.dumps(model.config, sort_keys=True, separators=(",", ":")).encode()
    head = bytearray(MAGIC)
    head += struct.pack("<II", VERSION, len(config)) + config
    params = model.parameters()
    head += struct.pack("<I", len(params))
    blobs = []
    offset = 0
    for name, t in params:
        blob = np.ascontiguousarray(t.data, dtype=t.data.dtype.newbyteorder("<")).tobytes()
        raw_name = name.encode()
        head += struct.pack("<H", len(raw_name)) + raw_name
        head += struct.pack("<BB", DTYPE_CODES[t.data.dtype], t.data.ndim)
        head += struct.pack(f"<{t.data.ndim}I", *t.data.shape)
        head += struct.pack("<QQI", offset, len(blob), zlib.crc32(blob))
        blobs.append(blob)
        offset += len(blob)
    head += struct.pack("<I", zlib.crc32(bytes(head)))
    return bytes(head) + b"".join(blobs)


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_weights(model: Model, path) -> str:
    """Write ``model`` to ``path``; returns the file's SHA-256."""
    data = encode_weights(model)
    atomic_write(path, data)
    return hashlib.sha256(data).hexdigest()


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise TruncatedFileError(f"weight file truncated at byte {self.pos}")
        values = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return values

    def bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFileError(f"weight file truncated at byte {self.pos}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out


def decode_weights(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(raw)
    if r.bytes(len(MAGIC)) != MAGIC:
        raise WeightFileError("not a weight file (bad magic bytes)")
    (version,) = r.take("<I")
    if version != VERSION:
        raise VersionError(f"weight file version {version}, this library reads version {VERSION}")
    (clen,) = r.take("<I")
    config_raw = r.bytes(clen)
    (count,) = r.take("<I")
    table = []
    for _ in range(count):
        (nlen,) = r.take("<H")
        name = r.bytes(nlen).decode("utf-8", errors="replace")
        code, ndim = r.take("<BB")
        shape = r.take(f"<{ndim}I")
        offset, nbytes, crc = r.take("<QQI")
        table.append((name, code, shape, offset, nbytes, crc))
    header_end = r.pos
    (header_crc,) = r.take("<I")
    if zlib.crc32(raw[:header_end]) != header_crc:
        raise ChecksumError("<header>")
    config = json.loads(config_raw)
    data_start = r.pos
    tensors = {}
    for name, code, shape, offset, nbytes, crc in table:
        if code not in DTYPES:
            raise WeightFileError(f"tensor {name!r}: unknown dtype code {code}")
        start = data_start + offset
        if start + nbytes > len(raw):
            raise TruncatedFileError(f"tensor {name!r} extends past end of file")
        blob = raw[start:start + nbytes]
        if zlib.crc32(blob) != crc:
            raise ChecksumError(name)
        dtype = DTYPES[code]
        if nbytes != int(np.prod(shape)) * dtype.itemsize:
            raise WeightFileError(f"tensor {name!r}: byte length does not match its shape")
        tensors[name] = np.frombuffer(blob, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    return config, tensors


def load_weights(path, expect_arch: str | None = None) -> Model:
    """Rebuild the model stored at ``path``.

    Raises :class:`ArchMismatchError` when ``expect_arch`` is given and the
    file holds a different architecture.
    """
    raw = Path(path).read_bytes()
    config, tensors = decode_weights(raw)
    arch = config.get("arch_id")
    if expect_arch is not None and arch != expect_arch:
        raise ArchMismatchError(f"file holds {arch!r}, expected {expect_arch!r}")
    model = model_from_config(config)
    if any(t.dtype != model.dtype for t in tensors.values()):
        model = model.clone(dtype=next(iter(tensors.values())).dtype)
    model.load_state_dict(tensors)
    return model


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
