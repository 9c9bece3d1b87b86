"""Binary tensor (.pdt) and checkpoint (.pdck) files, little-endian throughout.

.pdt layout:  magic "PDT1", u8 dtype code (1=f32, 2=f64, 3=i32), u8 ndim,
ndim x u32 dims, raw data.

.pdck layout: magic "PDCK", u32 version, u32 tensor count, then per tensor
u16 name length, UTF-8 name, u8 dtype code, u8 ndim, ndim x u32 dims, raw
data.

All writes go through a temp file + rename so a crashed run never leaves a
truncated file that parses as valid.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import DimensionError, FormatError

PDT_MAGIC = b"PDT1"
PDCK_MAGIC = b"PDCK"
PDCK_VERSION = 1

_CODE_TO_DTYPE = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i4")}
_KIND_TO_CODE = {("f", 4): 1, ("f", 8): 2, ("i", 4): 3}


def _dtype_code(arr: np.ndarray) -> int:
    code = _KIND_TO_CODE.get((arr.dtype.kind, arr.dtype.itemsize))
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}; use f32, f64, or i32")
    return code


def _atomic_write(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode_tensor(arr: np.ndarray) -> bytes:
    code = _dtype_code(arr)
    # record rank/shape before ascontiguousarray, which promotes 0-d to (1,)
    header = struct.pack("<BB", code, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    data = np.ascontiguousarray(arr).astype(_CODE_TO_DTYPE[code], copy=False)
    return header + dims + data.tobytes()


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated {self.what}: wanted {n} bytes at offset {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_tensor(r: _Reader) -> np.ndarray:
    code, ndim = r.unpack("<BB")
    if code not in _CODE_TO_DTYPE:
        raise FormatError(f"unknown dtype code {code} in {r.what}")
    dims = r.unpack(f"<{ndim}I")
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    data = r.take(count * dtype.itemsize)
    return np.frombuffer(data, dtype=dtype).reshape(dims).copy()


def write_pdt(path: str, arr: np.ndarray) -> None:
    _atomic_write(path, PDT_MAGIC + _encode_tensor(np.asarray(arr)))


def read_pdt(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf, f"pdt file {path}")
    if r.take(4) != PDT_MAGIC:
        raise FormatError(f"bad magic in {path}: not a .pdt file")
    arr = _decode_tensor(r)
    if r.pos != len(buf):
        raise FormatError(f"trailing bytes in {path}")
    return arr


def write_checkpoint(path: str, tensors: dict[str, np.ndarray]) -> None:
    parts = [PDCK_MAGIC, struct.pack("<II", PDCK_VERSION, len(tensors))]
    for name, arr in tensors.items():
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded_name)))
        parts.append(encoded_name)
        parts.append(_encode_tensor(np.asarray(arr)))
    _atomic_write(path, b"".join(parts))


def read_checkpoint(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf, f"checkpoint {path}")
    if r.take(4) != PDCK_MAGIC:
        raise FormatError(f"bad magic in {path}: not a .pdck file")
    version, count = r.unpack("<II")
    if version != PDCK_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} in {path}")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tensors[name] = _decode_tensor(r)
    if r.pos != len(buf):
        raise FormatError(f"trailing bytes in {path}")
    return tensors


def load_into(params: dict[str, np.ndarray], saved: dict[str, np.ndarray]) -> None:
    """Copy saved tensors into existing parameter arrays, strictly by name."""
    for name in saved:
        if name not in params:
            raise FormatError(f"checkpoint has unknown tensor {name!r}")
    for name, dst in params.items():
        if name not in saved:
            raise FormatError(f"checkpoint is missing tensor {name!r}")
        src = saved[name]
        if src.shape != dst.shape:
            raise DimensionError(
                f"checkpoint tensor {name!r} has shape {src.shape}, expected {dst.shape}"
            )
        dst[...] = src.astype(dst.dtype)
