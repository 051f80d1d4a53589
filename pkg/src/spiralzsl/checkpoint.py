"""Binary checkpoint container for named parameters.

Layout (all integers little-endian u32):
    magic "RSRC" | version | count |
    per parameter: name_len | utf-8 name | rank | dims... | float32 payload
Round-trips are bit-exact.
"""

from __future__ import annotations

import io
import struct
from typing import Iterable

import numpy as np

from .errors import DataFormatError, TruncatedPayloadError
from .optim import Parameter

MAGIC = b"RSRC"
VERSION = 1


def _write_u32(buf, value: int) -> None:
    buf.write(struct.pack("<I", value))


def _read_u32(buf) -> int:
    raw = buf.read(4)
    if len(raw) != 4:
        raise TruncatedPayloadError("checkpoint ended inside a header field")
    return struct.unpack("<I", raw)[0]


def dump_params(params: Iterable[Parameter]) -> bytes:
    buf = io.BytesIO()
    params = list(params)
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        raise DataFormatError("duplicate parameter names in checkpoint")
    buf.write(MAGIC)
    _write_u32(buf, VERSION)
    _write_u32(buf, len(params))
    for p in params:
        name = p.name.encode("utf-8")
        _write_u32(buf, len(name))
        buf.write(name)
        arr = np.ascontiguousarray(p.tensor.values, dtype="<f4")
        _write_u32(buf, arr.ndim)
        for d in arr.shape:
            _write_u32(buf, d)
        buf.write(arr.tobytes())
    return buf.getvalue()


def save_params(params: Iterable[Parameter], path) -> None:
    with open(path, "wb") as fh:
        fh.write(dump_params(params))


def parse_params(data: bytes) -> dict[str, np.ndarray]:
    buf = io.BytesIO(data)
    magic = buf.read(4)
    if magic != MAGIC:
        raise DataFormatError(f"bad checkpoint magic {magic!r}")
    version = _read_u32(buf)
    if version != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    count = _read_u32(buf)
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = _read_u32(buf)
        name_raw = buf.read(name_len)
        if len(name_raw) != name_len:
            raise TruncatedPayloadError("checkpoint ended inside a name")
        name = name_raw.decode("utf-8")
        rank = _read_u32(buf)
        dims = tuple(_read_u32(buf) for _ in range(rank))
        n = int(np.prod(dims)) if dims else 1
        raw = buf.read(4 * n)
        if len(raw) != 4 * n:
            raise TruncatedPayloadError(f"checkpoint ended inside payload of {name!r}")
        if name in out:
            raise DataFormatError(f"duplicate parameter {name!r} in checkpoint")
        out[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
    return out


def load_params(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return parse_params(fh.read())


def apply_params(params: Iterable[Parameter], loaded: dict[str, np.ndarray],
                 strict: bool = True) -> None:
    """Copy checkpoint arrays into matching parameters by name."""
    params = list(params)
    seen = set()
    for p in params:
        if p.name not in loaded:
            if strict:
                raise DataFormatError(f"checkpoint missing parameter {p.name!r}")
            continue
        arr = loaded[p.name]
        if arr.shape != p.tensor.values.shape:
            raise DataFormatError(
                f"shape mismatch for {p.name!r}: checkpoint {arr.shape}, "
                f"model {p.tensor.values.shape}")
        p.tensor.values[...] = arr
        p.momentum_buffer[...] = 0.0
        p.tensor.grad = None
        seen.add(p.name)
    if strict:
        extra = set(loaded) - seen
        if extra:
            raise DataFormatError(f"checkpoint has unknown parameters: {sorted(extra)}")
