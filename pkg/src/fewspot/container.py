"""Self-describing binary container for named tensors.

Used for encoder checkpoints and enrollment files. Layout:

    magic "PKWS" | u32 version | u32 header length | header JSON (utf-8)
    then per tensor:
    u32 name length | name (utf-8) | u8 dtype code | u8 ndim |
    u64 dims[ndim] | raw little-endian data

The header JSON carries arbitrary configuration (encoder config, seed,
classifier flags). Tensors are float64 or float32 per record.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

from .errors import DataFormatError

MAGIC = b"PKWS"
FORMAT_VERSION = 1

_DTYPE_CODES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def write_container(path, config: dict, tensors: "OrderedDict[str, np.ndarray] | dict") -> None:
    """Write config and named tensors to path atomically enough for our use."""
    header = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            if arr.dtype not in _DTYPE_CODES:
                arr = arr.astype("<f8")
            raw_name = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw_name)))
            fh.write(raw_name)
            fh.write(struct.pack("<BB", _DTYPE_CODES[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_container(path):
    """Read (config, tensors) back; validates magic, version and sizes."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise DataFormatError(f"{path}: not a PKWS container (bad magic)")
    if len(data) < 12:
        raise DataFormatError(f"{path}: truncated header")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported container version {version} (expected {FORMAT_VERSION})"
        )
    off = 12
    if off + header_len > len(data):
        raise DataFormatError(f"{path}: truncated config block")
    try:
        config = json.loads(data[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: corrupt config block: {exc}") from exc
    off += header_len

    tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
    while off < len(data):
        if off + 4 > len(data):
            raise DataFormatError(f"{path}: truncated tensor record")
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + name_len + 2 > len(data):
            raise DataFormatError(f"{path}: truncated tensor record")
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        if code not in _CODE_DTYPES:
            raise DataFormatError(f"{path}: unknown dtype code {code} for tensor {name!r}")
        if off + 8 * ndim > len(data):
            raise DataFormatError(f"{path}: truncated shape of tensor {name!r}")
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        dtype = _CODE_DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
        if off + nbytes > len(data):
            raise DataFormatError(f"{path}: truncated data of tensor {name!r}")
        arr = np.frombuffer(data, dtype=dtype, count=nbytes // dtype.itemsize, offset=off)
        tensors[name] = arr.reshape(shape).copy()
        off += nbytes
    return config, tensors
