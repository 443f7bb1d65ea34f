"""Versioned binary checkpoint container.

Layout (all integers little-endian):
    magic     8 bytes  b"MFNPCKPT"
    u32       container format version (currently 1)
    u64       ParameterSet version at save time
    u32       entry count
per entry:
    u16       name length, then that many UTF-8 bytes
    u8        ndim, then ndim u64 dims
    float64   row-major data, little-endian
"""

import struct

import numpy as np

MAGIC = b"MFNPCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays, version):
    """Write a name -> float64 array mapping to `path`."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IQI", FORMAT_VERSION, version, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_arrays(path):
    """Read a checkpoint; returns (name -> array mapping, stored version)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    fmt, version, count = struct.unpack_from("<IQI", blob, 8)
    if fmt != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {fmt}")
    ofs = 8 + 16
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", blob, ofs)
        ofs += 2
        name = blob[ofs : ofs + nlen].decode("utf-8")
        ofs += nlen
        (ndim,) = struct.unpack_from("<B", blob, ofs)
        ofs += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, ofs)
        ofs += 8 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=n, offset=ofs).reshape(shape)
        ofs += 8 * n
        arrays[name] = np.array(arr, dtype=np.float64)
    return arrays, version


def save_parameters(path, params, extra=None):
    """Checkpoint a ParameterSet; `extra` adds named arrays (e.g. a frozen
    decoder copy) under their own keys."""
    arrays = dict(params.items())
    arrays = {name: t.data for name, t in arrays.items()}
    if extra:
        for name, arr in extra.items():
            if name in arrays:
                raise CheckpointError(f"extra entry collides with parameter: {name}")
            arrays[name] = arr
    save_arrays(path, arrays, params.version)
