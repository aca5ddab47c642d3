"""Versioned binary checkpoint format.

Layout: magic ``DEMINET1``, then one record per named array:
u32 name length, UTF-8 name bytes, u32 rank, u64 per-dim sizes, then the
values as little-endian float64 in row-major order. Records run to EOF.
Loading validates the name set and every shape against the live model and
fails loudly on any mismatch.
"""

import struct

import numpy as np

from ..errors import DataError

MAGIC = b"DEMINET1"


def save_arrays(path, arrays: dict) -> None:
    """Write ``{name: ndarray}`` in a stable (sorted-name) order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<Q", dim))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def load_arrays(path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise DataError(f"{path}: bad checkpoint magic {magic!r}, expected {MAGIC!r}")
        out = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) < 4:
                raise DataError(f"{path}: truncated record header")
            (name_len,) = struct.unpack("<I", head)
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", fh.read(4))
            dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise DataError(f"{path}: truncated values for {name!r}")
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).copy()
    return out


def load_into(path, arrays: dict) -> None:
    """Load a checkpoint into existing named arrays, validating names and shapes."""
    loaded = load_arrays(path)
    missing = sorted(set(arrays) - set(loaded))
    unexpected = sorted(set(loaded) - set(arrays))
    if missing or unexpected:
        raise DataError(
            f"{path}: checkpoint does not match model config; "
            f"missing={missing[:5]}{'...' if len(missing) > 5 else ''} "
            f"unexpected={unexpected[:5]}{'...' if len(unexpected) > 5 else ''}"
        )
    for name, target in arrays.items():
        src = loaded[name]
        if src.shape != target.shape:
            raise DataError(
                f"{path}: shape mismatch for {name!r}: checkpoint {src.shape}, model {target.shape}"
            )
        target[...] = src
