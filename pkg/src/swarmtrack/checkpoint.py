"""Flat binary parameter checkpoints.

Layout (all integers little-endian):

    bytes 0..7   magic ``b"SWTCKPT\\x01"`` (the trailing byte is the format
                 version)
    uint32       number of entries
    per entry:
        uint16   name length, followed by that many UTF-8 bytes
        uint8    ndim, followed by ndim * uint32 axis lengths
        float64  row-major values (C order)

Values round-trip bit-exactly; writing the same state twice produces
byte-identical files.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SWTCKPT\x01"


class CheckpointError(IOError):
    pass


def save_checkpoint(path, state: dict[str, np.ndarray]):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = np.ascontiguousarray(state[name], dtype=np.float64)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (count,) = struct.unpack("<I", fh.read(4))
        state = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = tuple(
                struct.unpack("<I", fh.read(4))[0] for _ in range(ndim)
            )
            n_values = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n_values)
            if len(raw) != 8 * n_values:
                raise CheckpointError(f"{path}: truncated values for {name}")
            state[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        return state
