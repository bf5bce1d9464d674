"""CLGW binary weights format.

Little-endian layout: magic "CLGW", u32 version (=1), u32 tensor count,
then per tensor: u32 name length, UTF-8 name, u32 rank, u64 dims, f32 data.
Round-trips are bit-exact.
"""

import struct

import numpy as np

MAGIC = b"CLGW"
VERSION = 1


def save_weights(path, tensors: dict):
    """Write a name -> f32 ndarray dict; iteration order is sorted by name."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.asarray(tensors[name], dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def load_weights(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<I", f.read(4))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}Q", f.read(8 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            buf = f.read(4 * n)
            if len(buf) != 4 * n:
                raise ValueError(f"{path}: truncated tensor '{name}'")
            out[name] = np.frombuffer(buf, dtype="<f4").reshape(dims).copy()
        return out
