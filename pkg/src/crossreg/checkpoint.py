"""Versioned binary container of named float64 tensors.

Layout (all little-endian):

    8-byte magic "XREGTENS" | uint32 version | uint32 tensor count
    per tensor: uint16 name length | utf-8 name | uint8 ndim |
                uint32 dims... | float64 row-major values

Entries are written sorted by name so containers are byte-reproducible.
"""

import struct

import numpy as np

from .errors import CheckpointError

MAGIC = b"XREGTENS"
VERSION = 1


def write_container(path, tensors: dict):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(tensors)))
        for name in sorted(tensors):
            data = np.asarray(tensors[name], dtype="<f8")  # tobytes emits C order
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def read_container(path) -> dict:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic; not a tensor container")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", blob, offset)
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header") from exc
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    offset += 8
    tensors = {}
    name = "<header>"
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            n_values = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            end = offset + 8 * n_values
            if end > len(blob):
                raise CheckpointError(f"{path}: tensor '{name}' is truncated")
            tensors[name] = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape).copy()
            offset = end
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed entry after tensor '{name}'") from exc
    if offset != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - offset} trailing bytes after last tensor")
    return tensors
