"""Weight container: magic, version, embedded config, named float32 blocks,
trailing CRC32 over everything that precedes it."""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from ..errors import DataError
from .unet import NetConfig, NetworkWeights

WEIGHTS_MAGIC = b"E2VW"
WEIGHTS_VERSION = 1

_KIND_PARAM = 0
_KIND_STAT = 1


def save_weights(weights: NetworkWeights, path) -> None:
    out = bytearray()
    out += WEIGHTS_MAGIC
    out += struct.pack("<I", WEIGHTS_VERSION)
    cfg = json.dumps(asdict(weights.config), sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(cfg))
    out += cfg
    blocks = [(_KIND_PARAM, k, v) for k, v in weights.params.items()]
    blocks += [(_KIND_STAT, k, v) for k, v in weights.stats.items()]
    out += struct.pack("<I", len(blocks))
    for kind, name, arr in blocks:
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        out += struct.pack("<BH", kind, len(nb))
        out += nb
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(out))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataError(f"{self.path}: truncated weight file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_weights(path) -> NetworkWeights:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != WEIGHTS_MAGIC:
        raise DataError(f"{path}: not a weight file (bad magic)")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise DataError(f"{path}: checksum mismatch (file corrupt)")

    r = _Reader(data[:-4], path)
    r.take(4)  # magic
    (version,) = r.unpack("<I")
    if version != WEIGHTS_VERSION:
        raise DataError(f"{path}: unsupported weight format version {version}")
    (cfg_len,) = r.unpack("<I")
    try:
        cfg_dict = json.loads(r.take(cfg_len).decode("utf-8"))
        config = NetConfig(**cfg_dict)
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: bad embedded config ({exc})") from None

    (n_blocks,) = r.unpack("<I")
    params, stats = {}, {}
    for _ in range(n_blocks):
        kind, name_len = r.unpack("<BH")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(r.take(4 * count), "<f4").reshape(shape).copy()
        if kind == _KIND_PARAM:
            params[name] = arr
        elif kind == _KIND_STAT:
            stats[name] = arr
        else:
            raise DataError(f"{path}: unknown block kind {kind}")
    if r.pos != len(r.data):
        raise DataError(f"{path}: {len(r.data) - r.pos} trailing bytes after blocks")
    return NetworkWeights(config, params, stats)
