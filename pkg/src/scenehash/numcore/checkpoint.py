"""Named-parameter checkpoint files.

Layout: magic "FGPT", version u16, then one record per parameter:
name length u16, utf-8 name, rank u8, dims u32 each, row-major f64 payload.
All integers little-endian. Record order is preserved on load.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FGPT"
VERSION = 1


class CheckpointError(IOError):
    pass


def save_params(params: dict[str, np.ndarray], path) -> None:
    chunks = [MAGIC, struct.pack("<H", VERSION)]
    for name, arr in params.items():
        arr = np.asarray(arr, dtype="<f8")
        enc = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(enc)))
        chunks.append(enc)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if len(buf) < 6 or buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, expected {MAGIC!r}")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}, expected {VERSION}")
    params: dict[str, np.ndarray] = {}
    off = 6
    while off < len(buf):
        try:
            (nlen,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + nlen].decode("utf-8")
            if len(buf[off:off + nlen]) != nlen:
                raise struct.error("short name")
            off += nlen
            (rank,) = struct.unpack_from("<B", buf, off)
            off += 1
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            count = int(np.prod(dims)) if rank else 1
            payload = buf[off:off + 8 * count]
            if len(payload) != 8 * count:
                raise struct.error("short payload")
            off += 8 * count
        except struct.error as e:
            raise CheckpointError(f"{path}: truncated checkpoint ({e})") from None
        params[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
    return params
