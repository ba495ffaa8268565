"""Sign quantization of embeddings into packed binary codes.

The sign layer has no usable gradient, so training bridges gradients straight
through it (numcore.sign_st); the cubic quantization penalty pulls embedding
coordinates toward {-1, +1} so the bridge loses little.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc

MAX_PACK_BITS = 64


@dataclass(frozen=True)
class HashCode:
    """D values in {-1,+1} plus the same code packed into one 64-bit word."""

    u: np.ndarray
    bits: int

    def __len__(self) -> int:
        return len(self.u)


def pack_bits(u: np.ndarray) -> int:
    """Little-endian packing: bit k of the word is (u_k + 1) / 2, k=0 the LSB."""
    u = np.asarray(u)
    if len(u) > MAX_PACK_BITS:
        raise ValueError(f"cannot pack {len(u)} bits into a {MAX_PACK_BITS}-bit word")
    word = 0
    for k in range(len(u) - 1, -1, -1):
        word = (word << 1) | (1 if u[k] > 0 else 0)
    return word


def unpack_bits(word: int, d: int) -> np.ndarray:
    return np.array([1.0 if (word >> k) & 1 else -1.0 for k in range(d)])


def pack_bits_many(u: np.ndarray) -> np.ndarray:
    """Vectorized pack of an (N, D<=64) sign matrix into uint64 words."""
    u = np.asarray(u)
    n, d = u.shape
    if d > MAX_PACK_BITS:
        raise ValueError(f"cannot pack {d} bits into a {MAX_PACK_BITS}-bit word")
    bits = np.zeros((n, MAX_PACK_BITS), dtype=np.uint8)
    bits[:, :d] = u > 0
    return np.packbits(bits, axis=1, bitorder="little").view(np.uint64).reshape(n)


def unpack_bits_many(words: np.ndarray, d: int) -> np.ndarray:
    raw = np.unpackbits(np.asarray(words, dtype=np.uint64).view(np.uint8).reshape(-1, 8),
                        axis=1, bitorder="little")[:, :d]
    return np.where(raw > 0, 1.0, -1.0)


def quantize(z: np.ndarray) -> HashCode:
    """u_k = sign(z_k) with sign(0) := +1."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("quantize: non-finite embedding")
    u = np.where(z >= 0.0, 1.0, -1.0)
    return HashCode(u=u, bits=pack_bits(u))


def quantization_loss(z: np.ndarray, u: np.ndarray) -> float:
    """Sum of cubed coordinate gaps |z_k - u_k|^3."""
    z, u = np.asarray(z), np.asarray(u)
    if z.shape != u.shape:
        raise ValueError(f"quantization_loss: length mismatch {z.shape} vs {u.shape}")
    return float(np.sum(np.abs(z - u) ** 3))


def quantize_tensor(z: nc.Tensor) -> nc.Tensor:
    """Graph-aware quantization: sign forward, straight-through backward."""
    return nc.sign_st(z)


def quantization_loss_tensor(z: nc.Tensor, u: nc.Tensor) -> nc.Tensor:
    """Cubic gap loss with the code treated as the current discrete iterate.

    The code enters as a constant, so the loss gradient w.r.t. z is
    3 sign(z - u)(z - u)^2, independent of the straight-through bridge.
    """
    gap = nc.absolute(nc.sub(z, nc.constant(u.data)))
    return nc.sum_all(nc.mul(nc.mul(gap, gap), gap))
