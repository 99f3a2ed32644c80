"""Per-channel weight binarization and its error analysis.

A channel (row or column, selected by ``axis``) is coded as
``sign(x - offset) * scale + offset`` with offset = channel mean and
scale = mean absolute deviation from the offset. Sign(0) is -1. Signs are
stored bit-packed, 64 per machine word, little-endian bit order (bit j of
word w along a row covers column 64 w + j; set bit means +1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kronecker import KroneckerRotation
from .numerics import NumericsError, as_matrix, as_vector

WORD_BITS = 64


def pack_signs(positive) -> np.ndarray:
    """Pack a boolean matrix (True = +1) into uint64 words, rows padded with
    zero bits to a whole word count.
    """
    b = np.asarray(positive, dtype=bool)
    if b.ndim != 2:
        raise NumericsError("expected a 2-D sign matrix")
    n, m = b.shape
    words = (m + WORD_BITS - 1) // WORD_BITS
    padded = np.zeros((n, words * WORD_BITS), dtype=np.uint8)
    padded[:, :m] = b
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(packed).view(np.uint64)


def unpack_signs(packed: np.ndarray, cols: int) -> np.ndarray:
    """Inverse of ``pack_signs``; returns a +-1.0 float matrix."""
    if packed.dtype != np.uint64 or packed.ndim != 2:
        raise NumericsError("expected packed uint64 words")
    bits = np.unpackbits(packed.view(np.uint8), axis=1, bitorder="little")[:, :cols]
    return np.where(bits.astype(bool), 1.0, -1.0)


@dataclass(frozen=True)
class BinarizedWeights:
    """Packed signs plus per-channel scale/offset along the chosen axis."""

    packed: np.ndarray   # (n, words) uint64, bit set means +1
    scale: np.ndarray    # per channel (delta / alpha), >= 0
    offset: np.ndarray   # per channel (mu / beta)
    axis: str            # "row" or "column"
    shape: tuple[int, int]

    def __post_init__(self):
        if self.axis not in ("row", "column"):
            raise NumericsError("axis must be 'row' or 'column'")
        n, m = self.shape
        expected = n if self.axis == "row" else m
        if self.scale.shape != (expected,) or self.offset.shape != (expected,):
            raise NumericsError("scale/offset length must match the channel count")
        if np.any(self.scale < 0):
            raise NumericsError("scales must be nonnegative")

    @property
    def words_per_row(self) -> int:
        return self.packed.shape[1]

    def signs(self) -> np.ndarray:
        return unpack_signs(self.packed, self.shape[1])


def binarize(x, axis: str = "row") -> BinarizedWeights:
    """Extract per-channel offset (mean), scale (mean |deviation|), and signs."""
    mat = as_matrix(x, "weights")
    if axis == "row":
        offset = mat.mean(axis=1)
        dev = mat - offset[:, None]
        scale = np.abs(dev).mean(axis=1)
    elif axis == "column":
        offset = mat.mean(axis=0)
        dev = mat - offset[None, :]
        scale = np.abs(dev).mean(axis=0)
    else:
        raise NumericsError("axis must be 'row' or 'column'")
    return BinarizedWeights(
        packed=pack_signs(dev > 0),
        scale=scale,
        offset=offset,
        axis=axis,
        shape=mat.shape,
    )


def dequantize(bw: BinarizedWeights) -> np.ndarray:
    """Exact affine reconstruction sign * scale + offset."""
    s = bw.signs()
    if bw.axis == "row":
        return s * bw.scale[:, None] + bw.offset[:, None]
    return s * bw.scale[None, :] + bw.offset[None, :]


def optimal_scale_error(row) -> tuple[float, float]:
    """Best single scale for coding a row as +-alpha, and its squared error.

    The minimizer is the mean magnitude and the error equals the number of
    entries times the variance of the magnitudes, so it vanishes exactly when
    all magnitudes agree.
    """
    v = as_vector(row, "row")
    a = np.abs(v)
    alpha = float(a.mean())
    err = float(np.sum((a - alpha) ** 2))
    return alpha, err


def binarization_mse(x, axis: str = "row") -> float:
    """Mean squared reconstruction error of binarize -> dequantize."""
    mat = as_matrix(x, "weights")
    rec = dequantize(binarize(mat, axis=axis))
    return float(np.mean((mat - rec) ** 2))


def effective_bits(n: int, m: int, rot: KroneckerRotation | None = None,
                   residual=None, axis: str = "row",
                   scale_precision: int = 16) -> float:
    """Stored bits per weight: one sign bit per entry plus
    ``scale_precision``-bit side parameters (channel scales/offsets, rotation
    factors, residual factors) amortized over n*m weights.
    """
    channels = n if axis == "row" else m
    side = 2 * channels
    if rot is not None:
        side += rot.dims.n1 ** 2 + rot.dims.n2 ** 2
    if residual is not None:
        side += residual.param_count
    return 1.0 + scale_precision * side / (n * m)
