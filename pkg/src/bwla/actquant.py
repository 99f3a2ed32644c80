"""Per-token asymmetric activation quantization and tail diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import NumericsError, as_vector


@dataclass(frozen=True)
class QuantizedActivations:
    codes: np.ndarray  # integer codes in [0, 2^bits - 1]
    scale: float
    zero_point: int
    bits: int


def _round_half_away(x: np.ndarray) -> np.ndarray:
    # np.round is half-to-even; ties here round away from zero, which changes
    # codes exactly at grid midpoints.
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_token(x, bits: int) -> QuantizedActivations:
    """Asymmetric min/max quantization of one activation vector.

    scale = (max - min) / (2^bits - 1) (1.0 for a constant vector),
    zero_point = round(-min / scale) clamped to the code range, codes
    clamped after rounding.
    """
    if not 2 <= bits <= 8:
        raise NumericsError("bits must be in [2, 8]")
    v = as_vector(x, "token")
    qmax = (1 << bits) - 1
    lo = float(v.min())
    hi = float(v.max())
    scale = (hi - lo) / qmax if hi > lo else 1.0
    zero_point = int(min(max(_round_half_away(np.asarray(-lo / scale)), 0.0), qmax))
    codes = _round_half_away(v / scale) + zero_point
    codes = np.clip(codes, 0, qmax).astype(np.uint8)
    return QuantizedActivations(codes=codes, scale=scale, zero_point=zero_point, bits=bits)


def dequantize_token(q: QuantizedActivations) -> np.ndarray:
    return q.scale * (q.codes.astype(np.float64) - q.zero_point)


def quantize_tokens(x, bits: int) -> list[QuantizedActivations]:
    """Map over the rows of a token batch independently."""
    arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return [quantize_token(row, bits) for row in arr]


@dataclass(frozen=True)
class TailStats:
    kurtosis: float          # excess kurtosis
    max_over_rms: float
    quantile_99_over_rms: float


def tail_stats(x) -> TailStats:
    """Outlier metrics of one vector: excess kurtosis, max |x| / RMS, and the
    99th-percentile |x| / RMS. Requires length >= 4 and nonzero variance.
    """
    v = as_vector(x, "sample")
    if v.size < 4:
        raise NumericsError("need at least 4 samples for tail statistics")
    m2 = float(np.mean(v * v))
    if m2 <= 0 or np.var(v) == 0:
        raise NumericsError("tail statistics need nonzero variance")
    rms = np.sqrt(m2)
    centered = v - v.mean()
    var = float(np.mean(centered**2))
    kurt = float(np.mean(centered**4) / (var * var) - 3.0)
    a = np.abs(v)
    return TailStats(
        kurtosis=kurt,
        max_over_rms=float(a.max() / rms),
        quantile_99_over_rms=float(np.quantile(a, 0.99) / rms),
    )
