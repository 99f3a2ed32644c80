"""Compiled inner loops for the bit-packed GEMV paths.

Two kernels, both single-threaded by design:

* ``sign_dot_f32``: packed {+-1} x real vector. Lane-separated
  select-and-accumulate: for each of the 8 bit positions within a byte the
  inner loop runs over contiguous packed bytes and a stride-gathered copy of
  the activations, which the compiler turns into wide masked adds. The row
  result is 2 * (sum over set bits) - sum(x).
* ``sign_dot_planes``: packed {+-1} x bit-planes of integer codes. Exact
  int64 arithmetic: per plane, popcount(signs AND plane) combined as
  2 * count - plane_total, scaled by the plane weight.

Falls back to pure numpy implementations when numba is unavailable or
disabled via BWLA_NO_NUMBA=1 (same results, slower).
"""

from __future__ import annotations

import os

import numpy as np

_USE_NUMBA = os.environ.get("BWLA_NO_NUMBA", "0") != "1"

if _USE_NUMBA:
    try:
        import numba
        from numba import njit
    except ImportError:  # pragma: no cover - exercised via BWLA_NO_NUMBA
        _USE_NUMBA = False


def backend() -> str:
    return "numba" if _USE_NUMBA else "numpy"


if _USE_NUMBA:

    @njit(cache=True, fastmath=True)
    def _sign_dot_f32_impl(pb, xperm, xtot, out):  # pragma: no cover - compiled
        nrows, nbytes = pb.shape
        for i in range(nrows):
            pos = np.float32(0.0)
            for k in range(8):
                xk = xperm[k]
                msk = np.uint8(1 << k)
                acc = np.float32(0.0)
                for c in range(nbytes):
                    acc += xk[c] if pb[i, c] & msk else np.float32(0.0)
                pos += acc
            out[i] = np.float32(2.0) * pos - xtot

    @njit(cache=True, fastmath=True)
    def _sign_dot_f64_impl(pb, xperm, xtot, out):  # pragma: no cover - compiled
        nrows, nbytes = pb.shape
        for i in range(nrows):
            pos = 0.0
            for k in range(8):
                xk = xperm[k]
                msk = np.uint8(1 << k)
                acc = 0.0
                for c in range(nbytes):
                    acc += xk[c] if pb[i, c] & msk else 0.0
                pos += acc
            out[i] = 2.0 * pos - xtot

    @njit(cache=True)
    def _popcount64(v):  # pragma: no cover - compiled
        v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
        v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
        v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
        return (v * np.uint64(0x0101010101010101)) >> np.uint64(56)

    @njit(cache=True)
    def _sign_dot_planes_impl(pw, planes, plane_totals, out):  # pragma: no cover - compiled
        nrows, nwords = pw.shape
        nplanes = planes.shape[0]
        for i in range(nrows):
            acc = np.int64(0)
            for p in range(nplanes):
                count = np.uint64(0)
                for w in range(nwords):
                    count += _popcount64(pw[i, w] & planes[p, w])
                acc += (np.int64(2) * np.int64(count) - plane_totals[p]) << p
            out[i] = acc

    @njit(cache=True)
    def _row_popcount_impl(pw, tail_mask, out):  # pragma: no cover - compiled
        nrows, nwords = pw.shape
        for i in range(nrows):
            count = np.uint64(0)
            for w in range(nwords - 1):
                count += _popcount64(pw[i, w])
            count += _popcount64(pw[i, nwords - 1] & tail_mask)
            out[i] = np.int64(count)


def _lane_permute(xpad: np.ndarray, nbytes: int) -> tuple[np.ndarray, float]:
    xperm = np.zeros((8, nbytes), dtype=xpad.dtype)
    for k in range(8):
        lane = xpad[k::8]
        xperm[k, : lane.shape[0]] = lane
    return xperm, float(np.sum(xpad, dtype=np.float64))


def sign_dot(packed_words: np.ndarray, x: np.ndarray, cols: int,
             accumulate: str = "f64") -> np.ndarray:
    """Row-wise dot products of packed +-1 signs with a real vector.

    ``accumulate`` selects float64 (default; meets the library accuracy
    contract on any instance) or float32 partials (the bandwidth-optimized
    kernel used by the benchmark; worst-case rounding grows with the width).
    """
    nbytes = packed_words.shape[1] * 8          # bytes per row
    padded_cols = packed_words.shape[1] * 64    # bit capacity per row
    dtype = np.float32 if accumulate == "f32" else np.float64
    xpad = np.zeros(padded_cols, dtype=dtype)
    xpad[:cols] = x
    if _USE_NUMBA:
        pb = packed_words.view(np.uint8)
        xperm, xtot = _lane_permute(xpad, nbytes)
        out = np.empty(packed_words.shape[0], dtype=dtype)
        if accumulate == "f32":
            _sign_dot_f32_impl(pb, xperm, np.float32(xtot), out)
        else:
            _sign_dot_f64_impl(pb, xperm, xtot, out)
        return out.astype(np.float64)
    bits = np.unpackbits(packed_words.view(np.uint8), axis=1, bitorder="little")
    signs = 2.0 * bits.astype(np.float64) - 1.0
    return signs @ xpad.astype(np.float64)


def sign_dot_planes(packed_words: np.ndarray, planes: np.ndarray,
                    plane_totals: np.ndarray) -> np.ndarray:
    """Exact integer sign-dot against bit-plane decomposed codes.

    Returns sum_j sign_ij * code_j as int64 (padding columns carry zero
    codes, so padded sign bits never contribute).
    """
    if _USE_NUMBA:
        out = np.empty(packed_words.shape[0], dtype=np.int64)
        _sign_dot_planes_impl(packed_words, planes,
                              plane_totals.astype(np.int64), out)
        return out
    counts = np.bitwise_count(packed_words[:, None, :] & planes[None, :, :]).sum(axis=2)
    contrib = 2 * counts.astype(np.int64) - plane_totals.astype(np.int64)[None, :]
    weights = (1 << np.arange(planes.shape[0], dtype=np.int64))
    return contrib @ weights


def row_sign_sums(packed_words: np.ndarray, cols: int) -> np.ndarray:
    """sum_j sign_ij over the real (unpadded) columns, as int64."""
    nwords = packed_words.shape[1]
    tail_bits = cols - (nwords - 1) * 64
    tail_mask = np.uint64(2**tail_bits - 1) if tail_bits < 64 else np.uint64(0xFFFFFFFFFFFFFFFF)
    if _USE_NUMBA:
        out = np.empty(packed_words.shape[0], dtype=np.int64)
        _row_popcount_impl(packed_words, tail_mask, out)
        pos = out
    else:
        masked = packed_words.copy()
        masked[:, -1] &= tail_mask
        pos = np.bitwise_count(masked).sum(axis=1).astype(np.int64)
    return 2 * pos - cols


def pack_bit_planes(codes: np.ndarray, bits: int, cols_padded: int) -> tuple[np.ndarray, np.ndarray]:
    """Decompose integer codes into packed bit planes plus per-plane totals."""
    c = np.zeros(cols_padded, dtype=np.uint16)
    c[: codes.shape[0]] = codes
    planes = np.empty((bits, cols_padded // 64), dtype=np.uint64)
    totals = np.empty(bits, dtype=np.int64)
    for p in range(bits):
        bitvals = ((c >> p) & 1).astype(np.uint8)
        planes[p] = np.packbits(bitvals, bitorder="little").view(np.uint64)
        totals[p] = int(bitvals.sum())
    return planes, totals


def warmup():
    """Trigger JIT compilation so benchmarks do not time compilation."""
    if not _USE_NUMBA:
        return
    pw = pack_dummy()
    sign_dot(pw, np.ones(8), 8, accumulate="f32")
    sign_dot(pw, np.ones(8), 8, accumulate="f64")
    planes, totals = pack_bit_planes(np.arange(8, dtype=np.uint16), 2, 64)
    sign_dot_planes(pw, planes, totals)
    row_sign_sums(pw, 8)


def pack_dummy() -> np.ndarray:
    return np.array([[np.uint64(0xA5)]], dtype=np.uint64)
