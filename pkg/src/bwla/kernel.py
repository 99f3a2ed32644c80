"""Bit-packed one-bit-weight inference and the GEMV micro-benchmark.

``binary_gemv`` computes dequantize(bw) @ x directly on packed sign words
by folding the per-channel affine code into the sign-dot:

* row axis:    y_i = scale_i * (S_i . x) + offset_i * sum(x)
* column axis: y   = S @ (scale * x) + dot(offset, x) * ones

``binary_gemv_codes`` is the quantized-activation variant: the sign-dot runs
in exact int64 arithmetic over bit planes of the codes and the affine
activation decoding (scale, zero point) is applied afterwards, so it matches
the float path on dequantized codes to float rounding.

``full_inference`` composes the deployed layer: rotate the activation,
binary GEMV in the rotated centered frame, add back the per-row shifts
removed by centering, then the low-rank correction path (whose right factor
is stored in the rotated frame so it consumes the same activation vector).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .actquant import QuantizedActivations, quantize_token
from .binarize import BinarizedWeights, dequantize
from .kronecker import KroneckerRotation, apply_flops, apply_transpose_to_vec
from .numerics import NumericsError, as_vector


def binary_gemv(bw: BinarizedWeights, x, accumulate: str = "f64") -> np.ndarray:
    """dequantize(bw) @ x without materializing the dense weights.

    ``accumulate`` picks the sign-dot partial precision: "f64" (default,
    library accuracy contract) or "f32" (bandwidth-optimized benchmark
    kernel).
    """
    vec = as_vector(x, "activation")
    n, m = bw.shape
    if vec.size != m:
        raise NumericsError(f"activation length {vec.size} != {m}")
    if accumulate not in ("f32", "f64"):
        raise NumericsError("accumulate must be 'f32' or 'f64'")
    if bw.axis == "row":
        sdot = _kernels.sign_dot(bw.packed, vec, m, accumulate=accumulate)
        return bw.scale * sdot + bw.offset * float(vec.sum())
    sdot = _kernels.sign_dot(bw.packed, bw.scale * vec, m, accumulate=accumulate)
    return sdot + float(bw.offset @ vec)


def binary_gemv_codes(bw: BinarizedWeights, q: QuantizedActivations) -> np.ndarray:
    """dequantize(bw) @ dequantize_token(q) with an exact integer sign-dot."""
    n, m = bw.shape
    if q.codes.shape[0] != m:
        raise NumericsError(f"code length {q.codes.shape[0]} != {m}")
    if bw.axis != "row":
        raise NumericsError("integer path supports row-axis layers")
    cols_padded = bw.packed.shape[1] * 64
    planes, totals = _kernels.pack_bit_planes(q.codes, q.bits, cols_padded)
    sdot_codes = _kernels.sign_dot_planes(bw.packed, planes, totals)
    sign_sums = _kernels.row_sign_sums(bw.packed, m)
    # S . (s*(codes - z)) = s * (S . codes) - s*z * (S . 1)
    sdot = q.scale * (sdot_codes.astype(np.float64) - q.zero_point * sign_sums)
    xsum = q.scale * (float(q.codes.sum(dtype=np.int64)) - q.zero_point * m)
    return bw.scale * sdot + bw.offset * xsum


@dataclass(frozen=True)
class PackedLayer:
    """Everything needed to evaluate the original dense product W @ x from the
    quantized artifact: packed signs of the centered rotated corrected
    weights, the per-row means removed by centering, the rotation, and the
    low-rank correction with its right factor pre-rotated.
    """

    weights: BinarizedWeights
    row_shift: np.ndarray                  # (n,) means removed by centering
    rotation: KroneckerRotation | None
    residual_left: np.ndarray | None       # A, (n, k)
    residual_right_rot: np.ndarray | None  # B @ R, (k, m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def rotated_activation(self, x) -> np.ndarray:
        vec = as_vector(x, "activation")
        if self.rotation is None:
            return vec
        return apply_transpose_to_vec(self.rotation, vec)


def full_inference(layer: PackedLayer, x, act_bits: int | None = None,
                   int_accumulate: bool = True) -> np.ndarray:
    """Approximate W @ x from the packed artifact.

    With ``act_bits`` set, the rotated activation is quantized per token
    first; ``int_accumulate`` selects the exact integer sign-dot over the
    float path on the dequantized codes (both are provided; they agree to
    float rounding).
    """
    xr = layer.rotated_activation(x)
    if act_bits is None:
        y = binary_gemv(layer.weights, xr)
        xr_used = xr
    else:
        q = quantize_token(xr, act_bits)
        xr_used = q.scale * (q.codes.astype(np.float64) - q.zero_point)
        if int_accumulate and layer.weights.axis == "row":
            y = binary_gemv_codes(layer.weights, q)
        else:
            y = binary_gemv(layer.weights, xr_used)
    y = y + layer.row_shift * float(xr_used.sum())
    if layer.residual_left is not None and layer.residual_right_rot is not None:
        y = y + layer.residual_left @ (layer.residual_right_rot @ xr_used)
    return y


def dense_equivalent(layer: PackedLayer) -> np.ndarray:
    """Dense matrix computing the same function as ``full_inference`` without
    activation quantization; diagnostic oracle for the kernel algebra.
    """
    n, m = layer.shape
    w_frame = dequantize(layer.weights) + layer.row_shift[:, None]
    if layer.residual_left is not None and layer.residual_right_rot is not None:
        w_frame = w_frame + layer.residual_left @ layer.residual_right_rot
    if layer.rotation is None:
        return w_frame
    from .kronecker import apply_inverse_to_rows

    return apply_inverse_to_rows(layer.rotation, w_frame)


def packed_bytes(n: int, m: int) -> int:
    """Serialized sign payload: one bit per weight, byte-aligned overall."""
    return (n * m + 7) // 8


def memory_report(layer: PackedLayer, scale_bytes: int = 4) -> dict:
    n, m = layer.shape
    channels = n if layer.weights.axis == "row" else m
    return {
        "sign_payload_bytes": packed_bytes(n, m),
        "sign_padded_bytes": layer.weights.packed.nbytes,
        "scale_offset_bytes": 2 * channels * scale_bytes,
        "dense_f32_bytes": 4 * n * m,
    }


def inference_flops(layer: PackedLayer, act_bits: int | None = None) -> dict:
    """Multiply-add counters for the deployed path; used to check that the
    rotation + residual overhead stays a vanishing fraction of the sign-dot.
    """
    n, m = layer.shape
    counts = {"binary_gemv": 2 * n * m, "rotation": 0, "residual": 0}
    if layer.rotation is not None:
        counts["rotation"] = apply_flops(layer.rotation.dims)
    if layer.residual_left is not None:
        k = layer.residual_left.shape[1]
        counts["residual"] = 2 * k * m + 2 * n * k
    return counts


# ---------------------------------------------------------------------------
# Micro-benchmark harness
# ---------------------------------------------------------------------------

BENCH_VARIANTS = ("dense_f32", "packed_real", "packed_real_f64", "packed_int6")


def bench_gemv(shapes, repetitions: int = 100, seed: int = 0,
               act_bits: int = 6) -> list[dict]:
    """Median/p10/p90 wall times of dense f32 BLAS GEMV against the packed
    kernels at each shape, with a correctness check on the first iteration.

    Variants: the f32-partial packed kernel (bandwidth-optimized), the
    f64-partial packed kernel (library default), and the integer bit-plane
    kernel on quantized activations. Single-threaded: BLAS pools are pinned
    to one thread for the duration.
    """
    from threadpoolctl import threadpool_limits

    from .binarize import binarize

    _kernels.warmup()
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    rows = []
    with threadpool_limits(limits=1):
        for (n, m) in shapes:
            dense64 = rng.standard_normal((n, m))
            bw = binarize(dense64, axis="row")
            w32 = dequantize(bw).astype(np.float32)
            x64 = rng.standard_normal(m)
            x32 = x64.astype(np.float32)
            q = quantize_token(x64, act_bits)

            oracle = dequantize(bw) @ x64
            scale = max(float(np.abs(oracle).max()), 1e-300)
            for mode in ("f32", "f64"):
                got = binary_gemv(bw, x64, accumulate=mode)
                rel = float(np.abs(got - oracle).max()) / scale
                if rel > 1e-6:
                    raise NumericsError(f"packed/dense mismatch {rel:.2e} "
                                        f"({mode}) at {n}x{m}")
            xq = q.scale * (q.codes.astype(np.float64) - q.zero_point)
            oracle_q = dequantize(bw) @ xq
            y_int = binary_gemv_codes(bw, q)
            rel_q = np.abs(y_int - oracle_q).max() / max(np.abs(oracle_q).max(), 1e-300)
            if rel_q > 1e-9:
                raise NumericsError(f"integer path mismatch {rel_q:.2e} at {n}x{m}")

            variants = {
                "dense_f32": lambda: w32 @ x32,
                "packed_real": lambda: binary_gemv(bw, x64, accumulate="f32"),
                "packed_real_f64": lambda: binary_gemv(bw, x64, accumulate="f64"),
                f"packed_int{act_bits}": lambda: binary_gemv_codes(bw, q),
            }
            packed_in = bw.packed.nbytes + 8 * n
            touched = {
                "dense_f32": 4 * n * m + 4 * m + 4 * n,
                "packed_real": packed_in + 4 * m,
                "packed_real_f64": packed_in + 8 * m,
                f"packed_int{act_bits}": packed_in + act_bits * ((m + 7) // 8),
            }
            for name, fn in variants.items():
                fn()  # warm caches
                times = np.empty(repetitions)
                for r in range(repetitions):
                    t0 = time.perf_counter_ns()
                    fn()
                    times[r] = time.perf_counter_ns() - t0
                rows.append({
                    "shape": f"{n}x{m}",
                    "variant": name,
                    "median_ns": float(np.median(times)),
                    "p10_ns": float(np.percentile(times, 10)),
                    "p90_ns": float(np.percentile(times, 90)),
                    "bytes_touched": touched[name],
                })
    return rows


def bench_rows_to_csv(rows) -> str:
    lines = ["shape,variant,median_ns,p10_ns,p90_ns,bytes_touched"]
    for r in rows:
        lines.append(
            f"{r['shape']},{r['variant']},{r['median_ns']:.0f},"
            f"{r['p10_ns']:.0f},{r['p90_ns']:.0f},{r['bytes_touched']}"
        )
    return "\n".join(lines) + "\n"
