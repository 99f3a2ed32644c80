"""bwla: post-training quantization toolkit producing 1-bit weights with
low-bit activations.

Dense weight matrices are reshaped toward a binarization-friendly two-mode
form by a learned orthogonal rotation in Kronecker-factored form, refined by
a rank-constrained residual, binarized per channel, and executed with a
bit-packed kernel against optionally quantized activations.
"""

from .actquant import QuantizedActivations, TailStats, dequantize_token, quantize_token, tail_stats
from .binarize import (
    BinarizedWeights,
    binarization_mse,
    binarize,
    dequantize,
    effective_bits,
    optimal_scale_error,
)
from .gmm import GmmParams, Responsibilities, balance_regularizer, em_update, grad_entries, nll, responsibilities
from .kernel import PackedLayer, bench_gemv, binary_gemv, binary_gemv_codes, full_inference
from .kronecker import (
    KroneckerDims,
    KroneckerRotation,
    apply_to_row,
    apply_to_rows,
    apply_transpose_to_vec,
    factor_dims,
    reorthogonalize,
)
from .numerics import SvdResult, Tolerances, reshape_row_to_mat, svd, truncated_svd
from .okt import OktState, center_rows, mm_surrogate, okt_step, run_okt
from .pipeline import BwlaConfig, RunResult, run_bwla
from .psp import LowRankResidual, PspState, adjoint_gradient, factor_residual, psp_step, run_psp
from .synth import SynthSpec, gen, make_rng

__version__ = "0.1.0"
