"""Synthetic instance generators and brute-force reference solvers for tests.

All randomness flows through numpy's Philox counter-based bit generator
(4x64, fixed round constants), keyed directly by the 64-bit seed, so the
same (spec, seed) pair reproduces the same bytes. Tests must not fall back
to module-level or OS-seeded generators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kronecker import KroneckerDims, KroneckerRotation, apply_inverse_to_rows, factor_dims
from .numerics import NumericsError


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox4x64) keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


@dataclass(frozen=True)
class SynthSpec:
    kind: str                      # gaussian_rows | planted_bimodal | heavy_tail_acts
    rows: int
    cols: int
    seed: int
    row_sigma: tuple = ()          # gaussian_rows: per-row stddev (scalar broadcast if len 1)
    center_range: tuple = (0.5, 2.0)   # planted: range of per-row magnitudes
    noise: float = 0.0             # planted: additive Gaussian noise stddev
    spike_rate: float = 0.001      # heavy tails: fraction of entries spiked
    spike_magnitude: float = 50.0  # heavy tails: spike size in RMS units

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise NumericsError("dimensions must be positive")
        if self.kind not in ("gaussian_rows", "planted_bimodal", "heavy_tail_acts"):
            raise NumericsError(f"unknown synth kind {self.kind!r}")
        if self.kind == "planted_bimodal" and self.cols % 2 != 0:
            raise NumericsError("planted instances need an even column count "
                                "(rows are sign-balanced by construction)")


@dataclass(frozen=True)
class PlantedInstance:
    """A matrix with a known bimodal decomposition W = (S * c) @ R_true^T."""

    W: np.ndarray
    rotation: KroneckerRotation
    signs: np.ndarray    # (n, m) +-1, each row exactly balanced
    centers: np.ndarray  # (n,) per-row magnitude


def gen(spec: SynthSpec):
    """Generate the instance described by ``spec`` (deterministic in seed)."""
    rng = make_rng(spec.seed)
    if spec.kind == "gaussian_rows":
        return _gen_gaussian_rows(spec, rng)
    if spec.kind == "planted_bimodal":
        return _gen_planted(spec, rng)
    return _gen_heavy_tails(spec, rng)


def _gen_gaussian_rows(spec: SynthSpec, rng) -> np.ndarray:
    sig = np.asarray(spec.row_sigma if spec.row_sigma else (1.0,), dtype=np.float64)
    if sig.size == 1:
        sig = np.full(spec.rows, float(sig[0]))
    if sig.size != spec.rows:
        raise NumericsError("row_sigma must be scalar or one value per row")
    return rng.standard_normal((spec.rows, spec.cols)) * sig[:, None]


def _balanced_signs(rng, n: int, m: int) -> np.ndarray:
    signs = np.ones((n, m))
    for i in range(n):
        idx = rng.permutation(m)
        signs[i, idx[m // 2:]] = -1.0
    return signs


def _gen_planted(spec: SynthSpec, rng) -> PlantedInstance:
    n, m = spec.rows, spec.cols
    dims = factor_dims(m)
    signs = _balanced_signs(rng, n, m)
    lo, hi = spec.center_range
    centers = rng.uniform(lo, hi, size=n)
    rot = _haar_rotation(dims, rng)
    bimodal = signs * centers[:, None]
    if spec.noise > 0:
        bimodal = bimodal + spec.noise * rng.standard_normal((n, m))
    w = apply_inverse_to_rows(rot, bimodal)  # W @ R_true recovers the bimodal frame
    return PlantedInstance(W=w, rotation=rot, signs=signs, centers=centers)


def _haar_rotation(dims: KroneckerDims, rng) -> KroneckerRotation:
    def haar(k):
        q, r = np.linalg.qr(rng.standard_normal((k, k)))
        d = np.diag(r)
        return q * np.sign(np.where(d == 0, 1.0, d))
    return KroneckerRotation(dims=dims, R1=haar(dims.n1), R2=haar(dims.n2))


def _gen_heavy_tails(spec: SynthSpec, rng) -> np.ndarray:
    """Token batch of Gaussians with sparse large spikes (rows = tokens).

    Every token carries exactly max(1, round(rate * length)) spikes at
    random positions and signs, so each one is heavy-tailed by construction
    and the peak-to-RMS level follows from the spike arithmetic.
    """
    n, m = spec.rows, spec.cols
    x = rng.standard_normal((n, m))
    k = max(1, int(round(spec.spike_rate * m)))
    for i in range(n):
        pos = rng.choice(m, size=k, replace=False)
        signs = np.where(rng.random(k) < 0.5, -1.0, 1.0)
        x[i, pos] = spec.spike_magnitude * signs
    return x


def brute_force_procrustes(v_grids, r_other, targets, weights,
                           side: str, angle_step_deg: float = 0.1) -> np.ndarray:
    """Exhaustive 2x2 orthogonal search (rotations and reflections) for the
    weighted misfit sum_i l_i || R1^T V_i R2 - T_i ||_F^2, over the factor
    named by ``side`` ("r1" or "r2") with the other factor fixed.

    Only defined for a 2x2 factor; test oracle for the closed-form updates.
    """
    v = np.asarray(v_grids, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    lam = np.asarray(weights, dtype=np.float64).ravel()
    angles = np.deg2rad(np.arange(0.0, 360.0, angle_step_deg))
    best = (np.inf, None)
    flip = np.array([[1.0, 0.0], [0.0, -1.0]])
    for theta in angles:
        c, s = np.cos(theta), np.sin(theta)
        rotation = np.array([[c, -s], [s, c]])
        for cand in (rotation, rotation @ flip):
            if side == "r1":
                fit = np.einsum("ba,nbc,cd->nad", cand, v, r_other, optimize=True)
            elif side == "r2":
                fit = np.einsum("ba,nbc,cd->nad", r_other, v, cand, optimize=True)
            else:
                raise NumericsError("side must be 'r1' or 'r2'")
            obj = float(np.sum(lam * np.sum((fit - t) ** 2, axis=(1, 2))))
            if obj < best[0]:
                best = (obj, cand)
    return best[1]
