"""Symmetric two-component Gaussian mixture machinery.

Each centered row i is modeled as an equal-weight mixture of N(+c_i, s_i^2)
and N(-c_i, s_i^2). Provides responsibilities, closed-form EM updates with a
per-row variance floor, the averaged negative log-likelihood, the balance
regularizer, and the entrywise NLL gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import NumericsError, as_matrix

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative variance floor (fraction of row RMS) plus an absolute guard so
# all-zero rows stay well defined.
SIGMA_FLOOR_REL = 1e-4
SIGMA_FLOOR_ABS = 1e-12


@dataclass(frozen=True)
class GmmParams:
    """Per-row mixture parameters: nonnegative centers and floored variances."""

    c: np.ndarray           # (n,) centers, >= 0
    sigma2: np.ndarray      # (n,) variances, >= sigma_min2
    sigma_min2: np.ndarray  # (n,) variance floor

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        s2 = np.asarray(self.sigma2, dtype=np.float64)
        s2min = np.asarray(self.sigma_min2, dtype=np.float64)
        if not (c.shape == s2.shape == s2min.shape) or c.ndim != 1:
            raise NumericsError("GMM parameter arrays must share a 1-D shape")
        if np.any(c < 0):
            raise NumericsError("centers must be nonnegative")
        if np.any(s2min <= 0):
            raise NumericsError("variance floor must be positive")
        if np.any(s2 < s2min * (1 - 1e-12)):
            raise NumericsError("variance below its floor")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "sigma2", np.maximum(s2, s2min))
        object.__setattr__(self, "sigma_min2", s2min)

    @property
    def n_rows(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class Responsibilities:
    """Posterior probabilities of the positive mode, one per entry."""

    r_plus: np.ndarray    # (n, m) in [0, 1]
    row_means: np.ndarray  # (n,)

    def __post_init__(self):
        object.__setattr__(self, "r_plus", np.asarray(self.r_plus, dtype=np.float64))
        object.__setattr__(self, "row_means", np.asarray(self.row_means, dtype=np.float64))


def init_params(x, floor_rel: float = SIGMA_FLOOR_REL) -> GmmParams:
    """Moment initialization: c = mean |x|, sigma^2 = var |x|, floored.

    The floor is relative to row RMS with a tiny absolute guard for
    degenerate (all-zero) rows.
    """
    mat = as_matrix(x, "init data")
    a = np.abs(mat)
    c = a.mean(axis=1)
    rms = np.sqrt(np.mean(mat * mat, axis=1))
    s2min = np.maximum((floor_rel * rms) ** 2, SIGMA_FLOOR_ABS**2)
    s2 = np.maximum(a.var(axis=1), s2min)
    return GmmParams(c=c, sigma2=s2, sigma_min2=s2min)


def responsibilities(x, params: GmmParams) -> Responsibilities:
    """r+_ij = phi(x; c, s^2) / (phi(x; c, s^2) + phi(x; -c, s^2)).

    The Gaussian ratio collapses to sigmoid(2 c x / s^2), evaluated in the
    numerically stable branch-split form, so r+ + r- = 1 holds exactly.
    """
    mat = as_matrix(x, "data")
    _check_rows(mat, params)
    z = 2.0 * params.c[:, None] * mat / params.sigma2[:, None]
    r = np.empty_like(mat)
    pos = z >= 0
    r[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    r[~pos] = ez / (1.0 + ez)
    return Responsibilities(r_plus=r, row_means=r.mean(axis=1))


def em_update(x, resp: Responsibilities, params: GmmParams) -> GmmParams:
    """Closed-form M-step: c from the sign-weighted mean, then the variance
    at the new center, floored. The center's sign is folded away afterwards
    (the mixture is invariant under c -> -c with swapped components).
    """
    mat = as_matrix(x, "data")
    _check_rows(mat, params)
    r = resp.r_plus
    c_new = np.mean((2.0 * r - 1.0) * mat, axis=1)
    dev_p = mat - c_new[:, None]
    dev_m = mat + c_new[:, None]
    s2_new = np.mean(r * dev_p * dev_p + (1.0 - r) * dev_m * dev_m, axis=1)
    return GmmParams(
        c=np.abs(c_new),
        sigma2=np.maximum(s2_new, params.sigma_min2),
        sigma_min2=params.sigma_min2,
    )


def nll(x, params: GmmParams) -> float:
    """Mean negative log-likelihood over all entries, via log-sum-exp."""
    mat = as_matrix(x, "data")
    _check_rows(mat, params)
    s2 = params.sigma2[:, None]
    lognorm = -0.5 * (LOG_2PI + np.log(s2))
    dp = mat - params.c[:, None]
    dm = mat + params.c[:, None]
    lp = lognorm - dp * dp / (2.0 * s2)
    lm = lognorm - dm * dm / (2.0 * s2)
    hi = np.maximum(lp, lm)
    lse = hi + np.log1p(np.exp(np.minimum(lp, lm) - hi))
    return float(np.mean(np.log(2.0) - lse))


def balance_regularizer(resp: Responsibilities, lam_reg: float) -> float:
    """lam * (mean_i rbar_i - 1/2)^2; zero exactly at balanced assignments."""
    if lam_reg < 0:
        raise NumericsError("regularizer coefficient must be >= 0")
    dev = float(np.mean(resp.row_means) - 0.5)
    return lam_reg * dev * dev


def grad_entries(x, resp: Responsibilities, params: GmmParams) -> np.ndarray:
    """Entrywise gradient of ``nll``:
    (1 / (n m s_i^2)) * [r+ (x - c) + (1 - r+) (x + c)].
    """
    mat = as_matrix(x, "data")
    _check_rows(mat, params)
    n, m = mat.shape
    r = resp.r_plus
    pull = r * (mat - params.c[:, None]) + (1.0 - r) * (mat + params.c[:, None])
    return pull / (n * m * params.sigma2[:, None])


def posterior_targets(resp: Responsibilities, params: GmmParams) -> np.ndarray:
    """Per-entry posterior mean targets m_ij = (2 r+ - 1) c_i."""
    return (2.0 * resp.r_plus - 1.0) * params.c[:, None]


def _check_rows(mat: np.ndarray, params: GmmParams):
    if mat.shape[0] != params.n_rows:
        raise NumericsError(
            f"data has {mat.shape[0]} rows but params have {params.n_rows}"
        )
