"""Rank-constrained residual refinement.

Maintains a rank-k correction M = A @ B subtracted from the weights before
rotation and centering. Each step maps the mixture-loss gradient back through
the centering/rotation adjoint, takes a proximal point, projects it to rank k
by truncated SVD, and accepts only if the loss does not increase, adapting
the proximal parameter geometrically (doubling until descent holds, then
probing smaller values for the best accepted candidate).

Sign convention: ``adjoint_gradient`` returns G = G_X H R^T. Increasing M
along +G decreases the loss to first order (perturbing M by dM moves the
transformed data by -T_R(dM)), so the proximal point is M + (1/mu) G. The
direction is pinned by a finite-difference test rather than trusted from the
derivation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gmm
from .kronecker import KroneckerRotation, apply_inverse_to_rows, apply_to_rows
from .numerics import NumericsError, as_matrix, truncated_svd
from .okt import LossRecord, center_rows


@dataclass(frozen=True)
class LowRankResidual:
    """Rank-k correction stored as balanced factors A (n x k), B (k x m)."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.A, "A")
        b = as_matrix(self.B, "B")
        if a.shape[1] != b.shape[0]:
            raise NumericsError("factor inner dimensions disagree")
        object.__setattr__(self, "A", a)
        object.__setattr__(self, "B", b)

    @property
    def k(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.A.shape[0], self.B.shape[1])

    def materialize(self) -> np.ndarray:
        return self.A @ self.B

    @property
    def param_count(self) -> int:
        return self.A.size + self.B.size


def zero_residual(n: int, m: int, k: int) -> LowRankResidual:
    return LowRankResidual(A=np.zeros((n, k)), B=np.zeros((k, m)))


def rank_from_ratio(n: int, m: int, rank_ratio: float) -> int:
    """k = round(ratio * min(n, m)), clamped into [1, min(n, m)].

    The lower clamp keeps tiny desk-scale matrices from degenerating to a
    no-op correction.
    """
    k = int(round(rank_ratio * min(n, m)))
    return max(1, min(k, min(n, m)))


def factor_residual(mat, k: int) -> LowRankResidual:
    """Best rank-k approximation of ``mat`` as balanced factors
    A = U_k sqrt(S_k), B = sqrt(S_k) V_k^T (equal Frobenius norms).
    """
    m = as_matrix(mat, "residual")
    if not np.any(m):
        return zero_residual(m.shape[0], m.shape[1], min(k, min(m.shape)))
    res = truncated_svd(m, k)
    root = np.sqrt(res.S)
    return LowRankResidual(A=res.U * root, B=root[:, None] * res.Vt)


@dataclass(frozen=True)
class PspState:
    residual: LowRankResidual
    params: gmm.GmmParams
    mu: float
    iteration: int = 0
    loss_history: tuple[LossRecord, ...] = field(default_factory=tuple)
    stalled: bool = False  # last step could not find a descent candidate


def adjoint_gradient(g_x, rot: KroneckerRotation | None) -> np.ndarray:
    """Map an entrywise gradient at X = (W - M) R H back to residual space:
    G = G_X H R^T (H is symmetric, so H^T = H).
    """
    g = as_matrix(g_x, "gradient")
    centered = g - g.mean(axis=1, keepdims=True)
    if rot is None:
        return centered
    return apply_inverse_to_rows(rot, centered)


def transformed_view(w, residual: LowRankResidual, rot: KroneckerRotation | None):
    """Centered rotated view of W - M."""
    corrected = as_matrix(w, "weights") - residual.materialize()
    rotated = apply_to_rows(rot, corrected) if rot is not None else corrected
    return center_rows(rotated)


def init_state(w, rot: KroneckerRotation | None, k: int,
               params: gmm.GmmParams | None = None) -> PspState:
    """Zero residual, mixture parameters fitted to the current view, and the
    conservative curvature-scale proximal parameter 1 / (n m min sigma_min^2).
    """
    mat = as_matrix(w, "weights")
    n, m = mat.shape
    residual = zero_residual(n, m, k)
    view = transformed_view(mat, residual, rot)
    if params is None:
        params = gmm.init_params(view.X)
    mu0 = 1.0 / (n * m * float(np.min(params.sigma_min2)))
    resp = gmm.responsibilities(view.X, params)
    record = LossRecord(
        iteration=0,
        nll=gmm.nll(view.X, params),
        regularizer=0.0,
        surrogate=0.0,
        phase="psp",
    )
    return PspState(residual=residual, params=params, mu=mu0,
                    iteration=0, loss_history=(record,))


def psp_step(w, state: PspState, rot: KroneckerRotation | None,
             refit: bool = True, max_doublings: int = 30,
             probe_halvings: int = 12, lam_reg: float = 0.0) -> PspState:
    """One proximal update of the residual (optionally preceded by an EM
    refresh of the mixture parameters).

    Descent of the NLL is enforced: candidates are rank-k projections of
    M + (1/mu) G for geometrically adapted mu; if no candidate descends after
    ``max_doublings`` the residual is kept and the state is flagged stalled.
    """
    mat = as_matrix(w, "weights")
    k = state.residual.k
    m_cur = state.residual.materialize()

    view = transformed_view(mat, state.residual, rot)
    params = state.params
    if refit:
        resp = gmm.responsibilities(view.X, params)
        params = gmm.em_update(view.X, resp, params)
    resp = gmm.responsibilities(view.X, params)
    g_x = gmm.grad_entries(view.X, resp, params)
    grad = adjoint_gradient(g_x, rot)
    loss0 = gmm.nll(view.X, params)

    def candidate(mu):
        residual = factor_residual(m_cur + grad / mu, k)
        cview = transformed_view(mat, residual, rot)
        return residual, gmm.nll(cview.X, params)

    mu = state.mu
    best_res, best_loss = candidate(mu)
    doublings = 0
    while best_loss > loss0 and doublings < max_doublings:
        mu *= 2.0
        best_res, best_loss = candidate(mu)
        doublings += 1

    stalled = best_loss > loss0
    if stalled:
        best_res, best_loss, mu = state.residual, loss0, state.mu
    else:
        # Probe smaller mu (larger steps) and keep the best descent found;
        # realizes the step-size adaptivity without manual tuning.
        mu_try = mu
        misses = 0
        for _ in range(probe_halvings):
            mu_try /= 2.0
            cand_res, cand_loss = candidate(mu_try)
            if cand_loss <= best_loss:
                best_res, best_loss, mu = cand_res, cand_loss, mu_try
                misses = 0
            else:
                misses += 1
                if misses >= 2:
                    break

    fview = transformed_view(mat, best_res, rot)
    fresp = gmm.responsibilities(fview.X, params)
    record = LossRecord(
        iteration=state.iteration + 1,
        nll=best_loss,
        regularizer=gmm.balance_regularizer(fresp, lam_reg),
        surrogate=0.0,
        phase="psp",
    )
    return PspState(
        residual=best_res,
        params=params,
        mu=mu,
        iteration=state.iteration + 1,
        loss_history=state.loss_history + (record,),
        stalled=stalled,
    )


def run_psp(w, rot: KroneckerRotation | None, k: int, iters: int = 20,
            params: gmm.GmmParams | None = None, refit: bool = True,
            lam_reg: float = 0.0) -> PspState:
    state = init_state(w, rot, k, params=params)
    for _ in range(iters):
        state = psp_step(w, state, rot, refit=refit, lam_reg=lam_reg)
    return state
