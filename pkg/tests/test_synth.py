import numpy as np
import pytest

from bwla.binarize import optimal_scale_error
from bwla.kronecker import apply_to_rows, orthogonality_drift
from bwla.numerics import NumericsError
from bwla.synth import SynthSpec, brute_force_procrustes, gen, make_rng


def test_determinism_bitwise():
    spec = SynthSpec(kind="gaussian_rows", rows=8, cols=12, seed=123)
    a, b = gen(spec), gen(spec)
    assert np.array_equal(a, b)
    c = gen(SynthSpec(kind="gaussian_rows", rows=8, cols=12, seed=124))
    assert not np.array_equal(a, c)


def test_gaussian_moments():
    w = gen(SynthSpec(kind="gaussian_rows", rows=4, cols=6000, seed=7))
    assert np.abs(w.mean(axis=1)).max() < 0.05
    assert np.abs(w.var(axis=1) - 1.0).max() < 0.06


def test_gaussian_row_sigma():
    w = gen(SynthSpec(kind="gaussian_rows", rows=3, cols=4000, seed=8,
                      row_sigma=(0.5, 1.0, 2.0)))
    assert np.allclose(w.std(axis=1), [0.5, 1.0, 2.0], rtol=0.08)


def test_planted_zero_noise_exactly_codable():
    inst = gen(SynthSpec(kind="planted_bimodal", rows=12, cols=24, seed=3))
    recovered = apply_to_rows(inst.rotation, inst.W)
    for i, row in enumerate(recovered):
        _, err = optimal_scale_error(row)
        assert err < 1e-18 * inst.centers[i] ** 2 * 24
        assert np.abs(row.sum()) < 1e-10  # balanced by construction
    assert orthogonality_drift(inst.rotation) < 1e-12


def test_planted_rejects_odd_columns():
    with pytest.raises(NumericsError):
        SynthSpec(kind="planted_bimodal", rows=4, cols=7, seed=0)


def test_planted_noise_scale():
    inst = gen(SynthSpec(kind="planted_bimodal", rows=16, cols=32, seed=9, noise=0.05))
    recovered = apply_to_rows(inst.rotation, inst.W)
    resid = recovered - inst.signs * inst.centers[:, None]
    assert abs(resid.std() - 0.05) < 0.01


def test_heavy_tail_spike_count():
    acts = gen(SynthSpec(kind="heavy_tail_acts", rows=5, cols=1000, seed=4,
                         spike_rate=0.01, spike_magnitude=50.0))
    for row in acts:
        assert np.sum(np.abs(row) == 50.0) == 10


def test_unknown_kind_rejected():
    with pytest.raises(NumericsError):
        SynthSpec(kind="mystery", rows=2, cols=2, seed=0)


def test_brute_force_procrustes_matches_polar():
    # sanity of the oracle itself on an unweighted single-slice problem with
    # a known closed-form answer
    rng = make_rng(17)
    v = rng.standard_normal((3, 2, 2))
    t = rng.standard_normal((3, 2, 2))
    lam = np.ones(3)
    r2 = np.eye(2)
    from bwla.okt import procrustes_update_r1

    closed = procrustes_update_r1(v.reshape(3, 4), _identity_rot(), t.reshape(3, 4), lam)
    brute = brute_force_procrustes(v, r2, t, lam, side="r1")

    def obj(r1):
        fit = np.einsum("ba,nbc,cd->nad", r1, v, r2)
        return float(np.sum((fit - t) ** 2))

    assert obj(closed) <= obj(brute) + 1e-4


def _identity_rot():
    from bwla.kronecker import KroneckerDims, identity_rotation

    return identity_rotation(KroneckerDims(n1=2, n2=2))
