"""Acceptance gate: one test per criterion, each at its stated tolerance and
runtime budget, printing a pass/fail line (visible with ``pytest -s``).

Run with: pytest tests/test_acceptance.py -v -s
"""

import time

import numpy as np
import pytest

from bwla import gmm
from bwla.actquant import dequantize_token, quantize_token, tail_stats
from bwla.binarize import binarize, dequantize, optimal_scale_error
from bwla.io import save_layer
from bwla.kernel import PackedLayer, bench_gemv, binary_gemv, full_inference
from bwla.kronecker import (
    apply_to_rows,
    apply_transpose_to_vec,
    dense_matrix,
    factor_dims,
    random_rotation,
)
from bwla.numerics import truncated_svd
from bwla.okt import center_rows, magnitude_cv, _procrustes_targets, procrustes_update_r1
from bwla.pipeline import BwlaConfig, canonical_report, run_bwla
from bwla.synth import SynthSpec, brute_force_procrustes, gen, make_rng


def _report(name, ok, detail, t0, budget_s):
    elapsed = time.time() - t0
    print(f"\n[{name}] {'PASS' if ok else 'FAIL'}: {detail} "
          f"({elapsed:.1f}s / budget {budget_s:.0f}s)")
    assert elapsed < budget_s, f"{name} exceeded its runtime budget"
    assert ok, f"{name}: {detail}"


def test_criterion_1_monotone_descent():
    t0 = time.time()
    worst = -np.inf
    for i in range(20):
        w = gen(SynthSpec(kind="gaussian_rows", rows=128, cols=144, seed=9000 + i))
        res = run_bwla(w, BwlaConfig(seed=i))
        nlls = np.array([r.nll for r in res.trajectory])
        assert len(nlls) == 61  # init + 40 + 20
        worst = max(worst, float(np.max(np.diff(nlls))))
    _report("criterion 1: monotone descent", worst <= 1e-9,
            f"max NLL increase {worst:.2e} across 20 runs x 60 iterations",
            t0, 120)


def test_criterion_2_bimodalization():
    t0 = time.time()
    wins = 0
    for i in range(100):
        w = gen(SynthSpec(kind="gaussian_rows", rows=64, cols=72, seed=9500 + i))
        res = run_bwla(w, BwlaConfig(psp_iters=0, seed=i))
        met = res.report["metrics"]
        wins += met["magnitude_cv_transformed"] < met["magnitude_cv_raw"]
    _report("criterion 2: bimodalization", wins >= 95,
            f"magnitude spread decreased in {wins}/100 trials", t0, 300)


def test_criterion_3_binarization_error_law():
    t0 = time.time()
    rng = make_rng(333)
    ok = True
    for _ in range(100):
        m = int(rng.integers(4, 60))
        row = rng.standard_normal(m) * rng.uniform(0.1, 8)
        alpha, err = optimal_scale_error(row)
        mags = np.abs(row)
        law = m * float(mags.var())
        ok &= abs(err - law) <= 1e-10 * max(law, 1.0)
        grid = np.linspace(0.0, mags.max() * 1.25 + 1e-12, 5000)
        scan = float(np.min(((mags[:, None] - grid[None, :]) ** 2).sum(axis=0)))
        ok &= err <= scan + 1e-9
    _report("criterion 3: binarization error law", ok,
            "error equals m*Var(|x|) and matches the dense scale scan", t0, 10)


def test_criterion_4_binarizability_gain():
    t0 = time.time()
    wins = 0
    for i in range(100):
        w = gen(SynthSpec(kind="gaussian_rows", rows=64, cols=72, seed=9700 + i))
        res = run_bwla(w, BwlaConfig(seed=i))
        met = res.report["metrics"]
        wins += met["binarization_mse_transformed"] < met["binarization_mse_raw"]
    planted_mse = []
    for i in range(3):
        inst = gen(SynthSpec(kind="planted_bimodal", rows=64, cols=48, seed=50 + i))
        res = run_bwla(inst.W, BwlaConfig(seed=i))
        planted_mse.append(res.report["metrics"]["binarization_mse_transformed"])
    ok = wins >= 95 and max(planted_mse) < 1e-8
    _report("criterion 4: binarizability gain", ok,
            f"{wins}/100 gaussian wins; planted mse max {max(planted_mse):.1e}",
            t0, 300)


def test_criterion_5_algebraic_equivalence():
    t0 = time.time()
    rng = make_rng(555)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(4, 32))
        m = int(2 * rng.integers(4, 24))
        dims = factor_dims(m)
        rot = random_rotation(dims, rng)
        signs = np.ones((n, m))
        for r in range(n):
            idx = rng.permutation(m)
            signs[r, idx[m // 2:]] = -1.0
        frame = signs * rng.uniform(0.5, 2.0, (n, 1)) + 0.2 * rng.standard_normal((n, 1))
        shift = rng.standard_normal(n)
        k = 2
        a = rng.standard_normal((n, k)) / np.sqrt(n)
        b = rng.standard_normal((k, m)) / np.sqrt(m)
        from bwla.kronecker import apply_inverse_to_rows

        w = apply_inverse_to_rows(rot, frame + shift[:, None]) + a @ b
        layer = PackedLayer(weights=binarize(frame), row_shift=shift,
                            rotation=rot, residual_left=a,
                            residual_right_rot=apply_to_rows(rot, b))
        x = rng.standard_normal(m)
        y = full_inference(layer, x)
        ref = w @ x
        worst = max(worst, float(np.abs(y - ref).max() / max(np.abs(ref).max(), 1e-300)))
    _report("criterion 5: algebraic equivalence", worst < 1e-6,
            f"max relative error {worst:.2e} over 50 instances "
            "(activation quantization disabled)", t0, 10)


def test_criterion_6_oracle_equivalences():
    t0 = time.time()
    rng = make_rng(666)
    # (a) factored vs dense rotation application
    worst_kron = 0.0
    for m in (4, 6, 9, 12, 16):
        dims = factor_dims(m)
        for _ in range(20):
            rot = random_rotation(dims, rng)
            v = rng.standard_normal(m)
            ref = v @ dense_matrix(rot)
            got = apply_to_rows(rot, v[None, :])[0]
            worst_kron = max(worst_kron, float(
                np.linalg.norm(got - ref) / max(np.linalg.norm(ref), 1e-300)))
    ok_kron = worst_kron < 1e-10

    # (b) closed-form factor update vs exhaustive angle scan
    ok_proc = True
    for trial in range(3):
        n, m = 5, 4
        w = rng.standard_normal((n, m))
        rot = random_rotation(factor_dims(m), rng)
        view = center_rows(apply_to_rows(rot, w))
        params = gmm.init_params(view.X)
        resp = gmm.responsibilities(view.X, params)
        targets = _procrustes_targets(view, resp, params)
        lam = 1.0 / params.sigma2
        closed = procrustes_update_r1(w, rot, targets, lam)
        brute = brute_force_procrustes(w.reshape(n, 2, 2), rot.R2,
                                       targets.reshape(n, 2, 2), lam, side="r1")

        def obj(r1):
            fit = np.einsum("ba,nbc,cd->nad", r1, w.reshape(n, 2, 2), rot.R2)
            return float(np.sum(lam * np.sum((fit - targets.reshape(n, 2, 2)) ** 2,
                                             axis=(1, 2))))

        ok_proc &= obj(closed) <= obj(brute) + 1e-4 * max(abs(obj(brute)), 1.0)

    # (c) analytic gradient vs central differences
    worst_grad = 0.0
    for _ in range(50):
        x = rng.standard_normal((3, 5)) * rng.uniform(0.3, 3)
        params = gmm.init_params(x)
        g = gmm.grad_entries(x, gmm.responsibilities(x, params), params)
        fd = np.zeros_like(x)
        h = 1e-6
        for i in range(3):
            for j in range(5):
                up = x.copy(); up[i, j] += h
                dn = x.copy(); dn[i, j] -= h
                fd[i, j] = (gmm.nll(up, params) - gmm.nll(dn, params)) / (2 * h)
        worst_grad = max(worst_grad, float(np.abs(g - fd).max() / np.abs(fd).max()))
    ok_grad = worst_grad < 1e-4

    # (d) best-rank-k optimality against random competitors
    ok_ey = True
    for _ in range(100):
        nn = int(rng.integers(3, 8)); mm = int(rng.integers(3, 8))
        k = int(rng.integers(1, min(nn, mm)))
        a = rng.standard_normal((nn, mm))
        best = np.linalg.norm(a - truncated_svd(a, k).reconstruct())
        for _ in range(50):
            cand = rng.standard_normal((nn, k)) @ rng.standard_normal((k, mm))
            denom = float(np.sum(cand * cand))
            coef = float(np.sum(a * cand)) / denom if denom > 0 else 0.0
            ok_ey &= best <= np.linalg.norm(a - coef * cand) + 1e-9

    ok = ok_kron and ok_proc and ok_grad and ok_ey
    _report("criterion 6: oracle equivalences", ok,
            f"kron {worst_kron:.1e} (<1e-10); procrustes scan ok={ok_proc}; "
            f"gradient fd {worst_grad:.1e} (<1e-4); rank-k optimality ok={ok_ey}",
            t0, 120)


def test_criterion_7_kernel_speedup():
    t0 = time.time()
    rows = bench_gemv([(4096, 4096)], repetitions=100, seed=0)
    med = {r["variant"]: r["median_ns"] for r in rows}
    speed_real = med["dense_f32"] / med["packed_real"]
    speed_int = med["dense_f32"] / med["packed_int6"]
    _report("criterion 7: kernel speedup", speed_real >= 2.0,
            f"packed_real {speed_real:.2f}x (>= 2x required), "
            f"packed_int6 {speed_int:.2f}x, packed_real_f64 "
            f"{med['dense_f32'] / med['packed_real_f64']:.2f}x vs dense f32 "
            "(correctness checked in-harness)", t0, 120)


def test_criterion_8_activation_quantization():
    t0 = time.time()
    rng = make_rng(888)
    ok_bound = True
    for _ in range(100_000):
        x = rng.standard_normal(32) * rng.uniform(0.01, 50)
        q = quantize_token(x, 6)
        err = float(np.abs(x - dequantize_token(q)).max())
        ok_bound &= err <= q.scale / 2 + 1e-12 * max(np.abs(x).max(), 1.0)
        if not ok_bound:
            break
    acts = gen(SynthSpec(kind="heavy_tail_acts", rows=200, cols=512, seed=88,
                         spike_rate=0.01, spike_magnitude=50.0))
    dims = factor_dims(512)
    wins = 0
    for i, row in enumerate(acts):
        rot = random_rotation(dims, make_rng(8800 + i))
        wins += tail_stats(apply_transpose_to_vec(rot, row)).max_over_rms \
            < tail_stats(row).max_over_rms
    ok = ok_bound and wins >= 180
    _report("criterion 8: activation quantization", ok,
            f"6-bit bound held on 1e5 tokens; tails reduced {wins}/200", t0, 60)


def test_criterion_9_determinism_roundtrip(tmp_path):
    t0 = time.time()
    w = gen(SynthSpec(kind="gaussian_rows", rows=48, cols=60, seed=99))
    cfg = BwlaConfig(seed=42)
    r1, r2 = run_bwla(w, cfg), run_bwla(w, cfg)
    p1, p2 = tmp_path / "a.bwla", tmp_path / "b.bwla"
    save_layer(p1, r1.layer, config=cfg.to_dict())
    save_layer(p2, r2.layer, config=cfg.to_dict())
    identical = p1.read_bytes() == p2.read_bytes()
    from bwla.io import load_layer

    layer, config = load_layer(p1)
    p3 = tmp_path / "c.bwla"
    save_layer(p3, layer, config=config)
    roundtrip = p3.read_bytes() == p1.read_bytes()
    reports = canonical_report(r1.report) == canonical_report(r2.report)
    ok = identical and roundtrip and reports
    _report("criterion 9: determinism and round-trip", ok,
            "byte-identical artifacts, bit-exact save/load, matching reports",
            t0, 30)
