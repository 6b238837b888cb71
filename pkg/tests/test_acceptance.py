"""The ten acceptance criteria, each at its stated tolerance and time budget.

Every test records one PASS/FAIL line (shown in the terminal summary) and
then asserts.  Criteria 7 to 9 share one network trained on the desk-scale
synthetic CT setup.
"""
import time

import numpy as np
import pytest

from convframelet import classical, desk, directional, framelets, hankel, km, verification
from convframelet.image_core import Image
from convframelet.wavresnet.infer import PatchConfig


def correlate_fft(f, psi):
    n = f.size
    h = np.zeros(n)
    h[:psi.size] = psi
    return np.real(np.fft.ifft(np.fft.fft(f) * np.conj(np.fft.fft(h))))


def lowrank_signal(n, r, rng):
    t = np.arange(n)
    f = np.full(n, rng.uniform(0.5, 1.5)) if r % 2 else np.zeros(n)
    for k in rng.choice(np.arange(1, n // 2), size=r // 2, replace=False):
        f += rng.uniform(0.5, 1.5) * np.cos(2 * np.pi * k * t / n + rng.uniform(0, 2 * np.pi))
    return f


def record(log, number, passed, detail):
    log[number] = (bool(passed), detail)


# 1 ------------------------------------------------------------------------------------

def test_criterion_01_hankel_convolution_equivalence(acceptance_log):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        d = int(rng.integers(1, min(n, 9) + 1))
        p, q = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        F = rng.standard_normal((n, p))
        bank = hankel.FilterBank(rng.standard_normal((p, q, d)))
        via_matrix = hankel.build_extended_hankel(F, d).rows @ bank.as_matrix()
        direct = np.stack([sum(correlate_fft(F[:, j], bank.coefficients[j, i]) for j in range(p))
                           for i in range(q)], axis=1)
        worst = max(worst, float(np.max(np.abs(via_matrix - direct)) / np.max(np.abs(direct))))
    seconds = time.perf_counter() - start
    ok = worst <= 1e-12 and seconds < 5
    record(acceptance_log, 1, ok, f"max relative deviation {worst:.2e} (<= 1e-12), {seconds:.2f} s (< 5 s)")
    assert ok


# 2 ------------------------------------------------------------------------------------

def test_criterion_02_frame_identities(acceptance_log):
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    n, d = 16, 4
    ops = []
    for pool in ("identity", "orthogonal", "biorthogonal"):
        pooling = framelets.PoolingPair.identity(n) if pool == "identity" else getattr(framelets.PoolingPair, pool)(n, rng)
        q = framelets.orthogonal_filters(d, rng)
        ops.append(framelets.ConvolutionalFramelet(pooling, q, q))
        psi = rng.standard_normal((d, d + 3))
        ops.append(framelets.ConvolutionalFramelet(pooling, psi, framelets.dual_filters(psi)))
    psi = rng.standard_normal((d * 3, d * 3 + 2))
    ops.append(framelets.ConvolutionalFramelet(framelets.PoolingPair.biorthogonal(n, rng), psi,
                                               framelets.dual_filters(psi), in_channels=3))
    pr = max(framelets.verify_pr(op, tolerance=1e-10).max_residual for op in ops)
    ident = 0.0
    for k in range(100):
        op = ops[k % len(ops)]
        ident = max(ident, framelets.framelet_identity_residual(rng.standard_normal(op.input_shape), op))
    seconds = time.perf_counter() - start
    ok = pr <= 1e-10 and ident <= 1e-11 and seconds < 10
    record(acceptance_log, 2, ok, f"PR residual {pr:.2e} (<= 1e-10) over {len(ops)} pairs, "
                                  f"decomposition identity {ident:.2e} (<= 1e-11), {seconds:.2f} s (< 10 s)")
    assert ok


# 3 ------------------------------------------------------------------------------------

def test_criterion_03_lowrank_embedding(acceptance_log):
    rng = np.random.default_rng(11)
    start = time.perf_counter()
    round_trip, truncation = 0.0, 0.0
    for trial in range(20):
        n = int(rng.integers(24, 65))
        d = int(rng.integers(6, 11))
        r = int(rng.integers(2, min(d, 7)))
        f = lowrank_signal(n, r, rng)
        psi, psi_dual = framelets.lowrank_pair_from_signal(f, d, r)
        op = framelets.ConvolutionalFramelet.from_filters(psi, psi_dual, n=n)
        round_trip = max(round_trip, float(np.max(np.abs(framelets.decode(framelets.encode(f, op), op) - f))))
        psi, psi_dual = framelets.lowrank_pair_from_signal(f, d, r - 1)
        op = framelets.ConvolutionalFramelet.from_filters(psi, psi_dual, n=n)
        err = np.linalg.norm(f - framelets.decode(framelets.encode(f, op), op))
        U, s, Vt = np.linalg.svd(hankel.build_hankel(f, d).rows, full_matrices=False)
        oracle = np.linalg.norm(f - hankel.hankel_to_signal((U[:, :r - 1] * s[:r - 1]) @ Vt[:r - 1]))
        truncation = max(truncation, abs(err - oracle) / oracle)
    seconds = time.perf_counter() - start
    ok = round_trip <= 1e-10 and truncation <= 0.01 and seconds < 10
    record(acceptance_log, 3, ok, f"rank-r round trip {round_trip:.2e} (<= 1e-10), truncation vs dense SVD "
                                  f"{100 * truncation:.2e} % (<= 1 %), {seconds:.2f} s (< 10 s)")
    assert ok


# 4 ------------------------------------------------------------------------------------

def test_criterion_04_resolution_of_identity(acceptance_log):
    start = time.perf_counter()
    t = directional.build_transform(4, (8, 4, 2, 1), merge_lowpass=True)
    residual = verification.transform_identity_residual(t, count=32, size=64, seed=3)
    seconds = time.perf_counter() - start
    ok = t.band_count == 15 and residual <= 1e-10 and seconds < 30
    record(acceptance_log, 4, ok, f"{t.band_count} bands, round-trip residual {residual:.2e} (<= 1e-10) "
                                  f"on 32 images, {seconds:.2f} s (< 30 s)")
    assert ok


# 5 ------------------------------------------------------------------------------------

def test_criterion_05_gradient_check(acceptance_log):
    start = time.perf_counter()
    reports = [verification.gradient_check(seed) for seed in (0, 1, 2)]
    seconds = time.perf_counter() - start
    worst = max(r.max_relative_error for r in reports)
    checked = sum(r.checked for r in reports)
    ok = worst < 1e-3 and seconds < 60 and all(r.checked > 0 for r in reports)
    record(acceptance_log, 5, ok, f"max relative error {worst:.2e} (< 1e-3) over {checked} coordinates, "
                                  f"{sum(r.excluded_kinks for r in reports)} kink coordinates excluded, "
                                  f"{seconds:.1f} s (< 60 s)")
    assert ok


# 6 ------------------------------------------------------------------------------------

def test_criterion_06_km_convergence(acceptance_log):
    rng = np.random.default_rng(6)
    start = time.perf_counter()
    g = rng.random((8, 8))
    details, ok = [], True
    for c in (0.3, 0.5, 0.9):
        Q = lambda f, c=c: Image(c * f.data)
        L, _ = km.estimate_lipschitz(Q, [g], steps=g.size)
        mu = km.suggest_mu(L)
        star = mu * g / (1 - (1 - mu) * c)
        errors = [float(np.max(np.abs(g - star)))]
        for k in range(1, 61):
            cfg = km.KMConfig(mu=mu, relaxation=1.0, max_iters=k, stop_tol=1e-300, allow_unrelaxed=True)
            out, _ = km.km_denoise(g, Q, cfg)
            errors.append(float(np.max(np.abs(out.data - star))))
        reached = [i for i, e in enumerate(errors) if e <= 1e-8]
        rate = max(b / a for a, b in zip(errors, errors[1:]) if a > 1e-8)
        bound = (1 - mu) * c + 1e-6
        case_ok = bool(reached) and reached[0] <= 60 and rate <= bound
        ok &= case_ok
        hit = f"{reached[0]} iterations" if reached else f"not reached (error {errors[-1]:.1e} after 60)"
        details.append(f"c={c}: L={L:.3f} mu={mu:.3f} {hit}, rate {rate:.4f} (<= {bound:.4f})")
    seconds = time.perf_counter() - start
    ok &= seconds < 5
    record(acceptance_log, 6, ok, "; ".join(details) + f"; {seconds:.2f} s (< 5 s)")
    assert ok


# 7 to 9: one desk-scale training run ------------------------------------------------

@pytest.fixture(scope="module")
def desk_run():
    cfg = desk.DeskConfig()
    transform = directional.standard_transform()
    start = time.perf_counter()
    result = desk.train_network(cfg, desk.training_data(cfg), transform)
    pairs = desk.test_pairs(cfg)
    patch = PatchConfig(stride=cfg.patch_stride)
    gain = desk.evaluate_gain(result.params, pairs, transform, patch, cfg.peak)
    seconds = time.perf_counter() - start
    return cfg, transform, result, pairs, gain, seconds


@pytest.mark.slow
def test_criterion_07_denoising_gain(acceptance_log, desk_run):
    cfg, _, result, pairs, gain, seconds = desk_run
    ok = len(gain.rows) == 20 and gain.mean_gain_db >= 2.0 and seconds < 1800
    record(acceptance_log, 7, ok,
           f"mean PSNR {gain.mean_input_psnr:.2f} -> {gain.mean_output_psnr:.2f} dB, gain {gain.mean_gain_db:+.2f} dB "
           f"(>= 2 dB) over {len(gain.rows)} held-out phantoms at {cfg.test_fraction:g} dose; "
           f"{len(result.losses)} steps, train + eval {seconds:.0f} s (< 1800 s)")
    assert ok


@pytest.mark.slow
def test_criterion_08_km_trace_shape(acceptance_log, desk_run):
    cfg, transform, result, pairs, _, _ = desk_run
    rows = desk.km_study(result.params, pairs[:10], transform, PatchConfig(stride=cfg.patch_stride), cfg.km, cfg.peak)
    plateaus = [r.plateau for r in rows]
    margins = [r.final_psnr - r.feed_forward_psnr for r in rows]
    ok = len(rows) == 10 and max(plateaus) <= 8 and min(margins) >= -0.1
    record(acceptance_log, 8, ok,
           f"plateau iterations {plateaus} (<= 8), plateau minus feed-forward PSNR "
           f"min {min(margins):+.3f} dB mean {np.mean(margins):+.3f} dB (>= -0.1 dB) over 10 phantoms")
    assert ok


@pytest.mark.slow
def test_criterion_09_spectrum_compression(acceptance_log, desk_run):
    _, transform, result, pairs, _, _ = desk_run
    spectra = desk.spectrum_study(result.params, pairs[:10], transform)
    count = sum(s.compressed for s in spectra)
    ok = count >= 8
    record(acceptance_log, 9, ok,
           f"last-module tail mass <= first-module tail mass on {count}/10 probes (>= 8); "
           f"median tails {np.median([s.first_tail for s in spectra]):.3e} -> "
           f"{np.median([s.last_tail for s in spectra]):.3e}")
    assert ok


# 10 -----------------------------------------------------------------------------------

def test_criterion_10_classical_denoiser(acceptance_log):
    clean, g = classical.piecewise_constant_signal(256, 0.1, 0)
    op = classical.UndecimatedHaar(256, 3)
    tight = classical.tightness_residual(op)
    lam, mse, _ = classical.grid_search(g, clean, op, np.linspace(0.005, 0.1, 20), mu=0.3)
    out, trace = classical.frame_denoise(g, op, classical.DenoiseConfig(0.3, lam, max_iters=200, stop_tol=1e-5))
    mse_in = float(np.mean((g - clean) ** 2))
    mse_out = float(np.mean((out - clean) ** 2))
    frozen = (lam == pytest.approx(0.02) and mse_out == pytest.approx(0.004346253082231822, rel=1e-9)
              and trace.iterations == 23)
    ok = tight <= 1e-12 and mse_out < mse_in and trace.residual[-1] < 1e-5 and trace.iterations <= 200 and frozen
    record(acceptance_log, 10, ok,
           f"MSE {mse_in:.5f} -> {mse_out:.5f} at lambda {lam:g}, residual {trace.residual[-1]:.2e} (< 1e-5) "
           f"after {trace.iterations} iterations (<= 200), frozen values {'match' if frozen else 'DIFFER'}")
    assert ok
