"""Numerical self-checks: reconstruction identities, frame bounds, gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import directional, framelets
from .wavresnet import network
from .wavresnet.network import ArchConfig, NetworkParams, init_params

TINY_ARCH = ArchConfig(in_bands=3, channels=4, module_count=2, convs_per_module=3, patch=(9, 9))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    value: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}: {self.value:.3e} (tolerance {self.tolerance:.0e})"


# gradients ---------------------------------------------------------------

@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    checked: int
    excluded_kinks: int
    worst: str


def _loss_and_masks(params: NetworkParams, x: np.ndarray, t: np.ndarray):
    xn, _ = network._to_nhwc(x)
    tn, _ = network._to_nhwc(t)
    g = network._Graph(params, xn * params.input_scale, train=True)
    diff = g.residual - tn * params.input_scale
    masks = tuple(v[2] for v in g.cache.values() if v[2] is not None)
    return float(np.mean(diff ** 2)), masks


def random_tiny_problem(seed: int, arch: ArchConfig = TINY_ARCH, batch: int = 2):
    """Tiny network with every parameter (scales, shifts, biases) randomised, plus a batch."""
    rng = np.random.default_rng(seed)
    params = init_params(arch, seed=seed, std=0.3)
    for name, w in params.weights.items():
        if name.endswith(".gamma"):
            w[:] = rng.uniform(0.5, 1.5, w.shape)
        elif not name.endswith(".w"):
            w[:] = rng.normal(0.0, 0.1, w.shape)
    shape = (batch, arch.in_bands) + arch.patch
    return params, rng.standard_normal(shape), 0.1 * rng.standard_normal(shape)


def gradient_check(seed: int, arch: ArchConfig = TINY_ARCH, epsilon: float = 1e-4,
                   floor: float = 1e-7) -> GradCheckReport:
    """Compare every gradient coordinate against central differences.

    A coordinate is excluded when either perturbed evaluation switches any
    ReLU on or off (a kink lies inside the difference stencil).  Relative
    errors use ``max(|fd|, |grad|, floor * max|grad|)`` as denominator.
    """
    params, x, t = random_tiny_problem(seed, arch)
    res = network.loss_and_grad(params, x, t)
    _, base_masks = _loss_and_masks(params, x, t)
    scale = max(float(np.max(np.abs(g))) for g in res.grads.values())
    worst, worst_name, checked, excluded = 0.0, "", 0, 0
    for name, w in params.weights.items():
        grad = res.grads[name]
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + epsilon
            lp, mp = _loss_and_masks(params, x, t)
            w[idx] = orig - epsilon
            lm, mm = _loss_and_masks(params, x, t)
            w[idx] = orig
            if any((a != b).any() for a, b in zip(mp, base_masks)) or \
                    any((a != b).any() for a, b in zip(mm, base_masks)):
                excluded += 1
                continue
            fd = (lp - lm) / (2 * epsilon)
            rel = abs(fd - grad[idx]) / max(abs(fd), abs(grad[idx]), floor * scale)
            checked += 1
            if rel > worst:
                worst, worst_name = rel, f"{name}{list(idx)}"
    return GradCheckReport(worst, checked, excluded, worst_name)


# reconstruction identities ---------------------------------------------------

def transform_identity_residual(transform: directional.DirectionalTransform, count: int = 32,
                                size: int = 64, seed: int = 0, corrupt_dual: bool = False) -> float:
    """Worst round-trip error over random images; ``corrupt_dual`` perturbs one synthesis filter."""
    rng = np.random.default_rng(seed)
    images = rng.standard_normal((count, size, size))
    bands = directional.forward_batch(images, transform)
    if corrupt_dual:
        D = np.array(transform.synthesis_responses((size, size)))
        D[0] *= 1.01
        spectrum = np.fft.fft2(bands, axes=(2, 3)) * D
        back = np.real(np.fft.ifft2(np.sum(spectrum, axis=1)))
    else:
        back = directional.inverse_batch(bands, transform)
    return float(np.max(np.abs(back - images)))


def framelet_pr_residual(n: int = 16, d: int = 4, seed: int = 0, corrupt_dual: bool = False) -> float:
    """PR residual of a random biorthogonal pooling pair with a redundant filter frame."""
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal((d, d + 2))
    psi_dual = framelets.dual_filters(psi)
    if corrupt_dual:
        psi_dual = psi_dual.copy()
        psi_dual[0, 0] += 1e-3
    op = framelets.ConvolutionalFramelet(framelets.PoolingPair.biorthogonal(n, rng), psi, psi_dual)
    return framelets.verify_pr(op).max_residual


def frame_bound_error(n: int = 12, seed: int = 0) -> float:
    """Relative error of the estimated bounds of a random ``2n x n`` matrix frame."""
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((2 * n, n))
    s = np.linalg.svd(W, compute_uv=False)
    b = framelets.estimate_frame_bounds(framelets.MatrixFrame(W), iterations=2000)
    return max(abs(b.upper - s[0] ** 2) / s[0] ** 2, abs(b.lower - s[-1] ** 2) / s[-1] ** 2)


def run_checks(transform: directional.DirectionalTransform, gradient_seeds=(0, 1, 2),
               corrupt_dual: bool = False) -> list[CheckResult]:
    results = []
    r = framelet_pr_residual(corrupt_dual=corrupt_dual)
    results.append(CheckResult("framelet perfect reconstruction", r <= 1e-10, r, 1e-10))
    r = transform_identity_residual(transform, corrupt_dual=corrupt_dual)
    results.append(CheckResult("directional resolution of identity", r <= 1e-10, r, 1e-10))
    r = frame_bound_error()
    results.append(CheckResult("frame bound estimate (relative)", r <= 1e-6, r, 1e-6))
    for seed in gradient_seeds:
        rep = gradient_check(seed)
        results.append(CheckResult(f"gradient check seed {seed} ({rep.checked} coords, {rep.excluded_kinks} kinks)",
                                   rep.max_relative_error < 1e-3, rep.max_relative_error, 1e-3))
    return results
