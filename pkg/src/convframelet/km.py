"""Relaxed fixed-point (Krasnoselskii-Mann) iteration around a denoising map.

With ``f_0 = f_1 = g`` each iteration computes::

    q_n     = Q(f_n)
    fbar    = mu * g + (1 - mu) * q_n
    f_{n+1} = f_n + lambda_n * (fbar - f_n)

and the map ``f -> mu g + (1 - mu) Q(f)`` is non-expansive whenever
``mu >= 1 - 1/L`` for a Lipschitz constant ``L`` of ``Q``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .fileio import atomic_write_text
from .image_core import Image
from .metrics import psnr

MU_FLOOR = 0.1


@dataclass(frozen=True)
class KMConfig:
    """Iteration parameters.

    ``relaxation`` is either a constant or a sequence (its last entry is
    reused once exhausted).  Relaxations must lie strictly inside ``(0, 1)``
    and ``mu`` inside ``(0, 1)``, unless ``allow_unrelaxed`` is set, which
    admits the endpoint values used for the plain fixed-point and
    feed-forward special cases.
    """

    mu: float = MU_FLOOR
    relaxation: float | tuple[float, ...] = 0.5
    max_iters: int = 20
    stop_tol: float = 1e-5
    record_trace: bool = True
    allow_unrelaxed: bool = False

    def __post_init__(self):
        if isinstance(self.relaxation, (list, tuple, np.ndarray)):
            object.__setattr__(self, "relaxation", tuple(float(v) for v in self.relaxation))
            values = self.relaxation
            if not values:
                raise InvalidArgumentError("relaxation schedule is empty")
        else:
            object.__setattr__(self, "relaxation", float(self.relaxation))
            values = (self.relaxation,)
        if self.allow_unrelaxed:
            if not 0 <= self.mu <= 1:
                raise InvalidArgumentError(f"mu must lie in [0, 1], got {self.mu}")
            if any(not 0 < v <= 1 for v in values):
                raise InvalidArgumentError("relaxation values must lie in (0, 1]")
        else:
            if not 0 < self.mu < 1:
                raise InvalidArgumentError(f"mu must lie strictly between 0 and 1, got {self.mu}")
            if any(not 0 < v < 1 for v in values):
                raise InvalidArgumentError("relaxation values must lie strictly between 0 and 1")
        if self.max_iters < 1:
            raise InvalidArgumentError("max_iters must be positive")
        if not self.stop_tol > 0:
            raise InvalidArgumentError("stop_tol must be positive")

    @classmethod
    def feed_forward(cls) -> "KMConfig":
        """One unrelaxed step with ``mu = 0``: the output is ``Q(g)``."""
        return cls(mu=0.0, relaxation=1.0, max_iters=1, allow_unrelaxed=True)

    def relaxation_at(self, n: int) -> float:
        if isinstance(self.relaxation, tuple):
            return self.relaxation[min(n, len(self.relaxation) - 1)]
        return self.relaxation


@dataclass
class IterationTrace:
    """Per-iteration diagnostics; PSNR columns are filled only when a reference is given."""

    residual: list[float] = field(default_factory=list)
    psnr_iterate: list[float] = field(default_factory=list)
    psnr_q: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.residual)

    def to_tsv(self) -> str:
        lines = ["iteration\tresidual\tpsnr_f\tpsnr_q"]
        for i, r in enumerate(self.residual):
            pf = f"{self.psnr_iterate[i]:.6f}" if self.psnr_iterate else "nan"
            pq = f"{self.psnr_q[i]:.6f}" if self.psnr_q else "nan"
            lines.append(f"{i + 1}\t{r:.6e}\t{pf}\t{pq}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        atomic_write_text(path, self.to_tsv())


def _array(x) -> np.ndarray:
    return x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)


def km_denoise(g, Q: Callable, cfg: KMConfig = KMConfig(), reference=None,
               peak: float = 1.0) -> tuple[Image, IterationTrace]:
    """Iterate the relaxed fixed-point scheme starting from ``g``.

    Stops once ``||f_{n+1} - f_n|| / ||f_n|| < stop_tol`` or after
    ``max_iters`` iterations.  ``residual`` in the trace is that relative
    change; with a ``reference`` the PSNR of every iterate and of every
    ``Q(f_n)`` is recorded too.
    """
    g_arr = _array(g)
    f = g_arr.copy()
    trace = IterationTrace()
    ref = None if reference is None else _array(reference)
    for n in range(cfg.max_iters):
        q = _array(Q(Image(f) if g_arr.ndim == 2 else f))
        if q.shape != f.shape:
            raise InvalidArgumentError(f"denoiser returned shape {q.shape} for input {f.shape}")
        fbar = cfg.mu * g_arr + (1 - cfg.mu) * q
        f_next = f + cfg.relaxation_at(n) * (fbar - f)
        if not np.all(np.isfinite(f_next)):
            raise NumericFailureError(f"non-finite iterate at iteration {n + 1}")
        norm = float(np.linalg.norm(f))
        change = float(np.linalg.norm(f_next - f))
        rel = change / norm if norm > 0 else change
        if cfg.record_trace:
            trace.residual.append(rel)
            if ref is not None:
                trace.psnr_q.append(psnr(q, ref, peak))
                trace.psnr_iterate.append(psnr(f_next, ref, peak))
        f = f_next
        if rel < cfg.stop_tol:
            break
    out = Image(f) if f.ndim == 2 else f
    return out, trace


def estimate_lipschitz(Q: Callable, probes: Sequence, steps: int = 10, epsilon: float = 1e-4,
                       seed: int = 0) -> tuple[float, int]:
    """Largest finite-difference Jacobian norm of ``Q`` over the probe points.

    At each probe ``z`` an orthonormal Krylov basis ``v, Jv, J^2 v, ...`` of
    the Jacobian ``J = Q'(z)`` is grown from a random direction, using only
    forward differences ``(Q(z + eps v) - Q(z)) / eps`` (``eps`` relative to
    the RMS value of ``z``).  The largest singular value of ``J`` restricted
    to that basis is the estimate for ``z``; it is exact once ``steps``
    reaches the dimension of the input.  Returns the maximum
    and the index of the probe that attains it.
    """
    if not probes:
        raise InvalidArgumentError("at least one probe is required")
    if steps < 1:
        raise InvalidArgumentError("steps must be positive")
    rng = np.random.default_rng(seed)
    best, best_idx = -math.inf, -1
    for idx, z in enumerate(probes):
        z = _array(z)
        scale = max(float(np.linalg.norm(z)) / math.sqrt(z.size), 1.0)
        h = epsilon * scale
        if not h > 0 or (z + h == z).all():
            raise NumericFailureError("finite-difference step underflows at this probe")
        qz = _array(Q(Image(z) if z.ndim == 2 else z))

        def jv(v):
            return (_array(Q(Image(z + h * v) if z.ndim == 2 else z + h * v)) - qz) / h

        basis, images = [], []
        v = rng.standard_normal(z.shape)
        for _ in range(min(steps, z.size)):
            for _ in range(2):
                for b in basis:
                    v = v - np.vdot(b, v) * b
            nv = np.linalg.norm(v)
            if nv < 1e-10 * max(1.0, float(np.linalg.norm(images[-1])) if images else 1.0):
                # the Krylov space is invariant; continue from a fresh random direction
                v = rng.standard_normal(z.shape)
                for b in basis:
                    v = v - np.vdot(b, v) * b
                nv = np.linalg.norm(v)
            v = v / nv
            basis.append(v)
            images.append(jv(v))
            v = images[-1].reshape(z.shape)
        J = np.array([img.ravel() for img in images]).T
        est = float(np.linalg.svd(J, compute_uv=False)[0])
        if not math.isfinite(est):
            raise NumericFailureError("non-finite Lipschitz estimate")
        if est > best:
            best, best_idx = est, idx
    return best, best_idx


def suggest_mu(lipschitz: float, floor: float = MU_FLOOR) -> float:
    """``max(1 - 1/L, floor)``, kept strictly inside ``(0, 1)``."""
    if not lipschitz > 0:
        raise InvalidArgumentError(f"Lipschitz estimate must be positive, got {lipschitz}")
    mu = max(1.0 - 1.0 / lipschitz, floor)
    return min(max(mu, 1e-12), 1.0 - 1e-12)
