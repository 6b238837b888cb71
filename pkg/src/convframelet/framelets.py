"""Frame operators, perfect-reconstruction checks and single-layer convolutional framelets.

A single encoder/decoder layer acts on a signal ``F`` of shape ``(n,)`` or
``(n, p)``::

    C = Phi.T @ (H_{d|p}(F) @ Psi)                      # encode, (n, q)
    F = (Phi_dual @ C) conv nu(Psi_dual)                 # decode

where ``nu`` carries the ``1/d`` normalisation.  Reconstruction is exact when
``Phi_dual @ Phi.T = I`` and ``Psi @ Psi_dual.T = I`` (or, for a low-rank
pair, a projection that contains the row space of ``H_{d|p}(F)``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import hankel
from .errors import InvalidArgumentError

PR_PROBE_LIMIT = 1024
PR_RANDOM_PROBES = 256


@dataclass(frozen=True)
class PoolingPair:
    """Pooling ``Phi`` and unpooling ``Phi_dual`` with ``Phi_dual @ Phi.T = I``."""

    phi: np.ndarray
    phi_dual: np.ndarray

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=np.float64)
        dual = np.asarray(self.phi_dual, dtype=np.float64)
        if phi.shape != dual.shape or phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
            raise InvalidArgumentError(f"pooling pair needs two n x n matrices, got {phi.shape} and {dual.shape}")
        residual = np.max(np.abs(dual @ phi.T - np.eye(phi.shape[0])))
        if residual > 1e-10:
            raise InvalidArgumentError(f"Phi_dual @ Phi.T deviates from identity by {residual:.3e}")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "phi_dual", dual)

    @property
    def n(self) -> int:
        return self.phi.shape[0]

    @classmethod
    def identity(cls, n: int) -> "PoolingPair":
        return cls(np.eye(n), np.eye(n))

    @classmethod
    def orthogonal(cls, n: int, rng: np.random.Generator) -> "PoolingPair":
        q, _ = np.linalg.qr(rng.standard_normal((n, n)))
        return cls(q, q)

    @classmethod
    def biorthogonal(cls, n: int, rng: np.random.Generator) -> "PoolingPair":
        """A non-orthogonal, well-conditioned pair: ``Phi_dual = Phi^{-T}``."""
        phi = np.eye(n) + 0.3 * rng.standard_normal((n, n)) / np.sqrt(n)
        return cls(phi, np.linalg.inv(phi).T)


def orthogonal_filters(d: int, rng: np.random.Generator) -> np.ndarray:
    """A random ``d x d`` orthogonal filter matrix (self-dual)."""
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return q


def dual_filters(psi) -> np.ndarray:
    """Canonical dual ``Psi_dual = (Psi Psi^T)^{-1} Psi`` of a full-row-rank filter matrix."""
    psi = np.asarray(psi, dtype=np.float64)
    if psi.shape[1] < psi.shape[0]:
        raise InvalidArgumentError(
            f"a {psi.shape[0]} x {psi.shape[1]} filter matrix has too few channels to be a frame"
        )
    return np.linalg.solve(psi @ psi.T, psi)


class FrameOperator:
    """Analysis operator ``W`` with a synthesis operator ``W_dual^T``.

    Subclasses implement :meth:`analyze`, :meth:`synthesize` and
    :meth:`adjoint` (the exact transpose of :meth:`analyze`).
    """

    input_shape: tuple[int, ...]
    declared_bounds: tuple[float, float] | None = None

    def analyze(self, f: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def synthesize(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def adjoint(self, c: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def size(self) -> int:
        return int(np.prod(self.input_shape))

    def gram(self, f: np.ndarray) -> np.ndarray:
        return self.adjoint(self.analyze(f))

    def reconstruct(self, f: np.ndarray) -> np.ndarray:
        return self.synthesize(self.analyze(f))


class MatrixFrame(FrameOperator):
    """Frame given by an explicit ``m x n`` analysis matrix."""

    def __init__(self, W, W_dual=None, declared_bounds=None):
        self.W = np.asarray(W, dtype=np.float64)
        self.W_dual = self.W if W_dual is None else np.asarray(W_dual, dtype=np.float64)
        if self.W.shape != self.W_dual.shape:
            raise InvalidArgumentError("analysis and dual matrices must have the same shape")
        self.input_shape = (self.W.shape[1],)
        self.declared_bounds = declared_bounds

    def analyze(self, f):
        return self.W @ np.asarray(f, dtype=np.float64)

    def synthesize(self, c):
        return self.W_dual.T @ np.asarray(c, dtype=np.float64)

    def adjoint(self, c):
        return self.W.T @ np.asarray(c, dtype=np.float64)


class ConvolutionalFramelet(FrameOperator):
    """One encoder/decoder layer: pooling pair plus encoder and decoder filter matrices.

    ``psi`` and ``psi_dual`` use the stacked ``(d*p, q)`` layout, one
    ``d``-row block per input channel.
    """

    def __init__(self, pooling: PoolingPair, psi, psi_dual, in_channels: int = 1,
                 declared_bounds=None):
        psi = np.asarray(psi, dtype=np.float64)
        psi_dual = np.asarray(psi_dual, dtype=np.float64)
        if psi.ndim == 1:
            psi = psi[:, None]
        if psi_dual.ndim == 1:
            psi_dual = psi_dual[:, None]
        if psi.shape != psi_dual.shape:
            raise InvalidArgumentError(f"encoder {psi.shape} and decoder {psi_dual.shape} shapes differ")
        self.pooling = pooling
        self.encoder = hankel.FilterBank.from_matrix(psi, in_channels)
        self.decoder = hankel.FilterBank.from_matrix(psi_dual, in_channels)
        self.d = self.encoder.taps
        self.p = in_channels
        self.q = psi.shape[1]
        if self.d > pooling.n:
            raise InvalidArgumentError(f"filter length {self.d} exceeds signal length {pooling.n}")
        self.input_shape = (pooling.n,) if in_channels == 1 else (pooling.n, in_channels)
        self.declared_bounds = declared_bounds

    @classmethod
    def from_filters(cls, psi, psi_dual=None, n: int | None = None, pooling: PoolingPair | None = None,
                     in_channels: int = 1, declared_bounds=None) -> "ConvolutionalFramelet":
        if pooling is None:
            if n is None:
                raise InvalidArgumentError("give either a pooling pair or the signal length n")
            pooling = PoolingPair.identity(n)
        psi_dual = psi if psi_dual is None else psi_dual
        return cls(pooling, psi, psi_dual, in_channels, declared_bounds)

    @property
    def psi(self) -> np.ndarray:
        return self.encoder.as_matrix()

    @property
    def psi_dual(self) -> np.ndarray:
        return self.decoder.as_matrix()

    def _signal(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.shape != self.input_shape:
            raise InvalidArgumentError(f"expected signal of shape {self.input_shape}, got {f.shape}")
        return f.reshape(self.pooling.n, self.p)

    def _coefficients(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        if c.ndim == 1 and self.q == 1:
            c = c[:, None]
        if c.shape != (self.pooling.n, self.q):
            raise InvalidArgumentError(f"expected coefficients of shape {(self.pooling.n, self.q)}, got {c.shape}")
        return c

    def analyze(self, f):
        F = self._signal(f)
        return self.pooling.phi.T @ hankel.mimo_conv(F, self.encoder)

    def _decode(self, c, unpool: np.ndarray, bank: hankel.FilterBank) -> np.ndarray:
        Z = unpool @ self._coefficients(c)
        out = np.zeros((self.pooling.n, self.p))
        for j in range(self.p):
            for l in range(self.q):
                out[:, j] += hankel.circular_convolve(Z[:, l], bank.coefficients[j, l])
        out /= self.d
        return out.reshape(self.input_shape)

    def synthesize(self, c):
        return self._decode(c, self.pooling.phi_dual, self.decoder)

    def adjoint(self, c):
        # the transpose of analyze is the decoder built from (Phi, Psi), without the 1/d factor
        return self.d * self._decode(c, self.pooling.phi, self.encoder)


@dataclass(frozen=True)
class CoefficientTensor:
    values: np.ndarray
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise InvalidArgumentError("framelet coefficients contain NaN or Inf")
        object.__setattr__(self, "values", v)

    def scaled(self, alpha: float) -> "CoefficientTensor":
        return CoefficientTensor(alpha * self.values, self.provenance)


def encode(f, op: FrameOperator) -> CoefficientTensor:
    provenance = {"operator": type(op).__name__, "input_shape": tuple(op.input_shape)}
    if isinstance(op, ConvolutionalFramelet):
        provenance.update(d=op.d, p=op.p, q=op.q)
    return CoefficientTensor(op.analyze(f), provenance)


def decode(c, op: FrameOperator) -> np.ndarray:
    values = c.values if isinstance(c, CoefficientTensor) else c
    return op.synthesize(values)


@dataclass(frozen=True)
class FrameBounds:
    lower: float
    upper: float
    is_frame: bool

    @property
    def tight(self) -> bool:
        return self.is_frame and abs(self.upper - self.lower) <= 1e-8 * self.upper


def _lanczos_extremes(apply, shape, rng, steps):
    """Extreme Ritz values of a symmetric operator from a fully reorthogonalised Krylov basis."""
    size = int(np.prod(shape))
    steps = min(steps, size)
    Q = np.zeros((steps, size))
    v = rng.standard_normal(size)
    Q[0] = v / np.linalg.norm(v)
    alphas, betas = [], []
    for k in range(steps):
        w = np.asarray(apply(Q[k].reshape(shape)), dtype=np.float64).ravel()
        alphas.append(float(Q[k] @ w))
        w -= Q[:k + 1].T @ (Q[:k + 1] @ w)
        w -= Q[:k + 1].T @ (Q[:k + 1] @ w)
        norm = float(np.linalg.norm(w))
        if k + 1 == steps or norm <= 1e-13 * max(abs(alphas[0]), 1.0):
            break
        betas.append(norm)
        Q[k + 1] = w / norm
    T = np.diag(alphas) + np.diag(betas, 1) + np.diag(betas, -1)
    ritz = np.linalg.eigvalsh(T)
    return float(ritz[0]), float(ritz[-1])


def estimate_frame_bounds(op: FrameOperator, trials: int = 8, iterations: int = 200,
                          seed: int = 0) -> FrameBounds:
    """Estimate ``(alpha, beta)`` from the extreme eigenvalues of ``W^T W``.

    Each trial runs ``iterations`` Lanczos steps from a random start; the
    bounds are the smallest and largest Ritz values seen.  They are exact once
    ``iterations`` reaches the signal size.  An operator with a (numerically)
    non-trivial null space gets ``alpha = 0`` and ``is_frame = False``.
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be at least 1")
    rng = np.random.default_rng(seed)
    extremes = [_lanczos_extremes(op.gram, op.input_shape, rng, iterations) for _ in range(trials)]
    alpha = min(e[0] for e in extremes)
    beta = max(e[1] for e in extremes)
    if beta <= 0.0:
        return FrameBounds(0.0, 0.0, False)
    if alpha <= 1e-10 * beta:
        return FrameBounds(0.0, beta, False)
    return FrameBounds(alpha, beta, True)


@dataclass(frozen=True)
class PRReport:
    passed: bool
    max_residual: float
    probes: int


def verify_pr(op: FrameOperator, tolerance: float = 1e-10, seed: int = 0) -> PRReport:
    """Check ``W_dual^T W = I`` on a probe basis.

    Every canonical basis vector is probed when the signal has at most 1024
    entries; larger operators get 256 Gaussian probes and the residual is
    measured relative to each probe's max-norm.
    """
    shape = op.input_shape
    size = op.size
    worst = 0.0
    if size <= PR_PROBE_LIMIT:
        probes = size
        for i in range(size):
            e = np.zeros(size)
            e[i] = 1.0
            e = e.reshape(shape)
            worst = max(worst, float(np.max(np.abs(op.reconstruct(e) - e))))
    else:
        probes = PR_RANDOM_PROBES
        rng = np.random.default_rng(seed)
        for _ in range(probes):
            e = rng.standard_normal(shape)
            worst = max(worst, float(np.max(np.abs(op.reconstruct(e) - e)) / np.max(np.abs(e))))
    return PRReport(worst <= tolerance, worst, probes)


def framelet_identity_residual(f, op: ConvolutionalFramelet) -> float:
    """Max deviation of ``H = Phi_dual Phi^T H Psi Psi_dual^T`` for the signal ``f``."""
    F = op._signal(f)
    H = hankel.build_extended_hankel(F, op.d).rows
    rebuilt = op.pooling.phi_dual @ op.pooling.phi.T @ H @ op.psi @ op.psi_dual.T
    return float(np.max(np.abs(rebuilt - H)))


def lowrank_pair_from_signal(f, d: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Encoder/decoder filters projecting onto the top-``r`` row space of ``H_d(f)``.

    Returns ``(Psi, Psi_dual)``, both the ``d x r`` matrix of leading right
    singular vectors, so ``Psi @ Psi_dual.T`` is the orthogonal projection.
    """
    if r < 1:
        raise InvalidArgumentError("rank r must be at least 1")
    if r > d:
        raise InvalidArgumentError(f"rank r={r} exceeds window d={d}")
    H = hankel.build_hankel(f, d)
    _, V = hankel.svd(H.rows)
    basis = V[:, :r].copy()
    return basis, basis.copy()


def complement_filters(f, d: int, r: int) -> np.ndarray:
    """Orthonormal basis of the complement of the top-``r`` row space of ``H_d(f)``."""
    if not 0 <= r < d:
        raise InvalidArgumentError(f"need 0 <= r < d, got r={r}, d={d}")
    _, V = hankel.svd(hankel.build_hankel(f, d).rows)
    return V[:, r:].copy()


def annihilation_residual(f, psi) -> float:
    """Relative energy ``||H_d(f) Psi|| / ||f||`` left after filtering ``f``."""
    f = np.asarray(f, dtype=np.float64)
    norm = np.linalg.norm(f)
    if norm == 0.0:
        raise InvalidArgumentError("annihilation residual is undefined for the zero signal")
    psi = np.asarray(psi, dtype=np.float64)
    if psi.ndim == 1:
        psi = psi[:, None]
    H = hankel.build_hankel(f, psi.shape[0]).rows
    return float(np.linalg.norm(H @ psi) / norm)
