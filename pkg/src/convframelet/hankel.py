"""Wrap-around Hankel matrices and the circular convolutions they encode.

Index convention (0-based, indices mod ``n``): the Hankel matrix of ``f`` with
window ``d`` has entries ``H[i, j] = f[i + j]``, so ``H @ psi`` is the
circular correlation ``y[i] = sum_j f[i + j] psi[j]``.  Written as a
convolution this is ``f`` convolved with the flipped filter ``psi[::-1]``,
with output sample ``i`` anchored at the window that starts at ``i``.
Filters are always passed unflipped; the flip happens here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError

RANK_THRESHOLD = 1e-8


@dataclass(frozen=True)
class HankelMatrix:
    source_length: int
    window: int
    rows: np.ndarray


@dataclass(frozen=True)
class ExtendedHankelMatrix:
    channel_count: int
    window: int
    rows: np.ndarray


@dataclass(frozen=True)
class FilterBank:
    """Multi-input multi-output filter set.

    ``coefficients`` has shape ``(p, q, d)`` for 1-D filters or
    ``(p, q, k_h, k_w)`` for 2-D filters; entry ``[j, i]`` is the (unflipped)
    filter from input channel ``j`` to output channel ``i``.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=np.float64)
        if c.ndim not in (3, 4):
            raise InvalidArgumentError(f"filter bank needs 3 or 4 dims, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise InvalidArgumentError("filter bank has non-finite coefficients")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def siso(cls, psi) -> "FilterBank":
        psi = np.asarray(psi, dtype=np.float64).ravel()
        return cls(psi[None, None, :])

    @classmethod
    def from_matrix(cls, psi_matrix, in_channels: int) -> "FilterBank":
        """Build from the stacked ``(d*p, q)`` layout, one ``d``-row block per input channel."""
        m = np.asarray(psi_matrix, dtype=np.float64)
        if m.ndim == 1:
            m = m[:, None]
        dp, q = m.shape
        if dp % in_channels:
            raise InvalidArgumentError(f"{dp} rows do not split into {in_channels} channel blocks")
        d = dp // in_channels
        return cls(m.reshape(in_channels, d, q).transpose(0, 2, 1))

    @property
    def in_channels(self) -> int:
        return self.coefficients.shape[0]

    @property
    def out_channels(self) -> int:
        return self.coefficients.shape[1]

    @property
    def taps(self):
        shape = self.coefficients.shape[2:]
        return shape[0] if len(shape) == 1 else shape

    def as_matrix(self) -> np.ndarray:
        """The ``(d*p, q)`` matrix multiplying the extended Hankel matrix."""
        if self.coefficients.ndim != 3:
            raise InvalidArgumentError("matrix layout only exists for 1-D filter banks")
        p, q, d = self.coefficients.shape
        return self.coefficients.transpose(0, 2, 1).reshape(p * d, q)


def _vector(f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or f.size == 0:
        raise InvalidArgumentError(f"expected a non-empty 1-D signal, got shape {f.shape}")
    return f


def build_hankel(f, d: int) -> HankelMatrix:
    f = _vector(f)
    n = f.size
    if not 1 <= d <= n:
        raise InvalidArgumentError(f"window d={d} must satisfy 1 <= d <= n={n}")
    idx = (np.arange(n)[:, None] + np.arange(d)[None, :]) % n
    return HankelMatrix(n, d, f[idx])


def build_extended_hankel(F, d: int) -> ExtendedHankelMatrix:
    """Side-by-side Hankel matrices of the columns of ``F`` (shape ``(n, p)``)."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    blocks = [build_hankel(F[:, j], d).rows for j in range(F.shape[1])]
    return ExtendedHankelMatrix(F.shape[1], d, np.hstack(blocks))


def hankel_to_signal(H: np.ndarray) -> np.ndarray:
    """Average the wrapped anti-diagonals of an ``n x d`` matrix back to a signal."""
    H = np.asarray(H, dtype=np.float64)
    n, d = H.shape
    idx = (np.arange(n)[:, None] + np.arange(d)[None, :]) % n
    out = np.zeros(n)
    np.add.at(out, idx.ravel(), H.ravel())
    return out / d


def siso_conv(f, psi) -> np.ndarray:
    """Single-channel filtering ``H_d(f) @ psi``, evaluated without forming ``H``."""
    f = _vector(f)
    if isinstance(psi, FilterBank):
        if psi.in_channels != 1 or psi.out_channels != 1:
            raise InvalidArgumentError("siso_conv needs a 1-in/1-out filter bank")
        psi = psi.coefficients[0, 0]
    psi = _vector(psi)
    if psi.size > f.size:
        raise InvalidArgumentError(f"filter length {psi.size} exceeds signal length {f.size}")
    out = np.zeros_like(f)
    for j, tap in enumerate(psi):
        out += tap * np.roll(f, -j)
    return out


def circular_convolve(z, h) -> np.ndarray:
    """Causal circular convolution ``y[k] = sum_j z[k - j] h[j]``.

    This is the synthesis-side convolution: it is the transpose of
    :func:`siso_conv` with the same filter.
    """
    z = _vector(z)
    h = _vector(h)
    out = np.zeros_like(z)
    for j, tap in enumerate(h):
        out += tap * np.roll(z, j)
    return out


def mimo_conv(F, bank: FilterBank) -> np.ndarray:
    """Multi-channel filtering ``H_{d|p}(F) @ Psi`` for ``F`` of shape ``(n, p)``."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if bank.coefficients.ndim != 3:
        raise InvalidArgumentError("mimo_conv needs a 1-D filter bank")
    if bank.in_channels != F.shape[1]:
        raise InvalidArgumentError(
            f"filter bank expects {bank.in_channels} input channels, signal has {F.shape[1]}"
        )
    n = F.shape[0]
    if bank.taps > n:
        raise InvalidArgumentError(f"filter length {bank.taps} exceeds signal length {n}")
    out = np.zeros((n, bank.out_channels))
    for j in range(bank.in_channels):
        for i in range(bank.out_channels):
            out[:, i] += siso_conv(F[:, j], bank.coefficients[j, i])
    return out


def conv2d(image, bank: FilterBank) -> np.ndarray:
    """Circular multi-channel 2-D filtering with centred, odd-sized kernels.

    ``image`` has shape ``(p, H, W)`` (a 2-D array is one channel).  Output
    channel ``i`` is ``sum_j sum_{a,b} x_j[y + a - k_h//2, x + b - k_w//2] *
    w[j, i, a, b]``, i.e. the 2-D analogue of :func:`siso_conv`.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    w = bank.coefficients
    if w.ndim != 4:
        raise InvalidArgumentError("conv2d needs a 2-D filter bank")
    p, q, kh, kw = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidArgumentError(f"kernel dims must be odd, got {(kh, kw)}")
    if x.shape[0] != p:
        raise InvalidArgumentError(f"filter bank expects {p} channels, image has {x.shape[0]}")
    out = np.zeros((q,) + x.shape[1:])
    for a in range(kh):
        for b in range(kw):
            shifted = np.roll(x, (-(a - kh // 2), -(b - kw // 2)), axis=(1, 2))
            out += np.einsum("jhw,ji->ihw", shifted, w[:, :, a, b])
    return out


def hankel2d(image, kernel) -> np.ndarray:
    """2-D block-Hankel lifting of a multi-channel image.

    Row ``(y, x)`` holds the circular ``k_h x k_w`` neighbourhood (as used by
    :func:`conv2d`) of every channel, so ``hankel2d(x, k) @ W`` reproduces
    :func:`conv2d` for the matching weights.
    """
    x = np.asarray(image, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    kh, kw = kernel
    p, H, W = x.shape
    cols = np.empty((H * W, p, kh, kw))
    for a in range(kh):
        for b in range(kw):
            shifted = np.roll(x, (-(a - kh // 2), -(b - kw // 2)), axis=(1, 2))
            cols[:, :, a, b] = shifted.reshape(p, H * W).T
    return cols.reshape(H * W, p * kh * kw)


def _jacobi_svd(A: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60):
    """One-sided (Hestenes) Jacobi SVD of a tall matrix.

    Returns singular values (descending) and right singular vectors as the
    columns of ``V``.
    """
    U = A.copy()
    k = U.shape[1]
    V = np.eye(k)
    # columns with negligible energy carry no singular value; rotating them cannot converge
    negligible = (tol ** 2) * float(np.sum(U * U))
    for _ in range(max_sweeps):
        rotated = False
        for i in range(k - 1):
            for j in range(i + 1, k):
                ui, uj = U[:, i], U[:, j]
                alpha = ui @ ui
                beta = uj @ uj
                gamma = ui @ uj
                if gamma == 0.0 or min(alpha, beta) <= negligible or abs(gamma) <= tol * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                U[:, i], U[:, j] = c * ui - s * uj, s * ui + c * uj
                vi, vj = V[:, i].copy(), V[:, j].copy()
                V[:, i], V[:, j] = c * vi - s * vj, s * vi + c * vj
        if not rotated:
            break
    else:
        raise NumericFailureError(f"Jacobi SVD did not converge in {max_sweeps} sweeps")
    sigma = np.linalg.norm(U, axis=0)
    order = np.argsort(-sigma, kind="stable")
    return sigma[order], V[:, order]


def svd(A) -> tuple[np.ndarray, np.ndarray]:
    """Singular values (descending) and right singular vectors of ``A``.

    Tall inputs are first reduced to their triangular QR factor so the Jacobi
    sweeps act on a ``k x k`` matrix.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidArgumentError(f"expected a matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericFailureError("matrix has non-finite entries")
    m, k = A.shape
    if k == 0 or m == 0:
        return np.zeros(0), np.zeros((k, 0))
    if m < k:
        # rank is at most m; pad with zero rows so the matrix is square
        A = np.vstack([A, np.zeros((k - m, k))])
    elif m > k:
        A = np.linalg.qr(A, mode="r")
    if not np.any(A):
        return np.zeros(k), np.eye(k)
    return _jacobi_svd(A)


def hankel_spectrum(H) -> np.ndarray:
    """Descending singular values of a Hankel or extended Hankel matrix."""
    rows = H.rows if isinstance(H, (HankelMatrix, ExtendedHankelMatrix)) else H
    sigma, _ = svd(rows)
    return sigma


def numeric_rank(sigma, threshold: float = RANK_THRESHOLD) -> int:
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or sigma[0] == 0:
        return 0
    return int(np.count_nonzero(sigma / sigma[0] >= threshold))
