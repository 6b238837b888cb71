"""Desk-scale CT data factory.

Images live on the square ``[-1, 1]^2`` (``y`` pointing up, row 0 at the
top); pixel values are linear attenuation coefficients per unit length of
that square.  Projection is parallel-beam with the detector spanning
``[-sqrt(2), sqrt(2)]`` so every ray through the image is recorded.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import InvalidArgumentError
from .image_core import Image

PHANTOM_KINDS = ("empty", "shepp_logan", "two_ellipse", "random_ellipses", "disk")
DEFAULT_PEAK = 1.0

# (value, semi-axis a, semi-axis b, x0, y0, rotation in degrees): modified Shepp-Logan
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

TWO_ELLIPSES = (
    (0.6, 0.7, 0.5, 0.0, 0.0, 0.0),
    (0.3, 0.2, 0.3, 0.25, 0.1, 30.0),
)


@dataclass(frozen=True)
class Sinogram:
    angles: np.ndarray
    detector_bins: int
    data: np.ndarray
    starved: bool = False

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        angles = np.asarray(self.angles, dtype=np.float64)
        if data.shape != (angles.size, self.detector_bins):
            raise InvalidArgumentError(f"sinogram data {data.shape} does not match {angles.size} angles x {self.detector_bins} bins")
        if not np.all(np.isfinite(data)):
            raise InvalidArgumentError("sinogram contains NaN or Inf")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "angles", angles)

    @property
    def bin_spacing(self) -> float:
        return detector_spacing(self.detector_bins)

    def __add__(self, other: "Sinogram") -> "Sinogram":
        return Sinogram(self.angles, self.detector_bins, self.data + other.data)


@dataclass(frozen=True)
class DoseConfig:
    incident_photons: float = 1e5
    dose_fraction: float = 1.0

    def __post_init__(self):
        if self.incident_photons <= 0:
            raise InvalidArgumentError("incident photon count must be positive")
        if not 0 < self.dose_fraction <= 1:
            raise InvalidArgumentError(f"dose fraction must lie in (0, 1], got {self.dose_fraction}")
        if self.incident_photons * self.dose_fraction < 1:
            raise InvalidArgumentError("fewer than one expected photon per ray at full transmission")

    @property
    def photons(self) -> float:
        return self.incident_photons * self.dose_fraction


def pixel_coordinates(size: int) -> tuple[np.ndarray, np.ndarray]:
    centres = (np.arange(size) + 0.5) / size * 2 - 1
    x = np.broadcast_to(centres[None, :], (size, size))
    y = np.broadcast_to(-centres[:, None], (size, size))
    return x, y


def ellipse_phantom(ellipses, size: int) -> Image:
    """Sum of constant-valued ellipses sampled at pixel centres."""
    x, y = pixel_coordinates(size)
    img = np.zeros((size, size))
    for value, a, b, x0, y0, phi in ellipses:
        c, s = np.cos(np.radians(phi)), np.sin(np.radians(phi))
        xr = (x - x0) * c + (y - y0) * s
        yr = -(x - x0) * s + (y - y0) * c
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += value
    return Image(img)


def random_ellipses(rng: np.random.Generator) -> list[tuple]:
    """A body outline with a handful of organ-like inclusions."""
    a = rng.uniform(0.72, 0.88)
    b = rng.uniform(0.55, 0.75)
    body = (0.5, a, b, 0.0, 0.0, rng.uniform(-10, 10))
    shapes = [body]
    for _ in range(rng.integers(4, 9)):
        r = rng.uniform(0.0, 0.6)
        ang = rng.uniform(0, 2 * np.pi)
        x0, y0 = r * a * np.cos(ang), r * b * np.sin(ang)
        room = 0.9 * min(a - abs(x0), b - abs(y0))
        if room < 0.06:
            continue
        ea = rng.uniform(0.04, min(0.3, room))
        eb = rng.uniform(0.04, min(0.3, room))
        value = rng.choice([-1.0, 1.0]) * rng.uniform(0.08, 0.35)
        shapes.append((value, ea, eb, x0, y0, rng.uniform(0, 180)))
    return shapes


def make_phantom(kind: str, size: int = 64, seed: int = 0) -> Image:
    """Deterministic analytic phantom; ``seed`` only matters for ``random_ellipses``."""
    if size < 32:
        raise InvalidArgumentError(f"phantom size must be at least 32, got {size}")
    if kind == "empty":
        return Image(np.zeros((size, size)))
    if kind == "shepp_logan":
        return ellipse_phantom(_SHEPP_LOGAN, size)
    if kind == "two_ellipse":
        return ellipse_phantom(TWO_ELLIPSES, size)
    if kind == "disk":
        return ellipse_phantom([(1.0, 0.6, 0.6, 0.0, 0.0, 0.0)], size)
    if kind == "random_ellipses":
        rng = np.random.default_rng(seed)
        img = ellipse_phantom(random_ellipses(rng), size).data
        return Image(np.clip(img, 0.0, None))
    raise InvalidArgumentError(f"unknown phantom kind {kind!r}; choose from {PHANTOM_KINDS}")


def default_angles(count: int = 180) -> np.ndarray:
    return np.arange(count) * np.pi / count


def detector_spacing(bins: int) -> float:
    return 2 * np.sqrt(2) / bins


def detector_offsets(bins: int) -> np.ndarray:
    return (np.arange(bins) - (bins - 1) / 2) * detector_spacing(bins)


def project(x, angles, bins: int = 96) -> Sinogram:
    """Line integrals by ray marching with bilinear sampling.

    Samples are taken every half pixel along each ray, so the operator is
    linear in the image.
    """
    img = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    angles = np.atleast_1d(np.asarray(angles, dtype=np.float64))
    if angles.size == 0:
        raise InvalidArgumentError("at least one projection angle is required")
    size = img.shape[0]
    if img.shape != (size, size):
        raise InvalidArgumentError("project expects a square image")
    ds = 1.0 / size
    s = np.arange(-np.sqrt(2), np.sqrt(2) + ds / 2, ds)
    t = detector_offsets(bins)
    data = np.empty((angles.size, bins))
    for i, th in enumerate(angles):
        c, sn = np.cos(th), np.sin(th)
        px = t[:, None] * c - s[None, :] * sn
        py = t[:, None] * sn + s[None, :] * c
        col = (px + 1) / 2 * size - 0.5
        row = (1 - py) / 2 * size - 0.5
        vals = map_coordinates(img, [row.ravel(), col.ravel()], order=1, mode="constant", cval=0.0)
        data[i] = vals.reshape(bins, s.size).sum(axis=1) * ds
    return Sinogram(angles, bins, data)


def expected_counts(s: Sinogram, cfg: DoseConfig) -> np.ndarray:
    return cfg.photons * np.exp(-s.data)


def counts_to_sinogram(counts: np.ndarray, s: Sinogram, cfg: DoseConfig) -> Sinogram:
    """Log-transform measured counts, clamping at one photon."""
    starved = bool(np.any(counts < 1))
    data = -np.log(np.maximum(counts, 1.0) / cfg.photons)
    return Sinogram(s.angles, s.detector_bins, data, starved)


def apply_low_dose(s: Sinogram, cfg: DoseConfig, seed: int) -> Sinogram:
    """Poisson-resample the projection counts at ``I0 * dose_fraction`` photons per ray."""
    lam = expected_counts(s, cfg)
    starved = bool(np.any(lam < 1))
    if starved:
        warnings.warn("expected photon count below 1 on some rays (photon starvation)", RuntimeWarning, stacklevel=2)
    counts = np.random.default_rng(seed).poisson(lam).astype(np.float64)
    out = counts_to_sinogram(counts, s, cfg)
    return Sinogram(out.angles, out.detector_bins, out.data, starved or out.starved)


def ramp_kernel(bins: int, spacing: float) -> np.ndarray:
    """Band-limited (Ram-Lak) ramp filter taps for offsets ``-(bins-1) .. bins-1``."""
    k = np.arange(-(bins - 1), bins)
    h = np.zeros(k.size)
    h[k == 0] = 1.0 / (4 * spacing ** 2)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return h


def ramp_filter(s: Sinogram) -> np.ndarray:
    bins = s.detector_bins
    dt = s.bin_spacing
    h = ramp_kernel(bins, dt)
    n_fft = int(2 ** np.ceil(np.log2(3 * bins)))
    H = np.fft.rfft(h, n_fft)
    P = np.fft.rfft(s.data, n_fft, axis=1)
    full = np.fft.irfft(P * H[None, :], n_fft, axis=1)
    return dt * full[:, bins - 1: 2 * bins - 1]


def fbp(s: Sinogram, size: int = 64) -> Image:
    """Filtered backprojection onto a ``size x size`` grid over ``[-1, 1]^2``."""
    if s.angles.size < 8:
        raise InvalidArgumentError(f"filtered backprojection needs at least 8 angles, got {s.angles.size}")
    q = ramp_filter(s)
    x, y = pixel_coordinates(size)
    t0 = detector_offsets(s.detector_bins)[0]
    dt = s.bin_spacing
    img = np.zeros((size, size))
    for th, row in zip(s.angles, q):
        t = x * np.cos(th) + y * np.sin(th)
        img += np.interp((t - t0) / dt, np.arange(s.detector_bins), row, left=0.0, right=0.0)
    return Image(img * np.pi / s.angles.size)


@dataclass(frozen=True)
class CTPair:
    """One phantom reconstructed at routine dose and at a reduced dose.

    ``reference`` is the noise-free reconstruction (the infinite-dose limit
    of ``routine``).
    """

    index: int
    seed: int
    fraction: float
    phantom: np.ndarray
    reference: np.ndarray
    routine: np.ndarray
    low: np.ndarray


@dataclass(frozen=True)
class ScanConfig:
    """Acquisition settings.

    ``attenuation_scale`` converts image-unit line integrals to physical ones
    before photon counting (half-width of the field of view times the
    attenuation of a unit pixel value); reconstructions are returned in
    image units.
    """

    size: int = 64
    angles: int = 180
    bins: int = 96
    incident_photons: float = 1e5
    attenuation_scale: float = 10.0


def simulate_pairs(phantom: Image, fractions, scan: ScanConfig, seed: int, index: int = 0) -> list[CTPair]:
    """Routine-dose scan plus reduced-dose scans thinned from the same photons.

    Routine counts are ``Poisson(I0 exp(-p))``; each reduced dose keeps every
    routine photon independently with probability ``fraction``.  Thinning a
    Poisson variable gives ``Poisson(fraction * I0 exp(-p))``, the same law
    :func:`apply_low_dose` samples, while a fraction of 1 reproduces the
    routine scan exactly.
    """
    rng = np.random.default_rng(seed)
    angles = default_angles(scan.angles)
    sino = project(phantom, angles, scan.bins)
    physical = Sinogram(angles, scan.bins, sino.data * scan.attenuation_scale)
    full_cfg = DoseConfig(scan.incident_photons, 1.0)
    counts = rng.poisson(expected_counts(physical, full_cfg)).astype(np.float64)

    def reconstruct(measured, cfg):
        p = counts_to_sinogram(measured, physical, cfg)
        return fbp(Sinogram(angles, scan.bins, p.data / scan.attenuation_scale), scan.size).data

    reference = fbp(sino, scan.size).data
    routine = reconstruct(counts, full_cfg)
    pairs = []
    for fraction in fractions:
        cfg = DoseConfig(scan.incident_photons, float(fraction))
        kept = counts if fraction == 1.0 else rng.binomial(counts.astype(np.int64), fraction).astype(np.float64)
        low = reconstruct(kept, cfg)
        pairs.append(CTPair(index, seed, float(fraction), phantom.data, reference, routine, low))
    return pairs


def make_dataset(family: str, fractions, count: int, seed: int, scan: ScanConfig = ScanConfig()) -> list[CTPair]:
    """``count`` phantoms, each scanned at routine dose and every fraction.

    Sample ``i`` draws everything from ``seed + i`` so any subset can be
    regenerated independently.
    """
    if count < 1:
        raise InvalidArgumentError(f"dataset count must be at least 1, got {count}")
    pairs = []
    for i in range(count):
        phantom = make_phantom(family, scan.size, seed + i)
        pairs.extend(simulate_pairs(phantom, fractions, scan, seed + i, index=i))
    return pairs
