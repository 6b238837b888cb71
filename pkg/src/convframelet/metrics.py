"""RMSE, PSNR and SSIM."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import correlate

from .errors import InvalidArgumentError
from .image_core import Image

PSNR_CAP = 200.0
SSIM_DEFAULTS = {"window": 11, "sigma": 1.5, "k1": 0.01, "k2": 0.03}


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = a.data if isinstance(a, Image) else np.asarray(a, dtype=np.float64)
    b = b.data if isinstance(b, Image) else np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"image dimensions differ: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr_from_rmse(err: float, peak: float) -> float:
    if peak <= 0:
        raise InvalidArgumentError(f"peak must be positive, got {peak}")
    if err == 0.0:
        return PSNR_CAP
    return min(20.0 * math.log10(peak / err), PSNR_CAP)


def psnr(a, b, peak: float) -> float:
    """Peak signal-to-noise ratio in dB, capped at 200 dB for identical images."""
    return psnr_from_rmse(rmse(a, b), peak)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, dynamic_range: float, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over all fully contained Gaussian-weighted windows.

    Windows that would cross the image border are discarded rather than
    padded, so a ``window x window`` image yields a single local value.
    """
    a, b = _pair(a, b)
    if a.ndim != 2:
        raise InvalidArgumentError("ssim expects 2-D images")
    if window > min(a.shape):
        raise InvalidArgumentError(f"window {window} larger than image {a.shape}")
    if dynamic_range <= 0:
        raise InvalidArgumentError("dynamic range must be positive")
    w = gaussian_window(window, sigma)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    half = window // 2
    valid = (slice(half, a.shape[0] - (window - 1 - half)), slice(half, a.shape[1] - (window - 1 - half)))

    def filt(x):
        return correlate(x, w, mode="constant")[valid]

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a ** 2
    var_b = filt(b * b) - mu_b ** 2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    rmse: float
    psnr: float
    ssim: float
    peak: float
    ssim_params: dict

    def as_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def to_table(self) -> str:
        return "metric\tvalue\nrmse\t{:.6g}\npsnr_db\t{:.4f}\nssim\t{:.6f}\n".format(self.rmse, self.psnr, self.ssim)


def evaluate(estimate, reference, peak: float, **ssim_kwargs) -> MetricReport:
    params = {**SSIM_DEFAULTS, **ssim_kwargs}
    err = rmse(estimate, reference)
    return MetricReport(
        rmse=err,
        psnr=psnr_from_rmse(err, peak),
        ssim=ssim(estimate, reference, peak, **params),
        peak=peak,
        ssim_params=params,
    )
