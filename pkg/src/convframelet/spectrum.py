"""Singular spectra of extended Hankel matrices built from network feature maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import directional, hankel
from .wavresnet.network import NetworkParams, module_features


def centred_spectrum(feature_maps: np.ndarray, kernel=(3, 3)) -> np.ndarray:
    """Descending singular values of the 2-D extended Hankel matrix of ``(C, H, W)`` maps.

    Each channel is centred first, so constant maps (for instance the
    response to an all-zero image) give an all-zero spectrum.
    """
    F = np.asarray(feature_maps, dtype=np.float64)
    F = F - F.mean(axis=(1, 2), keepdims=True)
    return hankel.hankel_spectrum(hankel.hankel2d(F, kernel))


def normalized(sigma: np.ndarray) -> np.ndarray:
    """``sigma / sigma[0]``; all zeros when the spectrum vanishes."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0 or sigma[0] == 0:
        return np.zeros_like(sigma)
    return sigma / sigma[0]


def tail_mass(sigma: np.ndarray) -> float:
    """Share of the squared spectrum beyond the first half of the indices (0 for a zero spectrum)."""
    s2 = np.asarray(sigma, dtype=np.float64) ** 2
    total = s2.sum()
    if total == 0:
        return 0.0
    return float(s2[len(s2) // 2:].sum() / total)


@dataclass(frozen=True)
class ModuleSpectra:
    """Spectra of the first and last module outputs for one probe image."""

    first: np.ndarray
    last: np.ndarray

    @property
    def first_tail(self) -> float:
        return tail_mass(self.first)

    @property
    def last_tail(self) -> float:
        return tail_mass(self.last)

    @property
    def compressed(self) -> bool:
        return self.last_tail <= self.first_tail

    def to_table(self) -> str:
        a, b = normalized(self.first), normalized(self.last)
        lines = ["index\tfirst_module\tlast_module"]
        lines += [f"{i + 1}\t{x:.6e}\t{y:.6e}" for i, (x, y) in enumerate(zip(a, b))]
        lines.append(f"# tail_mass\t{self.first_tail:.6e}\t{self.last_tail:.6e}")
        return "\n".join(lines) + "\n"


def module_spectra(params: NetworkParams, image, transform: directional.DirectionalTransform,
                   kernel=(3, 3)) -> ModuleSpectra:
    """Spectra of the outputs of the first and the last module on one image."""
    feats = module_features(params, directional.forward(image, transform))
    return ModuleSpectra(centred_spectrum(feats[1], kernel), centred_spectrum(feats[-1], kernel))
