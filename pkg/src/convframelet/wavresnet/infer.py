"""Whole-image denoising with a trained network."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import directional
from ..errors import InvalidArgumentError
from ..image_core import Image, average_patches, extract_patches
from .network import NetworkParams, forward


@dataclass(frozen=True)
class PatchConfig:
    """Patch grid used at inference; ``size=None`` means the network's training patch.

    The default dense grid (stride 1) averages every patch position; coarser
    strides trade a little accuracy for speed.
    """

    size: tuple[int, int] | None = None
    stride: int = 1
    batch: int = 64

    def __post_init__(self):
        if self.stride < 1 or self.batch < 1:
            raise InvalidArgumentError("stride and batch must be positive")


def denoise_bands(params: NetworkParams, bands: np.ndarray, patch: PatchConfig = PatchConfig()) -> np.ndarray:
    """Patch-wise network output on a ``(p, H, W)`` subband stack, recomposed by averaging."""
    size = patch.size or params.arch.patch
    ps = extract_patches(bands, size, patch.stride)
    out = np.empty_like(ps.patches)
    for start in range(0, len(out), patch.batch):
        out[start:start + patch.batch] = forward(params, ps.patches[start:start + patch.batch])
    return average_patches(ps.with_patches(out)).bands


def infer_image(params: NetworkParams, image, transform: directional.DirectionalTransform,
                patch: PatchConfig = PatchConfig()) -> Image:
    """Transform, denoise every patch, average the overlaps, invert."""
    if transform.band_count != params.arch.in_bands:
        raise InvalidArgumentError(
            f"transform produces {transform.band_count} bands, network expects {params.arch.in_bands}")
    stack = directional.forward(image, transform)
    return directional.inverse(denoise_bands(params, stack.bands, patch), transform)


class NetworkDenoiser:
    """The image-to-image map ``Q`` realised by a network, for use in fixed-point iterations."""

    def __init__(self, params: NetworkParams, transform: directional.DirectionalTransform,
                 patch: PatchConfig = PatchConfig()):
        self.params = params
        self.transform = transform
        self.patch = patch

    def __call__(self, image) -> Image:
        return infer_image(self.params, image, self.transform, self.patch)
