"""Image containers, patch extraction and overlap-averaged recomposition.

All boundary handling is circular: a patch that runs past the right or bottom
edge wraps around to the opposite side.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Image:
    """A 2-D real image stored as float64."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.size == 0:
            raise InvalidArgumentError(f"Image needs a non-empty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("Image data contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def value_range(self) -> tuple[float, float]:
        return float(self.data.min()), float(self.data.max())


@dataclass(frozen=True)
class SubbandStack:
    """``p`` equally sized bands stored as a ``(p, H, W)`` float64 array."""

    bands: np.ndarray

    def __post_init__(self):
        arr = np.array(self.bands, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise InvalidArgumentError(f"SubbandStack needs shape (p, H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("SubbandStack contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "bands", arr)

    @property
    def band_count(self) -> int:
        return self.bands.shape[0]

    @property
    def dims(self) -> tuple[int, int]:
        return self.bands.shape[1], self.bands.shape[2]

    def band(self, k: int) -> Image:
        return Image(self.bands[k])


@dataclass(frozen=True)
class PatchSet:
    """Patches cut at the same locations from every band of a stack.

    ``patches`` has shape ``(L, p, h_p, w_p)``; ``locations[l]`` is the
    top-left corner of patch ``l`` in source coordinates.
    """

    patch_size: tuple[int, int]
    stride: int
    locations: tuple[tuple[int, int], ...]
    patches: np.ndarray
    source_dims: tuple[int, int]
    circular: bool = True

    def with_patches(self, patches: np.ndarray) -> "PatchSet":
        patches = np.asarray(patches, dtype=np.float64)
        if patches.shape[0] != len(self.locations) or patches.shape[2:] != tuple(self.patch_size):
            raise InvalidArgumentError(
                f"replacement patches shape {patches.shape} incompatible with grid "
                f"({len(self.locations)} x {self.patch_size})"
            )
        return PatchSet(self.patch_size, self.stride, self.locations, patches,
                        self.source_dims, self.circular)


def _as_stack(x) -> np.ndarray:
    if isinstance(x, SubbandStack):
        return x.bands
    if isinstance(x, Image):
        return x.data[None]
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise InvalidArgumentError(f"expected (p, H, W) or (H, W) array, got shape {arr.shape}")
    return arr


def _grid(length: int, size: int, stride: int, circular: bool) -> list[int]:
    if circular:
        return list(range(0, length, stride))
    if size > length:
        raise InvalidArgumentError(f"patch size {size} exceeds image size {length} without circular extension")
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] != length - size:
        starts.append(length - size)
    return starts


def patch_grid(dims: Sequence[int], patch_size: Sequence[int], stride: int,
               circular: bool = True) -> list[tuple[int, int]]:
    """Top-left corners of every patch on the stride grid."""
    hp, wp = _check_patch_args(patch_size, stride)
    rows = _grid(dims[0], hp, stride, circular)
    cols = _grid(dims[1], wp, stride, circular)
    return [(r, c) for r in rows for c in cols]


def _check_patch_args(patch_size, stride) -> tuple[int, int]:
    if isinstance(patch_size, (int, np.integer)):
        patch_size = (int(patch_size), int(patch_size))
    hp, wp = (int(v) for v in patch_size)
    if hp <= 0 or wp <= 0:
        raise InvalidArgumentError(f"patch size must be positive, got {patch_size}")
    if int(stride) <= 0:
        raise InvalidArgumentError(f"stride must be positive, got {stride}")
    return hp, wp


def _footprint(loc: tuple[int, int], hp: int, wp: int, dims: tuple[int, int]):
    rows = (loc[0] + np.arange(hp)) % dims[0]
    cols = (loc[1] + np.arange(wp)) % dims[1]
    return rows, cols


def extract_patches(stack, patch_size, stride: int = 1, circular: bool = True) -> PatchSet:
    """Cut patches on a regular grid, identically positioned in every band.

    With ``circular=True`` (the default) the grid starts at every multiple of
    ``stride`` and patches wrap around the image edges; otherwise the grid is
    clipped to the image and a final patch is aligned with the far edge so
    every pixel is covered.
    """
    bands = _as_stack(stack)
    hp, wp = _check_patch_args(patch_size, stride)
    dims = bands.shape[1:]
    locs = patch_grid(dims, (hp, wp), stride, circular)
    out = np.empty((len(locs), bands.shape[0], hp, wp))
    for i, loc in enumerate(locs):
        rows, cols = _footprint(loc, hp, wp, dims)
        out[i] = bands[:, rows[:, None], cols[None, :]]
    return PatchSet((hp, wp), int(stride), tuple(locs), out, tuple(dims), circular)


def coverage_counts(dims, patch_size, stride: int, circular: bool = True) -> np.ndarray:
    """Number of patches covering each pixel."""
    hp, wp = _check_patch_args(patch_size, stride)
    counts = np.zeros(tuple(dims))
    for loc in patch_grid(dims, (hp, wp), stride, circular):
        rows, cols = _footprint(loc, hp, wp, tuple(dims))
        np.add.at(counts, (rows[:, None], cols[None, :]), 1.0)
    return counts


def average_patches(patches: PatchSet) -> SubbandStack:
    """Recompose a stack by averaging every patch value that covers a pixel.

    Patches are accumulated in grid order, so the result does not depend on
    how the per-patch work was scheduled.
    """
    if len(patches.locations) == 0 or patches.patches.size == 0:
        raise InvalidArgumentError("cannot average an empty patch set")
    hp, wp = patches.patch_size
    dims = patches.source_dims
    p = patches.patches.shape[1]
    acc = np.zeros((p,) + tuple(dims))
    counts = np.zeros(tuple(dims))
    # a patch larger than the image wraps onto itself; np.add.at handles the repeats
    wraps = hp > dims[0] or wp > dims[1]
    for loc, patch in zip(patches.locations, patches.patches):
        rows, cols = _footprint(loc, hp, wp, dims)
        if wraps:
            np.add.at(acc, (slice(None), rows[:, None], cols[None, :]), patch)
            np.add.at(counts, (rows[:, None], cols[None, :]), 1.0)
        else:
            acc[:, rows[:, None], cols[None, :]] += patch
            counts[rows[:, None], cols[None, :]] += 1
    if np.any(counts == 0):
        raise InvalidArgumentError("patch grid leaves pixels uncovered (stride larger than patch size)")
    return SubbandStack(acc / counts)
