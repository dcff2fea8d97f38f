"""Histogram-clipped normalization and color-coded band composites.

Rendering is for visualization only: inputs are never mutated and all
quantitative metrics run on the raw reconstructions.  Bands are additive
after clip-normalization -- pixels active in several bands blend toward
the sum of their colors.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .errors import ParameterError, ShapeError
from .model import Image

#: Clip fractions reproducing the reference rendering (0.5% highest,
#: 0.02% lowest pixel values saturated).
DEFAULT_CLIP_HIGH = 0.005
DEFAULT_CLIP_LOW = 0.0002

#: Low band blue, high band yellow.
PALETTE_2 = ((0.05, 0.30, 1.00), (1.00, 0.90, 0.10))
#: Low/mid/high as blue/green/red.
PALETTE_3 = ((0.05, 0.30, 1.00), (0.10, 0.95, 0.25), (1.00, 0.15, 0.10))


def default_palette(n_bands: int):
    if n_bands == 1:
        return ((1.0, 1.0, 1.0),)
    if n_bands == 2:
        return PALETTE_2
    if n_bands == 3:
        return PALETTE_3
    raise ParameterError(f"no default palette for {n_bands} bands")


@dataclass(frozen=True)
class CompositeSpec:
    """Color assignment and clipping for an additive band composite."""

    colors: tuple[tuple[float, float, float], ...]
    clip_high: float = DEFAULT_CLIP_HIGH
    clip_low: float = DEFAULT_CLIP_LOW

    def __post_init__(self):
        colors = tuple(tuple(float(c) for c in rgb) for rgb in self.colors)
        if not colors:
            raise ParameterError("need at least one band color")
        for rgb in colors:
            if len(rgb) != 3 or min(rgb) < 0 or max(rgb) > 1:
                raise ParameterError(f"invalid RGB triplet {rgb}")
        for frac in (self.clip_high, self.clip_low):
            if not 0 <= frac < 0.5:
                raise ParameterError("clip fractions must lie in [0, 0.5)")
        object.__setattr__(self, "colors", colors)


def clip_normalize_values(values: np.ndarray, high_frac: float = DEFAULT_CLIP_HIGH,
                          low_frac: float = DEFAULT_CLIP_LOW) -> np.ndarray:
    """Saturate extreme quantiles, then min-max normalize to [0, 1].

    A constant input has no range to normalize; zeros are returned with a
    warning.
    """
    for frac in (high_frac, low_frac):
        if not 0 <= frac < 0.5:
            raise ParameterError("clip fractions must lie in [0, 0.5)")
    values = np.asarray(values, dtype=float)
    lo = float(np.quantile(values, low_frac))
    hi = float(np.quantile(values, 1.0 - high_frac))
    if hi <= lo:
        warnings.warn("image has no dynamic range after clipping; "
                      "returning zeros", stacklevel=2)
        return np.zeros_like(values)
    return (np.clip(values, lo, hi) - lo) / (hi - lo)


def clip_normalize(img: Image, high_frac: float = DEFAULT_CLIP_HIGH,
                   low_frac: float = DEFAULT_CLIP_LOW) -> Image:
    """Image-level wrapper of :func:`clip_normalize_values`."""
    return Image(grid=img.grid,
                 values=clip_normalize_values(img.values, high_frac, low_frac),
                 nonneg=True)


def composite(bands, spec: CompositeSpec) -> np.ndarray:
    """Blend band images additively into an (nx, ny, 3) RGB array.

    Accepts a :class:`~fbtomo.solver.BandImageSet` or any sequence of
    images/arrays; band count must match the color count.  Each band is
    clip-normalized, scaled by its color, summed, and clamped to [0, 1].
    A single white band reduces to a replicated grayscale rendering.
    """
    if hasattr(bands, "components"):
        bands = bands.components
    arrays = [np.asarray(b.values if isinstance(b, Image) else b, dtype=float)
              for b in bands]
    if len(arrays) != len(spec.colors):
        raise ShapeError(
            f"{len(arrays)} bands for {len(spec.colors)} colors")
    shape = arrays[0].shape
    if any(a.shape != shape for a in arrays):
        raise ShapeError("band shapes differ")
    out = np.zeros(shape + (3,))
    for values, rgb in zip(arrays, spec.colors):
        norm = clip_normalize_values(values, spec.clip_high, spec.clip_low)
        out += norm[..., None] * np.asarray(rgb)
    return np.clip(out, 0.0, 1.0)


def grayscale_rgb(img: Image, clip_high: float = DEFAULT_CLIP_HIGH,
                  clip_low: float = DEFAULT_CLIP_LOW) -> np.ndarray:
    """Render a single image as clip-normalized RGB (white palette)."""
    spec = CompositeSpec(colors=((1.0, 1.0, 1.0),), clip_high=clip_high,
                         clip_low=clip_low)
    return composite([img], spec)


def save_png(rgb_or_gray: np.ndarray, path):
    """Write an 8-bit PNG; +x maps to image columns, +y points up."""
    arr = np.asarray(rgb_or_gray, dtype=float)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise ShapeError("expected (nx, ny) or (nx, ny, 3) data")
    # (nx, ny) indexes (x, y); PNG rows run top-down, so transpose and
    # flip the vertical axis.
    display = np.transpose(arr, (1, 0, 2))[::-1]
    data = np.round(np.clip(display, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path)
