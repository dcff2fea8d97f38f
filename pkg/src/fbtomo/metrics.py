"""Quantitative evaluation of reconstructions.

Residuals measure physical accuracy (does the summed component set
explain the recorded signal), the structural similarity index measures
agreement with the reference reconstruction, and entropy / the blockwise
perceptual score quantify information content and visual quality of the
rendered composites.  All scores are computed on raw float arrays; any
histogram clipping for display happens in the rendering module and never
feeds back into metrics.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d, gaussian_filter

from .errors import ParameterError, ShapeError
from .model import ForwardModel, Image, Sinogram, apply

#: ITU-R 601 luminance weights for RGB composites.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Collapse an (..., 3) RGB array to luminance."""
    rgb = np.asarray(rgb, dtype=float)
    if rgb.shape[-1] != 3:
        raise ShapeError("expected a trailing RGB axis of size 3")
    w = np.asarray(LUMA_WEIGHTS)
    return rgb @ w


def residual_norm(model: ForwardModel, sino: Sinogram, components) -> float:
    """L2 data misfit of the summed components, ``||p - M sum(x_j)||``."""
    total = sum(np.asarray(c.values) for c in components)
    pred = apply(model, Image(grid=model.grid, values=total))
    return float(np.linalg.norm(sino.data - pred.data))


def normalized_residual(model: ForwardModel, sino: Sinogram, components,
                        reference_residual: float) -> float:
    """Data misfit divided by the standard reconstruction's misfit."""
    if not reference_residual > 0:
        raise ParameterError("reference residual must be > 0")
    return residual_norm(model, sino, components) / reference_residual


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


def _window_mean(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Separable windowed mean, valid region only."""
    half = w.size // 2
    out = correlate1d(a, w, axis=0, mode="constant")
    out = correlate1d(out, w, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(a, b, data_range: float | None = None) -> float:
    """Mean local structural similarity between two images.

    11x11 Gaussian window (sigma 1.5), stabilizers K1 = 0.01 and
    K2 = 0.03.  The dynamic range defaults to max - min of the first
    (reference) image; pass a shared range explicitly to make the score
    symmetric in its arguments.
    """
    x = np.asarray(a.values if isinstance(a, Image) else a, dtype=float)
    y = np.asarray(b.values if isinstance(b, Image) else b, dtype=float)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")
    if min(x.shape) < 11:
        raise ShapeError("images must be at least 11 pixels on each side")
    if data_range is None:
        data_range = float(x.max() - x.min())
        if data_range == 0:
            if np.array_equal(x, y):
                return 1.0
            raise ParameterError(
                "reference image has zero dynamic range; pass data_range")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    w = _gaussian_window()
    mu_x = _window_mean(x, w)
    mu_y = _window_mean(y, w)
    var_x = _window_mean(x * x, w) - mu_x ** 2
    var_y = _window_mean(y * y, w) - mu_y ** 2
    cov = _window_mean(x * y, w) - mu_x * mu_y
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / \
        ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
    return float(s.mean())


def entropy(img, bins: int = 256) -> float:
    """Shannon entropy (bits) of the min-max normalized intensity histogram.

    Invariant under affine rescaling of the intensities; a constant image
    has zero entropy.  RGB inputs are collapsed to luminance first.
    """
    values = np.asarray(img.values if isinstance(img, Image) else img,
                        dtype=float)
    if values.ndim == 3 and values.shape[-1] == 3:
        values = luminance(values)
    if not np.isfinite(values).all():
        raise ParameterError("entropy needs finite intensities")
    span = values.max() - values.min()
    if span == 0:
        return 0.0
    norm = (values - values.min()) / span
    counts, _ = np.histogram(norm, bins=bins, range=(0.0, 1.0))
    p = counts[counts > 0] / values.size
    return float(-(p * np.log2(p)).sum())


# ---------------------------------------------------------------------------
# Blockwise perceptual quality score (lower is better, range [0, 100]).
#
# The image is normalized to mean-subtracted contrast-normalized (MSCN)
# coefficients, split into 16x16 blocks, and spatially active blocks are
# scored for noticeable artifacts (flat segments along block edges) and
# for Gaussian-noise behavior (center/surround deviation).  Constants
# follow the published blockwise algorithm; absolute agreement with any
# third-party implementation is a non-goal, only internal orderings are
# asserted.

_PIQE_BLOCK = 16
_PIQE_ACTIVITY_THRESHOLD = 0.1
_PIQE_IMPAIRED_THRESHOLD = 0.1
_PIQE_WINDOW = 6


def _segment_std(edge: np.ndarray) -> np.ndarray:
    """Std (ddof=1) of every length-6 contiguous segment along an edge."""
    segs = np.lib.stride_tricks.sliding_window_view(edge, _PIQE_WINDOW)
    return segs.std(axis=1, ddof=1)


def _block_impaired(block: np.ndarray) -> bool:
    edges = (block[0, :], block[:, -1], block[-1, :], block[:, 0])
    return any((_segment_std(e) < _PIQE_IMPAIRED_THRESHOLD).any()
               for e in edges)


def _center_surround_deviation(block: np.ndarray) -> float:
    n = block.shape[1]
    c1, c2 = n // 2 - 1, n // 2
    center = np.concatenate([block[:, c1], block[:, c2]])
    surround = np.delete(block, (c1, c2), axis=1)
    s_std = surround.std(ddof=1)
    if s_std == 0:
        return 0.0
    ratio = center.std(ddof=1) / s_std
    return 0.0 if not np.isfinite(ratio) else float(ratio)


def piqe(rgb: np.ndarray) -> float:
    """No-reference blockwise perceptual quality score; lower is better.

    Expects an RGB image with both sides at least 64 pixels.  An image
    with no spatially active blocks has no defined score; the worst score
    (100) is returned with a warning.
    """
    rgb = np.asarray(rgb, dtype=float)
    if rgb.ndim != 3 or rgb.shape[-1] != 3:
        raise ShapeError("expected an (h, w, 3) RGB array")
    if min(rgb.shape[:2]) < 64:
        raise ShapeError("image sides must be at least 64 pixels")
    if not np.isfinite(rgb).all():
        raise ParameterError("image must be finite")
    gray = luminance(rgb)
    peak = gray.max()
    if peak > 0:
        gray = np.round(255.0 * gray / peak)

    sigma_g = 7.0 / 6.0
    mu = gaussian_filter(gray, sigma_g, truncate=3.0 / sigma_g, mode="nearest")
    second = gaussian_filter(gray * gray, sigma_g, truncate=3.0 / sigma_g,
                             mode="nearest")
    sigma = np.sqrt(np.abs(second - mu * mu))
    mscn = (gray - mu) / (sigma + 1.0)

    bs = _PIQE_BLOCK
    pad_r = (-mscn.shape[0]) % bs
    pad_c = (-mscn.shape[1]) % bs
    if pad_r or pad_c:
        mscn = np.pad(mscn, ((0, pad_r), (0, pad_c)), mode="symmetric")

    n_active = 0
    dist_score = 0.0
    for i in range(0, mscn.shape[0], bs):
        for j in range(0, mscn.shape[1], bs):
            block = mscn[i:i + bs, j:j + bs]
            block_var = block.var(ddof=1)
            if block_var <= _PIQE_ACTIVITY_THRESHOLD:
                continue
            n_active += 1
            impaired = _block_impaired(block)
            # Noise criterion: center/surround deviation close to the
            # block deviation marks Gaussian-like distortion.
            block_sigma = np.sqrt(block_var)
            csd = _center_surround_deviation(block)
            beta = abs(block_sigma - csd) / max(block_sigma, csd, 1e-12)
            noisy = block_sigma > 2.0 * beta
            dist_score += float(impaired) * (1.0 - block_var) + \
                float(noisy) * block_var
    if n_active == 0:
        warnings.warn("no spatially active blocks; perceptual score "
                      "undefined, returning 100", stacklevel=2)
        return 100.0
    return float((dist_score + 1.0) / (1.0 + n_active) * 100.0)


def band_power_spectrum(model: ForwardModel, component: Image):
    """Mean detector power spectrum of a component's predicted signal.

    Forward-projects the component, averages per-detector power spectra,
    and normalizes to the spectrum's own peak.  Returns
    ``(frequencies, power)``.
    """
    sino = apply(model, component)
    spectra = np.abs(np.fft.rfft(sino.data, axis=1)) ** 2
    power = spectra.mean(axis=0)
    peak = power.max()
    if peak > 0:
        power = power / peak
    freqs = np.fft.rfftfreq(model.timing.n_samples,
                            1.0 / model.timing.sample_rate)
    return freqs, power


def spectra_overlap_interval(freqs: np.ndarray, power_a: np.ndarray,
                             power_b: np.ndarray, threshold: float = 0.01):
    """Widest frequency interval where both normalized spectra exceed
    ``threshold`` of their own peaks; ``None`` when they never overlap."""
    pa = power_a / power_a.max() if power_a.max() > 0 else power_a
    pb = power_b / power_b.max() if power_b.max() > 0 else power_b
    both = (pa >= threshold) & (pb >= threshold)
    if not both.any():
        return None
    runs = []
    start = None
    for k, flag in enumerate(both):
        if flag and start is None:
            start = k
        elif not flag and start is not None:
            runs.append((start, k - 1))
            start = None
    if start is not None:
        runs.append((start, both.size - 1))
    lo, hi = max(runs, key=lambda r: r[1] - r[0])
    return float(freqs[lo]), float(freqs[hi])


@dataclass
class MetricsReport:
    """Per-method scores; the reference method's residual is 1 by definition."""

    reference_method: str
    normalized_residuals: dict[str, float] = field(default_factory=dict)
    ssim_scores: dict[str, float] = field(default_factory=dict)
    entropy_scores: dict[str, float] = field(default_factory=dict)
    piqe_scores: dict[str, float] = field(default_factory=dict)
    band_spectra: dict[str, tuple[np.ndarray, list[np.ndarray]]] = \
        field(default_factory=dict)

    def methods(self):
        keys = set(self.normalized_residuals) | set(self.ssim_scores) | \
            set(self.entropy_scores) | set(self.piqe_scores)
        return sorted(keys)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "normalized_residual", "ssim",
                             "entropy_bits", "piqe"])
            for name in self.methods():
                writer.writerow([
                    name,
                    _fmt(self.normalized_residuals.get(name)),
                    _fmt(self.ssim_scores.get(name)),
                    _fmt(self.entropy_scores.get(name)),
                    _fmt(self.piqe_scores.get(name)),
                ])

    def to_text(self) -> str:
        lines = [f"reference method: {self.reference_method}",
                 f"{'method':<14}{'resid':>8}{'ssim':>8}{'entropy':>9}{'piqe':>8}"]
        for name in self.methods():
            lines.append(
                f"{name:<14}"
                f"{_fmt(self.normalized_residuals.get(name)):>8}"
                f"{_fmt(self.ssim_scores.get(name)):>8}"
                f"{_fmt(self.entropy_scores.get(name)):>9}"
                f"{_fmt(self.piqe_scores.get(name)):>8}")
        return "\n".join(lines)

    def write_spectra_csv(self, path, method: str):
        freqs, powers = self.band_spectra[method]
        header = "frequency_hz," + ",".join(
            f"band{j + 1}" for j in range(len(powers)))
        table = np.column_stack([freqs] + list(powers))
        np.savetxt(path, table, delimiter=",", header=header, comments="")


def _fmt(value) -> str:
    return "" if value is None else f"{value:.4f}"
