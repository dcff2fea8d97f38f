"""Zero-phase band filter bank and the stationary wavelet baseline.

Band filters act as real, non-negative gains on the discrete Fourier
grid of the trace, which makes every filter exactly self-adjoint -- a
property the joint reconstruction solver relies on.  The gain applied is
the squared magnitude of an analog Butterworth prototype of the given
order (the response a forward-backward causal filter pair would have),
so a pass through the filter never amplifies and adjacent bands built on
a shared edge cross there.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .model import Sinogram

#: Default Butterworth order; gentle rolloff avoids ringing artifacts.
DEFAULT_ORDER = 3

#: Two-band soft-prior edges [Hz].
TWO_BAND_EDGES = (0.0, 1.23e6, 15e6)

#: Three-band soft-prior edges [Hz].
THREE_BAND_EDGES = (0.0, 0.5e6, 1.23e6, 13.3e6)

#: Acquisition pre-filter pass band [Hz], applied before every method.
PREFILTER_BAND = (0.1e6, 13.3e6)


def butterworth_band_gain(freqs: np.ndarray, f_low: float, f_high: float,
                          order: int) -> np.ndarray:
    """Squared-magnitude Butterworth band-pass gain at the given frequencies.

    ``f_low == 0`` degenerates to a pure low-pass.  The gain is
    ``1/(1+(f/f_high)^(2N))`` times ``1/(1+(f_low/f)^(2N))`` and lies in
    [0, 1] everywhere.
    """
    f = np.asarray(freqs, dtype=float)
    gain = 1.0 / (1.0 + (f / f_high) ** (2 * order))
    if f_low > 0:
        with np.errstate(divide="ignore"):
            ratio = np.where(f > 0, f_low / np.where(f > 0, f, 1.0), np.inf)
        gain = gain / (1.0 + ratio ** (2 * order))
    return gain


@dataclass(frozen=True)
class BandFilter:
    """One zero-phase band gain sampled on the rfft grid of a trace."""

    response: np.ndarray  # (n_samples//2 + 1,) real gain in [0, 1]
    f_low: float
    f_high: float
    order: int
    n_samples: int
    sample_rate: float

    def __post_init__(self):
        r = np.asarray(self.response, dtype=float)
        if r.shape != (self.n_samples // 2 + 1,):
            raise ShapeError("response length does not match n_samples")
        if r.min() < 0 or r.max() > 1 + 1e-12:
            raise ParameterError("band gain must lie in [0, 1]")
        object.__setattr__(self, "response", r)

    def frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.n_samples, 1.0 / self.sample_rate)

    @property
    def relative_bandwidth(self) -> float:
        """(f_high - f_low) / band center; stored as metadata only."""
        center = 0.5 * (self.f_high + self.f_low)
        return (self.f_high - self.f_low) / center if center > 0 else float("inf")


@dataclass(frozen=True)
class FilterBank:
    """Ordered band filters sharing edges, used as soft priors or baselines."""

    filters: tuple[BandFilter, ...]
    edges: tuple[float, ...]
    order: int

    @property
    def n_bands(self) -> int:
        return len(self.filters)

    def responses(self) -> np.ndarray:
        """All gains stacked, shape (n_bands, n_freqs)."""
        return np.stack([f.response for f in self.filters])

    def to_csv(self, path):
        """Write (frequency, per-band gain) rows for plotting."""
        freqs = self.filters[0].frequencies()
        header = "frequency_hz," + ",".join(
            f"band{j + 1}" for j in range(self.n_bands))
        table = np.column_stack([freqs] + [f.response for f in self.filters])
        np.savetxt(path, table, delimiter=",", header=header, comments="")


def design_band_bank(edges, order: int, n_samples: int,
                     sample_rate: float) -> FilterBank:
    """Butterworth bank on consecutive edge pairs.

    Edges must be strictly increasing; the first may be zero (band 1 is
    then a low-pass).  An upper edge beyond Nyquist is clipped with a
    warning.
    """
    edges = [float(e) for e in edges]
    if len(edges) < 2:
        raise ParameterError("need at least two edges for one band")
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ParameterError(f"edges must be strictly increasing, got {edges}")
    if edges[0] < 0:
        raise ParameterError("edges must be non-negative")
    if int(order) < 1:
        raise ParameterError(f"order must be >= 1, got {order}")
    order = int(order)
    nyquist = sample_rate / 2.0
    if edges[-1] > nyquist:
        warnings.warn(
            f"top edge {edges[-1]:.3g} Hz exceeds Nyquist {nyquist:.3g} Hz; "
            "clipping", stacklevel=2)
        edges[-1] = nyquist
        if edges[-2] >= edges[-1]:
            raise ParameterError("edges collapse after Nyquist clipping")
    freqs = np.fft.rfftfreq(int(n_samples), 1.0 / sample_rate)
    filters = []
    for f_low, f_high in zip(edges[:-1], edges[1:]):
        gain = butterworth_band_gain(freqs, f_low, f_high, order)
        filters.append(BandFilter(response=gain, f_low=f_low, f_high=f_high,
                                  order=order, n_samples=int(n_samples),
                                  sample_rate=float(sample_rate)))
    return FilterBank(filters=tuple(filters), edges=tuple(edges), order=order)


def apply_gain(response: np.ndarray, traces: np.ndarray) -> np.ndarray:
    """Multiply trace spectra by a real gain; works on (..., n_samples)."""
    n = traces.shape[-1]
    return np.fft.irfft(np.fft.rfft(traces, axis=-1) * response, n, axis=-1)


def apply_band(filt: BandFilter, sino: Sinogram) -> Sinogram:
    """Filter every detector trace; linear and exactly self-adjoint."""
    if sino.n_samples != filt.n_samples:
        raise ShapeError(
            f"filter designed for {filt.n_samples} samples, sinogram has "
            f"{sino.n_samples}")
    if abs(sino.timing.sample_rate - filt.sample_rate) > 1e-6 * filt.sample_rate:
        raise ParameterError("filter and sinogram sample rates disagree")
    return Sinogram(data=apply_gain(filt.response, sino.data), timing=sino.timing)


def preprocess_signal(sino: Sinogram, band=PREFILTER_BAND,
                      order: int = DEFAULT_ORDER) -> Sinogram:
    """Standard acquisition band-pass applied before every reconstruction.

    Rejects DC and out-of-band noise; used identically for all methods so
    comparisons stay fair.
    """
    bank = design_band_bank(band, order, sino.n_samples,
                            sino.timing.sample_rate)
    return apply_band(bank.filters[0], sino)


# ---------------------------------------------------------------------------
# Stationary (undecimated) wavelet transform with the db2 wavelet.
#
# Implemented through exact circular convolution on the Fourier grid: the
# level-l filters are the base pair upsampled by 2^(l-1), and since the
# analysis pair is orthonormal (|H|^2 + |G|^2 == 2 at every frequency),
# synthesis with the conjugate responses and a factor 1/2 reconstructs
# perfectly at machine precision for any trace length.

_SQRT3 = np.sqrt(3.0)
#: db2 orthonormal scaling filter (sums to sqrt(2)).
DB2_LO = np.array([(1 + _SQRT3), (3 + _SQRT3), (3 - _SQRT3), (1 - _SQRT3)]) \
    / (4.0 * np.sqrt(2.0))
#: Quadrature mirror high-pass: g[k] = (-1)^k h[N-1-k].
DB2_HI = np.array([DB2_LO[3], -DB2_LO[2], DB2_LO[1], -DB2_LO[0]])


def _level_responses(length: int, level: int):
    """Analysis filter DFT responses at the given level on the rfft grid."""
    m = np.arange(length // 2 + 1)
    k = np.arange(DB2_LO.size)
    phase = np.exp(-2j * np.pi * np.outer(m, (2 ** (level - 1)) * k) / length)
    return phase @ DB2_LO, phase @ DB2_HI


def swt_decompose(trace: np.ndarray, levels: int) -> list[np.ndarray]:
    """Undecimated db2 decomposition of the last axis.

    Returns ``levels + 1`` arrays ordered coarse to fine: the level-L
    approximation first, then details from level L down to level 1.  A
    length not divisible by ``2**levels`` is padded symmetrically at the
    end (boundaries are periodic either way); pass the original length to
    :func:`swt_reconstruct` to trim.
    """
    trace = np.asarray(trace, dtype=float)
    if levels < 1:
        raise ParameterError(f"levels must be >= 1, got {levels}")
    if trace.shape[-1] < 2 ** levels:
        raise ParameterError(
            f"trace of length {trace.shape[-1]} is too short for "
            f"{levels} levels")
    block = 2 ** levels
    if trace.shape[-1] % block:
        pad = block - trace.shape[-1] % block
        widths = [(0, 0)] * (trace.ndim - 1) + [(0, pad)]
        trace = np.pad(trace, widths, mode="symmetric")
    n = trace.shape[-1]
    approx_hat = np.fft.rfft(trace, axis=-1)
    details = []
    for level in range(1, levels + 1):
        lo, hi = _level_responses(n, level)
        details.append(np.fft.irfft(approx_hat * hi, n, axis=-1))
        approx_hat = approx_hat * lo
    bands = [np.fft.irfft(approx_hat, n, axis=-1)]
    bands.extend(reversed(details))
    return bands


def swt_reconstruct(bands: list[np.ndarray], length: int | None = None) -> np.ndarray:
    """Invert :func:`swt_decompose`; trims to ``length`` when given."""
    if len(bands) < 2:
        raise ParameterError("need an approximation plus at least one detail")
    levels = len(bands) - 1
    n = np.asarray(bands[0]).shape[-1]
    approx_hat = np.fft.rfft(np.asarray(bands[0], dtype=float), axis=-1)
    for level in range(levels, 0, -1):
        lo, hi = _level_responses(n, level)
        detail_hat = np.fft.rfft(np.asarray(bands[levels - level + 1],
                                            dtype=float), axis=-1)
        approx_hat = 0.5 * (np.conj(lo) * approx_hat + np.conj(hi) * detail_hat)
    out = np.fft.irfft(approx_hat, n, axis=-1)
    return out[..., :length] if length is not None else out


def swt_level_plan(edges, sample_rate: float):
    """Depth and coefficient grouping aligning dyadic sub-bands to edges.

    The decomposition depth is chosen so the approximation band
    ``[0, fs / 2^(L+1)]`` matches the first interior edge best on a log
    scale; each sub-band then joins the bank band containing its center
    frequency (the approximation always joins band 1).  Returns
    ``(levels, groups)`` with groups indexing the decompose output.
    """
    edges = [float(e) for e in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ParameterError("edges must be strictly increasing")
    split = edges[1]
    if not 0 < split < sample_rate / 2:
        raise ParameterError("first interior edge must be inside (0, Nyquist)")
    levels = max(1, round(np.log2(sample_rate / (2.0 * split))))
    n_bands = len(edges) - 1
    groups = [[] for _ in range(n_bands)]
    groups[0].append(0)  # approximation
    for level in range(levels, 0, -1):
        lo_f = sample_rate / 2 ** (level + 1)
        hi_f = sample_rate / 2 ** level
        center = 0.5 * (lo_f + hi_f)
        band = n_bands - 1
        for j in range(n_bands):
            if center < edges[j + 1]:
                band = j
                break
        groups[band].append(levels - level + 1)
    for j, grp in enumerate(groups):
        if not grp:
            warnings.warn(f"band {j + 1} receives no wavelet sub-band",
                          stacklevel=2)
    return levels, groups


def swt_band_traces(traces: np.ndarray, edges, sample_rate: float) -> list[np.ndarray]:
    """Split traces into bank-aligned wavelet bands that sum to the input.

    Each output is the synthesis of one coefficient group with all other
    coefficients zeroed; the groups partition the coefficients, so the
    outputs add back to the original traces exactly.
    """
    traces = np.asarray(traces, dtype=float)
    length = traces.shape[-1]
    levels, groups = swt_level_plan(edges, sample_rate)
    bands = swt_decompose(traces, levels)
    out = []
    for grp in groups:
        selected = [b if k in grp else np.zeros_like(b)
                    for k, b in enumerate(bands)]
        out.append(swt_reconstruct(selected, length))
    return out


def swt_band_sinograms(sino: Sinogram, edges) -> list[Sinogram]:
    """Bank-aligned wavelet splitting of a sinogram (per-detector traces)."""
    parts = swt_band_traces(sino.data, edges, sino.timing.sample_rate)
    return [Sinogram(data=p, timing=sino.timing) for p in parts]
