"""Discretized acoustic forward operator for 2D ring-array tomography.

The pressure recorded by a point detector from an in-plane source
distribution is the time derivative of an arc integral: at time ``t`` the
elementary waves arriving at detector ``d`` originate on the circle of
radius ``c*t`` around it, and the ``1/distance`` spherical decay cancels
against the arc length element, leaving a plain d-theta measure.  The
operator is assembled row by row as a central time difference of that arc
integral:

    row(d, k) . x  =  (Q(d, t_{k+1}) - Q(d, t_{k-1})) * sample_rate / 2

where ``Q(d, t)`` sums bilinear interpolation weights of arc sample
points over the grid.  Constant physical prefactors (Grueneisen, 4*pi,
c^2) are absorbed into the arbitrary amplitude units, so reconstructions
are relative, not calibrated.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import BuildError, ParameterError, ShapeError
from .geometry import DetectorArray, ImagingGrid, Timing, grid_detector_distances

log = logging.getLogger(__name__)

#: Minimum number of arc sample points per pixel width of arc length.
#: Densifying beyond 3 changed small-grid outputs by < 0.1% in pre-tests.
ARC_POINTS_PER_PIXEL = 3.0


@dataclass(frozen=True)
class Sinogram:
    """Detector x time-sample pressure data in arbitrary units."""

    data: np.ndarray  # (n_detectors, n_samples) float64
    timing: Timing

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise ShapeError(f"sinogram data must be 2D, got shape {data.shape}")
        if data.shape[1] != self.timing.n_samples:
            raise ShapeError(
                f"sinogram has {data.shape[1]} samples but timing declares "
                f"{self.timing.n_samples}")
        object.__setattr__(self, "data", data)

    @property
    def n_detectors(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Image:
    """Absorption image on a grid, in arbitrary units.

    ``nonneg`` marks results guaranteed elementwise non-negative
    (constrained reconstructions); unconstrained intermediates such as
    backprojections carry ``nonneg=False`` and may hold negative values.
    """

    grid: ImagingGrid
    values: np.ndarray  # (nx, ny) float64
    nonneg: bool = False

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.grid.nx, self.grid.ny):
            raise ShapeError(
                f"image shape {values.shape} does not match grid "
                f"({self.grid.nx}, {self.grid.ny})")
        if self.nonneg and values.size and values.min() < 0:
            raise ParameterError("image flagged non-negative has negative values")
        object.__setattr__(self, "values", values)


class ForwardModel:
    """Sparse linear map from grid absorption to detector time samples.

    Rows are ordered detector-major: row ``d * n_samples + k`` holds the
    weights of detector ``d`` at sample ``k``.  Columns are grid pixels
    flattened in C order, ``i * ny + j``.  Treat instances as immutable;
    they are safe for concurrent apply/adjoint.
    """

    def __init__(self, grid: ImagingGrid, array: DetectorArray, timing: Timing,
                 matrix: sp.csr_matrix):
        self.grid = grid
        self.array = array
        self.timing = timing
        self.matrix = matrix
        self._norm_estimate = None

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    @property
    def memory_bytes(self) -> int:
        m = self.matrix
        return m.data.nbytes + m.indices.nbytes + m.indptr.nbytes

    def norm_estimate(self, n_iters: int = 20) -> float:
        """Largest singular value, estimated by power iteration.

        Deterministic (fixed start vector); cached after the first call.
        """
        if self._norm_estimate is None:
            rng = np.random.default_rng(12345)
            v = rng.standard_normal(self.matrix.shape[1])
            v /= np.linalg.norm(v)
            sigma = 0.0
            for _ in range(n_iters):
                w = self.matrix @ v
                v = self.matrix.T @ w
                nv = np.linalg.norm(v)
                if nv == 0:
                    break
                sigma = np.sqrt(nv)
                v /= nv
            self._norm_estimate = float(sigma)
        return self._norm_estimate


def _arc_rows(grid: ImagingGrid, det: np.ndarray, radii: np.ndarray,
              points_per_pixel: float) -> sp.csr_matrix:
    """Arc-integral rows for one detector, one row per radius.

    Each row integrates bilinear pixel-center weights along the circle of
    that radius about the detector, restricted to the angular sector that
    can intersect the grid.  Midpoint rule in angle with spacing at most
    ``pixel_size / points_per_pixel`` along the arc.
    """
    h = grid.pixel_size
    nx, ny = grid.nx, grid.ny
    # Bounding disc of the bilinear support: lattice circumradius plus one
    # pixel so edge cells keep their partial weights.
    bound = grid.bounding_radius() + h
    cx, cy = grid.origin
    dxc, dyc = cx - det[0], cy - det[1]
    dist_c = np.hypot(dxc, dyc)

    lo = max(dist_c - bound, 0.0)
    hi = dist_c + bound
    valid = np.nonzero((radii > max(lo, h * 1e-9)) & (radii < hi))[0]
    n_rows = radii.size
    if valid.size == 0:
        return sp.csr_matrix((n_rows, nx * ny))

    rho = radii[valid]
    if dist_c <= bound:
        half = np.full(rho.shape, np.pi)
        center_angle = 0.0
    else:
        half = np.full(rho.shape, np.arcsin(min(bound / dist_c, 1.0)))
        center_angle = np.arctan2(dyc, dxc)

    counts = np.maximum(np.ceil(2.0 * half * rho / (h / points_per_pixel)), 4.0)
    counts = counts.astype(np.int64)
    starts = np.concatenate([[0], np.cumsum(counts)])
    total = int(starts[-1])

    arc_of_point = np.repeat(np.arange(rho.size), counts)
    k_in_arc = np.arange(total) - np.repeat(starts[:-1], counts)
    dtheta = 2.0 * half / counts
    theta = (center_angle - half[arc_of_point]
             + (k_in_arc + 0.5) * dtheta[arc_of_point])
    rho_pt = rho[arc_of_point]
    w_pt = dtheta[arc_of_point]  # arc element / distance == dtheta

    sx = det[0] + rho_pt * np.cos(theta)
    sy = det[1] + rho_pt * np.sin(theta)
    u = (sx - cx) / h + (nx - 1) / 2.0
    v = (sy - cy) / h + (ny - 1) / 2.0
    i0 = np.floor(u).astype(np.int64)
    j0 = np.floor(v).astype(np.int64)
    fu = u - i0
    fv = v - j0

    rows4 = []
    cols4 = []
    data4 = []
    row_of_point = valid[arc_of_point]
    for di, dj, w in ((0, 0, (1 - fu) * (1 - fv)), (1, 0, fu * (1 - fv)),
                      (0, 1, (1 - fu) * fv), (1, 1, fu * fv)):
        ii = i0 + di
        jj = j0 + dj
        ok = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny)
        rows4.append(row_of_point[ok])
        cols4.append(ii[ok] * ny + jj[ok])
        data4.append((w * w_pt)[ok])

    coo = sp.coo_matrix(
        (np.concatenate(data4), (np.concatenate(rows4), np.concatenate(cols4))),
        shape=(n_rows, nx * ny))
    return coo.tocsr()  # sums duplicate (row, col) contributions


def build_model(grid: ImagingGrid, array: DetectorArray, timing: Timing,
                points_per_pixel: float = ARC_POINTS_PER_PIXEL) -> ForwardModel:
    """Assemble the sparse forward operator for the given geometry.

    Raises :class:`BuildError` when the timing window fails to cover some
    grid-to-detector travel time, naming the offending detector and pixel.
    """
    if points_per_pixel < 1:
        raise ParameterError("points_per_pixel must be >= 1")
    c = timing.speed_of_sound
    dmin, dmax = grid_detector_distances(grid, array)
    early = np.nonzero(dmin / c < timing.t0)[0]
    late = np.nonzero(dmax / c > timing.t_end)[0]
    if early.size or late.size:
        if late.size:
            d = int(late[0])
            corner = (grid.nx - 1, grid.ny - 1)
            need = dmax[d] / c
            msg = (f"window ends at {timing.t_end:.3e} s but detector {d} "
                   f"needs {need:.3e} s to reach pixel {corner}")
        else:
            d = int(early[0])
            need = dmin[d] / c
            msg = (f"window starts at {timing.t0:.3e} s but detector {d} "
                   f"already receives pixel (0, 0) at {need:.3e} s")
        raise BuildError("timing window too short: " + msg)

    n_samples = timing.n_samples
    fs = timing.sample_rate
    # Arc radii on the extended time axis t_{-1} .. t_{n}; row k of the
    # operator combines extended rows k and k+2.
    radii = c * (timing.t0 + (np.arange(n_samples + 2) - 1) / fs)
    diff = sp.csr_matrix(
        (np.concatenate([np.full(n_samples, -fs / 2.0),
                         np.full(n_samples, fs / 2.0)]),
         (np.concatenate([np.arange(n_samples)] * 2),
          np.concatenate([np.arange(n_samples), np.arange(n_samples) + 2]))),
        shape=(n_samples, n_samples + 2))

    blocks = []
    for d in range(array.n_elements):
        q = _arc_rows(grid, array.positions[d], radii, points_per_pixel)
        blocks.append(diff @ q)
    matrix = sp.vstack(blocks, format="csr")
    matrix.sort_indices()

    model = ForwardModel(grid, array, timing, matrix)
    log.info("forward model: %d x %d, %.2fM nonzeros, %.1f MB",
             matrix.shape[0], matrix.shape[1], matrix.nnz / 1e6,
             model.memory_bytes / 2**20)
    return model


def _check_grid(model: ForwardModel, image: Image):
    if image.grid != model.grid:
        raise ShapeError("image grid does not match the model grid")


def apply(model: ForwardModel, image: Image) -> Sinogram:
    """Forward-project an image to a sinogram (sparse matrix-vector product)."""
    _check_grid(model, image)
    y = model.matrix @ image.values.ravel()
    return Sinogram(data=y.reshape(model.array.n_elements, model.timing.n_samples),
                    timing=model.timing)


def apply_adjoint(model: ForwardModel, sino: Sinogram) -> Image:
    """Exact transpose of :func:`apply`; an unconstrained backprojection."""
    if sino.data.shape != (model.array.n_elements, model.timing.n_samples):
        raise ShapeError(
            f"sinogram shape {sino.data.shape} does not match the model "
            f"({model.array.n_elements}, {model.timing.n_samples})")
    x = model.matrix.T @ sino.data.ravel()
    return Image(grid=model.grid, values=x.reshape(model.grid.nx, model.grid.ny),
                 nonneg=False)


def convolve_eir(sino: Sinogram, eir: np.ndarray) -> Sinogram:
    """Convolve each trace with an electrical impulse response.

    Linear convolution truncated to the trace length; the identity for a
    unit-impulse ``eir``.  Optional stage for data generation only -- the
    reconstruction model never includes it implicitly.
    """
    eir = np.asarray(eir, dtype=float).ravel()
    if eir.size == 0:
        raise ParameterError("eir must not be empty")
    if eir.size > sino.n_samples:
        raise ParameterError(
            f"eir length {eir.size} exceeds trace length {sino.n_samples}")
    out = np.empty_like(sino.data)
    for d in range(sino.n_detectors):
        out[d] = np.convolve(sino.data[d], eir)[:sino.n_samples]
    return Sinogram(data=out, timing=sino.timing)


def make_gaussian_eir(center_freq: float, fractional_bandwidth: float,
                      sample_rate: float) -> np.ndarray:
    """Gaussian-modulated cosine pulse as a synthetic impulse response.

    ``fractional_bandwidth`` is the -6 dB (amplitude 0.5) full spectral
    width divided by the center frequency, e.g. 1.5 for a 150% transducer.
    """
    if center_freq <= 0 or fractional_bandwidth <= 0:
        raise ParameterError("center_freq and fractional_bandwidth must be > 0")
    sigma_f = fractional_bandwidth * center_freq / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    tau = 1.0 / (2.0 * np.pi * sigma_f)
    half = max(int(np.ceil(4.0 * tau * sample_rate)), 1)
    t = np.arange(-half, half + 1) / sample_rate
    return np.exp(-0.5 * (t / tau) ** 2) * np.cos(2.0 * np.pi * center_freq * t)
