"""Imaging grid, ring transducer array, and acquisition timing.

Conventions (fixed so that tests are deterministic):

* Angles are measured counterclockwise from the +x axis, in degrees.
* A partial-coverage ring array is centered on the -y axis, i.e. the arc
  bisector points toward -y and the gap faces +y.  Any global rotation of
  the array is physically equivalent; this one is the documented choice.
* Pixel (i, j) of a grid is centered at
  ``origin + ((i - (nx-1)/2) * pixel_size, (j - (ny-1)/2) * pixel_size)``,
  which makes the index <-> position mapping bijective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

#: Default speed of sound in water-like media [m/s]; overridable per dataset.
DEFAULT_SPEED_OF_SOUND = 1500.0

#: Default acquisition sampling rate [Hz].
DEFAULT_SAMPLE_RATE = 40e6

#: Default number of samples per trace.
DEFAULT_N_SAMPLES = 2048


@dataclass(frozen=True)
class ImagingGrid:
    """Regular 2D pixel lattice on which images are discretized.

    Parameters
    ----------
    nx, ny : int
        Pixel counts along x and y, both >= 2.
    pixel_size : float
        Pixel pitch in meters (square pixels).
    origin : (float, float)
        Lab-frame position of the grid center in meters.
    """

    nx: int
    ny: int
    pixel_size: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ParameterError(
                f"grid needs nx >= 2 and ny >= 2, got {self.nx} x {self.ny}")
        if not self.pixel_size > 0:
            raise ParameterError(f"pixel_size must be > 0, got {self.pixel_size}")
        object.__setattr__(
            self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def n_pixels(self) -> int:
        return self.nx * self.ny

    @property
    def extent(self) -> tuple[float, float]:
        """Physical field of view (x, y) in meters, counting full pixels."""
        return (self.nx * self.pixel_size, self.ny * self.pixel_size)

    def x_coords(self) -> np.ndarray:
        """Pixel-center x positions, shape (nx,)."""
        return self.origin[0] + (np.arange(self.nx) - (self.nx - 1) / 2.0) * self.pixel_size

    def y_coords(self) -> np.ndarray:
        """Pixel-center y positions, shape (ny,)."""
        return self.origin[1] + (np.arange(self.ny) - (self.ny - 1) / 2.0) * self.pixel_size

    def pixel_positions(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid of pixel-center positions, two (nx, ny) arrays."""
        return np.meshgrid(self.x_coords(), self.y_coords(), indexing="ij")

    def index_to_position(self, i, j):
        """Lab-frame center of pixel (i, j); accepts scalars or arrays."""
        i = np.asarray(i)
        j = np.asarray(j)
        x = self.origin[0] + (i - (self.nx - 1) / 2.0) * self.pixel_size
        y = self.origin[1] + (j - (self.ny - 1) / 2.0) * self.pixel_size
        return x, y

    def position_to_index(self, x, y):
        """Inverse of :meth:`index_to_position` for on-lattice points.

        Returns the nearest pixel index; exact round trip for pixel centers.
        """
        i = np.rint((np.asarray(x) - self.origin[0]) / self.pixel_size
                    + (self.nx - 1) / 2.0).astype(int)
        j = np.rint((np.asarray(y) - self.origin[1]) / self.pixel_size
                    + (self.ny - 1) / 2.0).astype(int)
        return i, j

    def bounding_radius(self) -> float:
        """Circumradius of the pixel-center lattice about the grid origin."""
        return math.hypot((self.nx - 1) / 2.0, (self.ny - 1) / 2.0) * self.pixel_size


@dataclass(frozen=True)
class DetectorArray:
    """Point detectors on a circular arc.

    Invariants checked at construction: every position lies on the circle
    of the stated radius about the center (1e-12 relative), and positions
    are uniformly spaced in angle over the coverage arc.
    """

    positions: np.ndarray  # (n, 2) lab-frame positions in meters
    radius: float
    coverage_deg: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] < 1:
            raise ParameterError("positions must be an (n, 2) array")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(
            self, "center", (float(self.center[0]), float(self.center[1])))
        if not self.radius > 0:
            raise ParameterError(f"radius must be > 0, got {self.radius}")
        if not 0 < self.coverage_deg <= 360:
            raise ParameterError(
                f"coverage must be in (0, 360] degrees, got {self.coverage_deg}")
        rel = np.abs(np.hypot(pos[:, 0] - self.center[0],
                              pos[:, 1] - self.center[1]) - self.radius) / self.radius
        if rel.max() > 1e-12:
            raise ParameterError(
                f"positions deviate from the circle by up to {rel.max():.3e} relative")
        if pos.shape[0] > 2:
            ang = np.unwrap(np.arctan2(pos[:, 1] - self.center[1],
                                       pos[:, 0] - self.center[0]))
            steps = np.diff(ang)
            if np.abs(steps - steps[0]).max() > 1e-9:
                raise ParameterError("positions are not uniformly spaced in angle")

    @property
    def n_elements(self) -> int:
        return self.positions.shape[0]

    def angles_deg(self) -> np.ndarray:
        """Element angles in degrees, counterclockwise from +x."""
        p = self.positions
        return np.degrees(np.arctan2(p[:, 1] - self.center[1],
                                     p[:, 0] - self.center[0]))


@dataclass(frozen=True)
class Timing:
    """Acquisition time axis relative to the excitation pulse.

    The window must cover all grid-to-detector travel times; that check
    needs the geometry and therefore happens at model build.
    """

    n_samples: int
    sample_rate: float
    t0: float
    speed_of_sound: float = DEFAULT_SPEED_OF_SOUND

    def __post_init__(self):
        if self.n_samples < 2:
            raise ParameterError(f"n_samples must be >= 2, got {self.n_samples}")
        if not self.sample_rate > 0:
            raise ParameterError("sample_rate must be > 0")
        if not self.speed_of_sound > 0:
            raise ParameterError("speed_of_sound must be > 0")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def t_end(self) -> float:
        """Time of the last sample."""
        return self.t0 + (self.n_samples - 1) / self.sample_rate

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.sample_rate


def make_grid(nx: int, ny: int, pixel_size: float,
              origin: tuple[float, float] = (0.0, 0.0)) -> ImagingGrid:
    """Build an imaging grid; see :class:`ImagingGrid` for the pixel mapping."""
    return ImagingGrid(nx=int(nx), ny=int(ny), pixel_size=float(pixel_size),
                       origin=origin)


def make_ring_array(n_elements: int, radius: float, coverage_deg: float,
                    center: tuple[float, float] = (0.0, 0.0)) -> DetectorArray:
    """Place ``n_elements`` detectors uniformly on a circular arc.

    The arc is centered symmetrically about its bisector, which points
    toward -y (so a 270-degree array has its gap facing +y).  For partial
    coverage the endpoints of the arc are occupied (spacing
    ``coverage/(n-1)``); for a full 360-degree ring the spacing is
    ``360/n`` so the gap between the last and first element equals the
    uniform spacing.
    """
    n = int(n_elements)
    if n < 1:
        raise ParameterError(f"n_elements must be >= 1, got {n_elements}")
    if not radius > 0:
        raise ParameterError(f"radius must be > 0, got {radius}")
    if not 0 < coverage_deg <= 360:
        raise ParameterError(
            f"coverage must be in (0, 360] degrees, got {coverage_deg}")
    bisector = -90.0
    if n == 1:
        offsets = np.zeros(1)
    elif coverage_deg == 360:
        offsets = (np.arange(n) - (n - 1) / 2.0) * (360.0 / n)
    else:
        offsets = (np.arange(n) - (n - 1) / 2.0) * (coverage_deg / (n - 1))
    theta = np.radians(bisector + offsets)
    positions = np.column_stack([center[0] + radius * np.cos(theta),
                                 center[1] + radius * np.sin(theta)])
    return DetectorArray(positions=positions, radius=float(radius),
                         coverage_deg=float(coverage_deg), center=center)


def grid_detector_distances(grid: ImagingGrid, array: DetectorArray):
    """Per-detector (min, max) distance to the pixel-center lattice.

    The minimum is the distance to the lattice bounding rectangle (zero if
    the detector sits inside it); the maximum is attained at a corner.
    """
    x0, x1 = grid.x_coords()[0], grid.x_coords()[-1]
    y0, y1 = grid.y_coords()[0], grid.y_coords()[-1]
    px, py = array.positions[:, 0], array.positions[:, 1]
    dx = np.maximum(np.maximum(x0 - px, px - x1), 0.0)
    dy = np.maximum(np.maximum(y0 - py, py - y1), 0.0)
    dmin = np.hypot(dx, dy)
    corners = np.array([[x0, y0], [x0, y1], [x1, y0], [x1, y1]])
    dmax = np.max(np.hypot(px[:, None] - corners[None, :, 0],
                           py[:, None] - corners[None, :, 1]), axis=1)
    return dmin, dmax


def auto_timing(grid: ImagingGrid, array: DetectorArray,
                sample_rate: float = DEFAULT_SAMPLE_RATE,
                speed_of_sound: float = DEFAULT_SPEED_OF_SOUND,
                n_samples: int | None = None,
                margin: int = 4) -> Timing:
    """Timing whose window covers every grid-to-detector travel time.

    ``t0`` is set ``margin`` samples before the earliest arrival.  When
    ``n_samples`` is not given it is the smallest multiple of 32 that
    covers the latest arrival plus the margin (a multiple of 32 keeps
    traces divisible for dyadic wavelet decompositions).
    """
    dmin, dmax = grid_detector_distances(grid, array)
    c = float(speed_of_sound)
    t0 = dmin.min() / c - margin / sample_rate
    if n_samples is None:
        span = (dmax.max() / c - t0) * sample_rate + margin
        n_samples = int(math.ceil(span / 32.0)) * 32
    return Timing(n_samples=int(n_samples), sample_rate=float(sample_rate),
                  t0=float(t0), speed_of_sound=c)
