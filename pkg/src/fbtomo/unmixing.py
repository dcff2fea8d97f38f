"""Per-pixel linear spectral unmixing of multi-wavelength images.

Each pixel's values across wavelengths are decomposed onto tabulated
chromophore absorption spectra by least squares, optionally constrained
to non-negative concentrations.  Spectra are user-supplied data (CSV);
nothing is hardcoded.  The decomposition applies equally to standard
reconstructions and to individual band components, whose built-in
non-negativity keeps low-frequency negatives out of the fit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .errors import ParameterError, ShapeError
from .model import Image

#: Condition number above which the spectra matrix is treated as singular.
COND_LIMIT = 1e12


@dataclass(frozen=True)
class SpectraTable:
    """Chromophore absorption values tabulated over wavelengths."""

    wavelengths: np.ndarray  # (w,) nm
    names: tuple[str, ...]
    absorption: np.ndarray  # (w, c) arbitrary consistent units

    def __post_init__(self):
        wl = np.atleast_1d(np.asarray(self.wavelengths, dtype=float))
        ab = np.atleast_2d(np.asarray(self.absorption, dtype=float))
        if wl.size < 2:
            raise ParameterError("need at least two wavelengths")
        if ab.shape != (wl.size, len(self.names)):
            raise ShapeError(
                f"absorption shape {ab.shape} does not match "
                f"{wl.size} wavelengths x {len(self.names)} chromophores")
        if wl.size < len(self.names):
            raise ParameterError(
                "need at least as many wavelengths as chromophores")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "absorption", ab)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n_chromophores(self) -> int:
        return len(self.names)

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.absorption))

    @classmethod
    def from_csv(cls, path) -> "SpectraTable":
        """Read a table with header ``wavelength_nm,<name1>,<name2>,...``"""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not header or header[0].strip() != "wavelength_nm":
                raise ParameterError(
                    "spectra CSV must start with a 'wavelength_nm' column")
            names = tuple(h.strip() for h in header[1:])
            rows = [[float(v) for v in row] for row in reader if row]
        data = np.asarray(rows, dtype=float)
        return cls(wavelengths=data[:, 0], names=names, absorption=data[:, 1:])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["wavelength_nm", *self.names])
            for k in range(self.wavelengths.size):
                writer.writerow([self.wavelengths[k], *self.absorption[k]])


@dataclass(frozen=True)
class MultispectralStack:
    """Images of the same scene acquired at different wavelengths."""

    wavelengths: np.ndarray  # (n,) nm
    images: tuple[Image, ...]

    def __post_init__(self):
        wl = np.atleast_1d(np.asarray(self.wavelengths, dtype=float))
        if wl.size != len(self.images) or wl.size == 0:
            raise ParameterError("one image per wavelength required")
        grid = self.images[0].grid
        if any(img.grid != grid for img in self.images):
            raise ShapeError("all stack images must share one grid")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "images", tuple(self.images))

    @property
    def grid(self):
        return self.images[0].grid

    def values(self) -> np.ndarray:
        """Stacked intensities, shape (n_wavelengths, nx, ny)."""
        return np.stack([img.values for img in self.images])


def linear_unmix(stack: MultispectralStack, table: SpectraTable,
                 nonneg: bool = False) -> list[Image]:
    """Decompose per pixel onto the table's chromophores.

    Unconstrained least squares by default; with ``nonneg`` every pixel
    whose unconstrained solution goes negative is re-solved under a
    non-negativity constraint.  Returns one concentration map per
    chromophore.
    """
    rows = []
    for wl in stack.wavelengths:
        match = np.nonzero(np.isclose(table.wavelengths, wl, rtol=1e-9))[0]
        if match.size == 0:
            raise ParameterError(
                f"wavelength {wl} nm is not in the spectra table")
        rows.append(int(match[0]))
    a = table.absorption[rows]
    if len(rows) < table.n_chromophores:
        raise ParameterError("stack has fewer wavelengths than chromophores")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise ParameterError(
            f"spectra matrix is rank deficient (condition number {cond:.3e})")

    grid = stack.grid
    m = stack.values().reshape(len(rows), -1)
    s, *_ = np.linalg.lstsq(a, m, rcond=None)
    if nonneg:
        bad = np.nonzero((s < 0).any(axis=0))[0]
        for k in bad:
            s[:, k], _ = nnls(a, m[:, k])
    return [Image(grid=grid, values=s[c].reshape(grid.nx, grid.ny),
                  nonneg=nonneg)
            for c in range(table.n_chromophores)]
