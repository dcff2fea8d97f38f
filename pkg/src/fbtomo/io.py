"""Binary file formats for sinograms, images, and cached models.

Every file opens with a 16-byte prelude: an 8-byte ASCII tag, a 4-byte
byte-order sentinel, and a 4-byte format version.  All integers and
floats are little-endian; a file written by a big-endian writer flips
the sentinel bytes and is rejected up front.  Sinogram and image
payloads are 32-bit floats (row-major), so a round trip is lossless for
data representable in single precision; model caches keep their 64-bit
operator weights exactly.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np
import scipy.sparse as sp

from .errors import FormatError
from .geometry import DetectorArray, ImagingGrid, Timing
from .model import ForwardModel, Image, Sinogram

SINO_TAG = b"FBTSINO\x00"
IMAGE_TAG = b"FBTIMG\x00\x00"
MODEL_TAG = b"FBTMODL\x00"
BYTE_ORDER_SENTINEL = 0x01020304
FORMAT_VERSION = 1

_PRELUDE = struct.Struct("<8sII")


def _write_prelude(fh, tag: bytes):
    fh.write(_PRELUDE.pack(tag, BYTE_ORDER_SENTINEL, FORMAT_VERSION))


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file while reading {what}")
    return buf


def _check_prelude(fh, tag: bytes, path):
    raw = _read_exact(fh, _PRELUDE.size, "file prelude")
    got_tag, sentinel, version = _PRELUDE.unpack(raw)
    if got_tag != tag:
        raise FormatError(f"{path}: bad magic {got_tag!r}, expected {tag!r}")
    if sentinel != BYTE_ORDER_SENTINEL:
        raise FormatError(
            f"{path}: byte-order sentinel mismatch (file is not little-endian)")
    if version != FORMAT_VERSION:
        raise FormatError(
            f"{path}: unsupported format version {version}")


_SINO_HEADER = struct.Struct("<qqddd")


def write_sinogram(path, sino: Sinogram):
    with open(path, "wb") as fh:
        _write_prelude(fh, SINO_TAG)
        fh.write(_SINO_HEADER.pack(sino.n_detectors, sino.n_samples,
                                   sino.timing.sample_rate, sino.timing.t0,
                                   sino.timing.speed_of_sound))
        fh.write(np.ascontiguousarray(sino.data, dtype="<f4").tobytes())


def read_sinogram(path) -> Sinogram:
    with open(path, "rb") as fh:
        _check_prelude(fh, SINO_TAG, path)
        n_det, n_samples, rate, t0, c = _SINO_HEADER.unpack(
            _read_exact(fh, _SINO_HEADER.size, "sinogram header"))
        raw = _read_exact(fh, 4 * n_det * n_samples, "sinogram data")
    data = np.frombuffer(raw, dtype="<f4").astype(float)
    timing = Timing(n_samples=n_samples, sample_rate=rate, t0=t0,
                    speed_of_sound=c)
    return Sinogram(data=data.reshape(n_det, n_samples), timing=timing)


_IMAGE_HEADER = struct.Struct("<qqdddI")


def write_image(path, img: Image):
    with open(path, "wb") as fh:
        _write_prelude(fh, IMAGE_TAG)
        fh.write(_IMAGE_HEADER.pack(img.grid.nx, img.grid.ny,
                                    img.grid.pixel_size, img.grid.origin[0],
                                    img.grid.origin[1], int(img.nonneg)))
        fh.write(np.ascontiguousarray(img.values, dtype="<f4").tobytes())


def read_image(path) -> Image:
    with open(path, "rb") as fh:
        _check_prelude(fh, IMAGE_TAG, path)
        nx, ny, pixel, ox, oy, flags = _IMAGE_HEADER.unpack(
            _read_exact(fh, _IMAGE_HEADER.size, "image header"))
        raw = _read_exact(fh, 4 * nx * ny, "image data")
    grid = ImagingGrid(nx=nx, ny=ny, pixel_size=pixel, origin=(ox, oy))
    values = np.frombuffer(raw, dtype="<f4").astype(float).reshape(nx, ny)
    return Image(grid=grid, values=values, nonneg=bool(flags & 1))


def geometry_hash(grid: ImagingGrid, array: DetectorArray,
                  timing: Timing) -> str:
    """SHA-256 over the exact geometry bytes; the model cache key."""
    h = hashlib.sha256()
    h.update(struct.pack("<qqddd", grid.nx, grid.ny, grid.pixel_size,
                         *grid.origin))
    h.update(struct.pack("<ddddd", array.radius, array.coverage_deg,
                         *array.center, float(array.n_elements)))
    h.update(np.ascontiguousarray(array.positions, dtype="<f8").tobytes())
    h.update(struct.pack("<qddd", timing.n_samples, timing.sample_rate,
                         timing.t0, timing.speed_of_sound))
    return h.hexdigest()


_MODEL_HEADER = struct.Struct("<32sqqq")
_MODEL_GEOM = struct.Struct("<qqdddqddddqddd")


def write_model(path, model: ForwardModel):
    """Cache the sparse operator with its geometry and key hash."""
    grid, array, timing = model.grid, model.array, model.timing
    mat = model.matrix.tocsr()
    with open(path, "wb") as fh:
        _write_prelude(fh, MODEL_TAG)
        fh.write(_MODEL_HEADER.pack(
            bytes.fromhex(geometry_hash(grid, array, timing)),
            mat.shape[0], mat.shape[1], mat.nnz))
        fh.write(_MODEL_GEOM.pack(
            grid.nx, grid.ny, grid.pixel_size, grid.origin[0], grid.origin[1],
            array.n_elements, array.radius, array.coverage_deg,
            array.center[0], array.center[1],
            timing.n_samples, timing.sample_rate, timing.t0,
            timing.speed_of_sound))
        fh.write(np.ascontiguousarray(array.positions, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(mat.indptr, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(mat.indices, dtype="<i4").tobytes())
        fh.write(np.ascontiguousarray(mat.data, dtype="<f8").tobytes())


def read_model(path) -> ForwardModel:
    with open(path, "rb") as fh:
        _check_prelude(fh, MODEL_TAG, path)
        key, n_rows, n_cols, nnz = _MODEL_HEADER.unpack(
            _read_exact(fh, _MODEL_HEADER.size, "model header"))
        (nx, ny, pixel, ox, oy, n_el, radius, coverage, cx, cy,
         n_samples, rate, t0, c) = _MODEL_GEOM.unpack(
            _read_exact(fh, _MODEL_GEOM.size, "model geometry"))
        positions = np.frombuffer(
            _read_exact(fh, 16 * n_el, "detector positions"),
            dtype="<f8").reshape(n_el, 2)
        indptr = np.frombuffer(
            _read_exact(fh, 8 * (n_rows + 1), "indptr"), dtype="<i8")
        indices = np.frombuffer(
            _read_exact(fh, 4 * nnz, "indices"), dtype="<i4")
        data = np.frombuffer(_read_exact(fh, 8 * nnz, "data"), dtype="<f8")
    grid = ImagingGrid(nx=nx, ny=ny, pixel_size=pixel, origin=(ox, oy))
    array = DetectorArray(positions=positions.copy(), radius=radius,
                          coverage_deg=coverage, center=(cx, cy))
    timing = Timing(n_samples=n_samples, sample_rate=rate, t0=t0,
                    speed_of_sound=c)
    if key.hex() != geometry_hash(grid, array, timing):
        raise FormatError(f"{path}: geometry hash mismatch; stale cache")
    matrix = sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()),
                           shape=(n_rows, n_cols))
    return ForwardModel(grid, array, timing, matrix)
