"""Frequency-band model-based optoacoustic tomographic reconstruction.

A discretized acoustic forward operator maps absorption images on a 2D
grid to ring-array pressure signals; reconstructions are non-negative
least squares, either as a single broadband image or jointly as one
component per frequency band under soft spectral priors.  Rigid
Butterworth and stationary-wavelet filtering baselines, image quality
metrics, spectral unmixing, and a batch CLI round out the package.
"""

__version__ = "0.1.0"

from .errors import BuildError, DomainError, FbtomoError, FormatError, \
    ParameterError, ShapeError
from .geometry import DetectorArray, ImagingGrid, Timing, auto_timing, \
    make_grid, make_ring_array
from .model import ForwardModel, Image, Sinogram, apply, apply_adjoint, \
    build_model, convolve_eir, make_gaussian_eir
from .sources import SpherePhantom, VesselPhantomSpec, VesselSegment, \
    default_vessel_phantom, disc_signal, multiscale_supplementary_phantom, \
    rasterize_sphere_projection, render_vessel_phantom, \
    simulate_disc_sinogram, simulate_sinogram, sphere_signal, \
    vessel_phantom_spheres
from .filters import BandFilter, FilterBank, apply_band, design_band_bank, \
    preprocess_signal, swt_band_sinograms, swt_decompose, swt_reconstruct
from .solver import BandImageSet, ReconConfig, SolveDiagnostics, \
    objective_terms, solve_fbmb, solve_mb, solve_rigid_filter_baseline
from .metrics import MetricsReport, band_power_spectrum, entropy, \
    normalized_residual, piqe, residual_norm, ssim
from .unmixing import MultispectralStack, SpectraTable, linear_unmix
from .rendering import CompositeSpec, clip_normalize, composite, save_png
from .io import read_image, read_model, read_sinogram, write_image, \
    write_model, write_sinogram
from .config import PipelineConfig, load_config, validate_config
from .pipeline import run
