"""End-to-end batch driver: simulate, reconstruct, compare, report.

A run materializes a deterministic artifact tree below the output
directory: the raw and preprocessed sinograms, per-method band images
and composites, a metrics table, per-band signal spectra, solver
diagnostics, and a manifest recording every parameter (including
resolved defaults), the package version, and a SHA-256 per numeric
artifact.  Wall-clock timings go to a separate file that is excluded
from the manifest so reruns of the same config are byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import json
import shutil
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, parse_method
from .errors import FbtomoError, ParameterError
from .filters import design_band_bank, preprocess_signal
from .geometry import DetectorArray, ImagingGrid, Timing, auto_timing, make_grid, \
    make_ring_array
from .io import geometry_hash, read_model, read_sinogram, write_image, \
    write_model, write_sinogram
from .metrics import MetricsReport, band_power_spectrum, entropy, piqe, \
    residual_norm, ssim
from .model import ForwardModel, Image, Sinogram, apply, build_model, \
    convolve_eir, make_gaussian_eir
from .rendering import CompositeSpec, composite, default_palette, \
    grayscale_rgb, save_png
from .solver import BandImageSet, ReconConfig, solve_fbmb, solve_mb, \
    solve_rigid_filter_baseline
from .sources import MULTISCALE_FEATURE_DIAMETERS, SpherePhantom, add_noise, \
    default_vessel_phantom, multiscale_supplementary_phantom, \
    rasterize_sphere_projection, render_vessel_phantom, \
    simulate_disc_sinogram, simulate_sinogram, vessel_phantom_spheres

STAGE_SIMULATE = "simulate"
STAGE_RECONSTRUCT = "reconstruct"
STAGE_METRICS = "metrics"
ALL_STAGES = (STAGE_SIMULATE, STAGE_RECONSTRUCT, STAGE_METRICS)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def make_geometry(cfg: PipelineConfig):
    """Instantiate grid, array, and (auto-completed) timing."""
    grid = make_grid(**cfg.grid)
    array = make_ring_array(**cfg.array)
    t = cfg.timing
    if t["t0"] is None or t["n_samples"] is None:
        timing = auto_timing(grid, array, sample_rate=t["sample_rate"],
                             speed_of_sound=t["speed_of_sound"],
                             n_samples=t["n_samples"])
        if t["t0"] is not None:
            timing = Timing(n_samples=timing.n_samples,
                            sample_rate=timing.sample_rate, t0=t["t0"],
                            speed_of_sound=timing.speed_of_sound)
    else:
        timing = Timing(n_samples=t["n_samples"],
                        sample_rate=t["sample_rate"], t0=t["t0"],
                        speed_of_sound=t["speed_of_sound"])
    return grid, array, timing


def obtain_model(cfg: PipelineConfig, grid: ImagingGrid, array: DetectorArray,
                 timing: Timing) -> ForwardModel:
    """Build the forward operator, honoring the model cache if configured."""
    if cfg.model_cache:
        cache = Path(cfg.model_cache)
        if cache.exists():
            model = read_model(cache)
            if geometry_hash(model.grid, model.array, model.timing) == \
                    geometry_hash(grid, array, timing):
                return model
            warnings.warn("model cache geometry differs; rebuilding",
                          stacklevel=2)
        model = build_model(grid, array, timing)
        cache.parent.mkdir(parents=True, exist_ok=True)
        write_model(cache, model)
        return model
    return build_model(grid, array, timing)


def make_source(cfg: PipelineConfig, grid: ImagingGrid, array: DetectorArray,
                timing: Timing):
    """Phantom raster (may be None) plus the raw sinogram."""
    if cfg.sinogram_file:
        return None, read_sinogram(cfg.sinogram_file)
    if cfg.phantom == "vessel":
        spec = default_vessel_phantom(seed=cfg.seed)
        raster = render_vessel_phantom(spec, grid)
        spheres = vessel_phantom_spheres(spec, cfg.sphere_spacing_factor)
    elif cfg.phantom == "multiscale":
        raster = multiscale_supplementary_phantom(grid)
        spheres = multiscale_phantom_spheres()
    elif cfg.phantom == "spheres":
        spheres = SpherePhantom.from_list(cfg.spheres)
        raster = rasterize_sphere_projection(spheres, grid)
    else:  # empty
        spheres = SpherePhantom.empty()
        raster = Image(grid=grid, values=np.zeros((grid.nx, grid.ny)),
                       nonneg=True)
    if cfg.generator == "discs":
        sino = simulate_disc_sinogram(spheres, array, timing)
    else:
        sino = simulate_sinogram(spheres, array, timing)
    if cfg.eir is not None:
        eir = make_gaussian_eir(cfg.eir["center_freq"],
                                cfg.eir["fractional_bandwidth"],
                                timing.sample_rate)
        sino = convolve_eir(sino, eir)
    if cfg.noise_snr_db is not None:
        sino = add_noise(sino, cfg.noise_snr_db, seed=cfg.seed)
    return raster, sino


def multiscale_phantom_spheres(bulk_diameter: float = 16e-3,
                               bulk_amplitude: float = 0.5,
                               feature_amplitude: float = 1.0) -> SpherePhantom:
    """Sphere decomposition of the two-scale phantom.

    Features are superposed on the bulk sphere with their amplitude
    difference, matching the raster where features replace bulk.
    """
    spheres = [(0.0, 0.0, bulk_diameter / 2.0, bulk_amplitude)]
    ring = 0.55 * bulk_diameter / 2.0
    n = len(MULTISCALE_FEATURE_DIAMETERS)
    for k, diam in enumerate(MULTISCALE_FEATURE_DIAMETERS):
        ang = 2.0 * np.pi * k / n
        spheres.append((ring * np.cos(ang), ring * np.sin(ang), diam / 2.0,
                        feature_amplitude - bulk_amplitude))
    return SpherePhantom.from_list(spheres)


def _reconstruct_method(name, model, sino, bank, recon_cfg):
    kind, _ = parse_method(name)
    if kind == "mb":
        image, diag = solve_mb(model, sino, recon_cfg, with_diagnostics=True)
        return BandImageSet(components=(image,), config=recon_cfg,
                            diagnostics=(diag,))
    if kind == "fbmb":
        return solve_fbmb(model, sino, bank, recon_cfg)
    return solve_rigid_filter_baseline(
        model, sino, bank, recon_cfg,
        method="butterworth" if kind == "butterworth" else "swt")


def _write_diagnostics_csv(path: Path, result: BandImageSet):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["solve", "iteration", "objective"])
        for s, diag in enumerate(result.diagnostics):
            for k, val in enumerate(diag.objective):
                writer.writerow([s, k, f"{val:.17g}"])
        writer.writerow([])
        writer.writerow(["solve", "term", "value", "iterations", "converged",
                         "restarts"])
        for s, diag in enumerate(result.diagnostics):
            for term, val in diag.term_norms.items():
                writer.writerow([s, term, f"{val:.17g}", diag.iterations,
                                 diag.converged, diag.restarts])


def run(cfg: PipelineConfig, output_dir=None, stages=ALL_STAGES) -> Path:
    """Execute the configured pipeline; returns the artifact directory.

    The directory must not already contain files.  On failure a directory
    created by this call is removed again.
    """
    out_name = output_dir or cfg.output_directory
    if out_name is None:
        raise ParameterError("no output directory configured")
    out = Path(out_name)
    created = not out.exists()
    if out.exists() and any(out.iterdir()):
        raise ParameterError(f"output directory {out} is not empty")
    out.mkdir(parents=True, exist_ok=True)

    try:
        return _run_stages(cfg, out, stages)
    except BaseException:
        if created:
            shutil.rmtree(out, ignore_errors=True)
        raise


def _run_stages(cfg: PipelineConfig, out: Path, stages) -> Path:
    artifacts = {}
    timings = {}

    def save(name: str, writer):
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        writer(path)
        artifacts[name] = _sha256(path)

    grid, array, timing = make_geometry(cfg)
    model = obtain_model(cfg, grid, array, timing)

    raster, sino_raw = make_source(cfg, grid, array, timing)
    if raster is not None:
        save("phantom.img", lambda p: write_image(p, raster))
    save("sinogram_raw.sino", lambda p: write_sinogram(p, sino_raw))

    if cfg.prefilter["enabled"]:
        sino = preprocess_signal(
            sino_raw, band=(cfg.prefilter["f_low"], cfg.prefilter["f_high"]),
            order=cfg.order)
        save("sinogram_preprocessed.sino", lambda p: write_sinogram(p, sino))
    else:
        sino = sino_raw

    bank = design_band_bank(cfg.edges, cfg.order, timing.n_samples,
                            timing.sample_rate)
    save("bank.csv", bank.to_csv)

    lam_resolved = ReconConfig(lam=cfg.lam).resolve_lam(model)
    recon_cfg = ReconConfig(lam=lam_resolved, eta=cfg.eta,
                            mu=None if cfg.mu is None else tuple(cfg.mu),
                            max_iters=cfg.max_iters, rel_tol=cfg.rel_tol)
    mu_resolved = recon_cfg.resolve_mu(cfg.n_bands)

    results: dict[str, BandImageSet] = {}
    renders: dict[str, np.ndarray] = {}
    if STAGE_RECONSTRUCT in stages or STAGE_METRICS in stages:
        colors_multi = cfg.composite_colors or default_palette(cfg.n_bands)
        for name in cfg.methods:
            result = _reconstruct_method(name, model, sino, bank, recon_cfg)
            results[name] = result
            timings[name] = sum(d.seconds for d in result.diagnostics)
            for j, comp in enumerate(result.components):
                save(f"{name}_band{j + 1}.img",
                     lambda p, c=comp: write_image(p, c))
            if result.n_bands > 1:
                spec = CompositeSpec(colors=tuple(tuple(c) for c in
                                                  colors_multi),
                                     clip_high=cfg.clip_high,
                                     clip_low=cfg.clip_low)
                rgb = composite(result, spec)
            else:
                rgb = grayscale_rgb(result.components[0], cfg.clip_high,
                                    cfg.clip_low)
            renders[name] = rgb
            if cfg.save_png:
                save(f"{name}_composite.png", lambda p, r=rgb: save_png(r, p))
            save(f"{name}_diagnostics.csv",
                 lambda p, r=result: _write_diagnostics_csv(p, r))

    if STAGE_METRICS in stages and results:
        report = _compute_metrics(cfg, model, sino, results, renders)
        save("metrics.csv", report.to_csv)
        save("metrics.txt",
             lambda p: Path(p).write_text(report.to_text() + "\n"))
        for name in report.band_spectra:
            save(f"spectra_{name}.csv",
                 lambda p, n=name: report.write_spectra_csv(p, n))

    manifest = {
        "code_version": __version__,
        "config": cfg.resolved(),
        "resolved": {
            "timing": {"n_samples": timing.n_samples,
                       "sample_rate": timing.sample_rate, "t0": timing.t0,
                       "speed_of_sound": timing.speed_of_sound},
            "lambda": lam_resolved,
            "mu": list(mu_resolved),
            "filter_order": cfg.order,
            "rel_tol": cfg.rel_tol,
            "max_iters": cfg.max_iters,
            "eta": cfg.eta,
            "geometry_hash": geometry_hash(grid, array, timing),
        },
        "artifacts": artifacts,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    # Wall-clock timings are machine-dependent; kept out of the manifest.
    with open(out / "timings.txt", "w") as fh:
        for name, seconds in timings.items():
            fh.write(f"{name}\t{seconds:.3f} s\n")
    return out


def _compute_metrics(cfg: PipelineConfig, model, sino, results, renders):
    report = MetricsReport(reference_method="mb")
    want = set(cfg.metrics)
    reference = results.get("mb")

    if "residual" in want and reference is not None:
        ref_res = residual_norm(model, sino, reference.components)
        for name, result in results.items():
            if ref_res > 0:
                report.normalized_residuals[name] = residual_norm(
                    model, sino, result.components) / ref_res
            else:
                warnings.warn("reference residual is zero; residual table "
                              "is degenerate", stacklevel=2)
                report.normalized_residuals[name] = float("nan")

    if "ssim" in want and reference is not None:
        ref_img = reference.composite_image()
        span = float(ref_img.values.max() - ref_img.values.min())
        for name, result in results.items():
            if span == 0:
                comp = result.composite_image()
                report.ssim_scores[name] = \
                    1.0 if np.array_equal(comp.values, ref_img.values) else \
                    float("nan")
                continue
            report.ssim_scores[name] = ssim(result.composite_image(), ref_img,
                                            data_range=span)

    for name, rgb in renders.items():
        if "entropy" in want:
            report.entropy_scores[name] = entropy(rgb)
        if "piqe" in want:
            if min(rgb.shape[:2]) < 64:
                warnings.warn("image too small for the blockwise perceptual "
                              "score; skipping piqe", stacklevel=2)
                continue
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", UserWarning)
                report.piqe_scores[name] = piqe(rgb)

    if "spectra" in want:
        for name, result in results.items():
            if result.n_bands < 2:
                continue
            freqs = None
            powers = []
            for comp in result.components:
                freqs, power = band_power_spectrum(model, comp)
                powers.append(power)
            report.band_spectra[name] = (freqs, powers)
    return report


def load_report(directory) -> dict:
    """Read a run's manifest plus the metrics table, for `report`."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise ParameterError(f"{directory} holds no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    metrics_path = directory / "metrics.txt"
    text = metrics_path.read_text() if metrics_path.exists() else ""
    return {"manifest": manifest, "metrics_text": text}
