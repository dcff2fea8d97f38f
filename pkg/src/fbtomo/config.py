"""Pipeline configuration: JSON schema, validation, defaults.

Configs are JSON objects with the blocks below.  Unknown keys anywhere
are errors -- a typo in a scientific parameter must not silently fall
back to a default.  ``resolved()`` returns the fully materialized
config (every default filled in) for the run manifest.

Schema (defaults in parentheses):

    seed                 int (7)
    geometry.grid        nx (128), ny (128), pixel_size (1.5e-4), origin ([0,0])
    geometry.array       n_elements (256), radius (0.04), coverage_deg (270),
                         center ([0,0])
    geometry.timing      sample_rate (4e7), n_samples (null = auto),
                         t0 (null = auto), speed_of_sound (1500)
    geometry.model_cache path or null: reuse/save the sparse operator
    source.phantom       "vessel" | "multiscale" | "spheres" | "empty" ("vessel")
    source.generator     "discs" | "spheres" ("discs"): closed-form source
                         type used to synthesize the data
    source.spheres       [[cx, cy, radius, amplitude], ...] (for "spheres")
    source.sinogram_file path or null: load data instead of simulating
    source.noise_snr_db  float or null (null)
    source.eir           null or {center_freq, fractional_bandwidth}
    source.sphere_spacing_factor  float (0.7)
    filters.edges        band edges in Hz ([0, 1.23e6, 15e6])
    filters.order        int (3)
    filters.prefilter    {enabled (true), f_low (1e5), f_high (1.33e7)}
    solver.lambda        float or null (null = scaled from operator norm)
    solver.eta           float (1.0)
    solver.mu            list or null (null = uniform)
    solver.max_iters     int (60)
    solver.rel_tol       float (1e-6)
    solver.methods       subset of mb | fbmb<n> | butterworth<n> | swt<n>
    metrics              subset of residual, ssim, entropy, piqe, spectra
    output.directory     path (required by the CLI)
    output.save_png      bool (true)
    output.composite     {colors (null = default palette),
                          clip_high (0.005), clip_low (0.0002)}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParameterError
from .filters import DEFAULT_ORDER, PREFILTER_BAND, TWO_BAND_EDGES
from .rendering import DEFAULT_CLIP_HIGH, DEFAULT_CLIP_LOW

PHANTOMS = ("vessel", "multiscale", "spheres", "empty")
GENERATORS = ("discs", "spheres")
METRIC_NAMES = ("residual", "ssim", "entropy", "piqe", "spectra")
_METHOD_RE = re.compile(r"^(mb|fbmb(\d+)|butterworth(\d+)|swt(\d+))$")


def _require_keys(block: dict, allowed, where: str):
    unknown = set(block) - set(allowed)
    if unknown:
        raise ParameterError(
            f"unknown config key(s) {sorted(unknown)} in '{where}'; "
            f"allowed: {sorted(allowed)}")


def _get(block: dict, key: str, default, where: str, kind=None):
    value = block.get(key, default)
    if value is not None and kind is not None and not isinstance(value, kind):
        raise ParameterError(
            f"'{where}.{key}' has wrong type {type(value).__name__}")
    return value


def _pair(value, where):
    if (not isinstance(value, (list, tuple)) or len(value) != 2
            or not all(isinstance(v, (int, float)) for v in value)):
        raise ParameterError(f"'{where}' must be a [x, y] pair")
    return (float(value[0]), float(value[1]))


@dataclass
class PipelineConfig:
    """Validated, fully defaulted pipeline settings."""

    seed: int
    grid: dict
    array: dict
    timing: dict
    model_cache: str | None
    phantom: str
    generator: str
    spheres: list
    sinogram_file: str | None
    noise_snr_db: float | None
    eir: dict | None
    sphere_spacing_factor: float
    edges: list
    order: int
    prefilter: dict
    lam: float | None
    eta: float
    mu: list | None
    max_iters: int
    rel_tol: float
    methods: list
    metrics: list
    output_directory: str | None
    save_png: bool
    composite_colors: list | None
    clip_high: float
    clip_low: float

    @property
    def n_bands(self) -> int:
        return len(self.edges) - 1

    def resolved(self) -> dict:
        """Complete config dict with every default materialized."""
        return {
            "seed": self.seed,
            "geometry": {"grid": dict(self.grid), "array": dict(self.array),
                         "timing": dict(self.timing),
                         "model_cache": self.model_cache},
            "source": {"phantom": self.phantom, "generator": self.generator,
                       "spheres": list(self.spheres),
                       "sinogram_file": self.sinogram_file,
                       "noise_snr_db": self.noise_snr_db,
                       "eir": self.eir,
                       "sphere_spacing_factor": self.sphere_spacing_factor},
            "filters": {"edges": list(self.edges), "order": self.order,
                        "prefilter": dict(self.prefilter)},
            "solver": {"lambda": self.lam, "eta": self.eta,
                       "mu": None if self.mu is None else list(self.mu),
                       "max_iters": self.max_iters, "rel_tol": self.rel_tol,
                       "methods": list(self.methods)},
            "metrics": list(self.metrics),
            "output": {"directory": self.output_directory,
                       "save_png": self.save_png,
                       "composite": {"colors": self.composite_colors,
                                     "clip_high": self.clip_high,
                                     "clip_low": self.clip_low}},
        }


def parse_method(name: str):
    """Split a method name into (kind, n_bands); 'mb' has one band."""
    match = _METHOD_RE.match(name)
    if not match:
        raise ParameterError(
            f"unknown method {name!r}; expected mb, fbmb<n>, "
            "butterworth<n>, or swt<n>")
    if name == "mb":
        return "mb", 1
    kind = re.match(r"[a-z]+", name).group(0)
    return kind, int(name[len(kind):])


def validate_config(raw: dict) -> PipelineConfig:
    if not isinstance(raw, dict):
        raise ParameterError("config root must be a JSON object")
    _require_keys(raw, ("seed", "geometry", "source", "filters", "solver",
                        "metrics", "output"), "config")

    seed = _get(raw, "seed", 7, "config", int)

    geometry = _get(raw, "geometry", {}, "config", dict) or {}
    _require_keys(geometry, ("grid", "array", "timing", "model_cache"),
                  "geometry")
    grid_block = _get(geometry, "grid", {}, "geometry", dict) or {}
    _require_keys(grid_block, ("nx", "ny", "pixel_size", "origin"),
                  "geometry.grid")
    grid = {
        "nx": _get(grid_block, "nx", 128, "geometry.grid", int),
        "ny": _get(grid_block, "ny", 128, "geometry.grid", int),
        "pixel_size": float(_get(grid_block, "pixel_size", 1.5e-4,
                                 "geometry.grid", (int, float))),
        "origin": _pair(grid_block.get("origin", [0.0, 0.0]),
                        "geometry.grid.origin"),
    }
    array_block = _get(geometry, "array", {}, "geometry", dict) or {}
    _require_keys(array_block, ("n_elements", "radius", "coverage_deg",
                                "center"), "geometry.array")
    array = {
        "n_elements": _get(array_block, "n_elements", 256, "geometry.array",
                           int),
        "radius": float(_get(array_block, "radius", 0.04, "geometry.array",
                             (int, float))),
        "coverage_deg": float(_get(array_block, "coverage_deg", 270.0,
                                   "geometry.array", (int, float))),
        "center": _pair(array_block.get("center", [0.0, 0.0]),
                        "geometry.array.center"),
    }
    timing_block = _get(geometry, "timing", {}, "geometry", dict) or {}
    _require_keys(timing_block, ("n_samples", "sample_rate", "t0",
                                 "speed_of_sound"), "geometry.timing")
    timing = {
        "n_samples": _get(timing_block, "n_samples", None, "geometry.timing",
                          int),
        "sample_rate": float(_get(timing_block, "sample_rate", 40e6,
                                  "geometry.timing", (int, float))),
        "t0": timing_block.get("t0", None),
        "speed_of_sound": float(_get(timing_block, "speed_of_sound", 1500.0,
                                     "geometry.timing", (int, float))),
    }
    if timing["t0"] is not None:
        timing["t0"] = float(timing["t0"])
    model_cache = _get(geometry, "model_cache", None, "geometry", str)

    source = _get(raw, "source", {}, "config", dict) or {}
    _require_keys(source, ("phantom", "generator", "spheres",
                           "sinogram_file", "noise_snr_db", "eir",
                           "sphere_spacing_factor"), "source")
    phantom = _get(source, "phantom", "vessel", "source", str)
    if phantom not in PHANTOMS:
        raise ParameterError(
            f"source.phantom must be one of {PHANTOMS}, got {phantom!r}")
    generator = _get(source, "generator", "discs", "source", str)
    if generator not in GENERATORS:
        raise ParameterError(
            f"source.generator must be one of {GENERATORS}, got {generator!r}")
    spheres = _get(source, "spheres", [], "source", list)
    for s in spheres:
        if not isinstance(s, (list, tuple)) or len(s) != 4:
            raise ParameterError(
                "source.spheres entries must be [cx, cy, radius, amplitude]")
    if phantom == "spheres" and not spheres:
        raise ParameterError("source.phantom 'spheres' needs source.spheres")
    sinogram_file = _get(source, "sinogram_file", None, "source", str)
    noise = _get(source, "noise_snr_db", None, "source", (int, float))
    eir = _get(source, "eir", None, "source", dict)
    if eir is not None:
        _require_keys(eir, ("center_freq", "fractional_bandwidth"),
                      "source.eir")
        eir = {"center_freq": float(eir["center_freq"]),
               "fractional_bandwidth": float(eir["fractional_bandwidth"])}
    spacing = float(_get(source, "sphere_spacing_factor", 0.7, "source",
                         (int, float)))

    filters_block = _get(raw, "filters", {}, "config", dict) or {}
    _require_keys(filters_block, ("edges", "order", "prefilter"), "filters")
    edges = _get(filters_block, "edges", list(TWO_BAND_EDGES), "filters", list)
    edges = [float(e) for e in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ParameterError("filters.edges must be strictly increasing")
    order = _get(filters_block, "order", DEFAULT_ORDER, "filters", int)
    pre_block = _get(filters_block, "prefilter", {}, "filters", dict) or {}
    _require_keys(pre_block, ("enabled", "f_low", "f_high"),
                  "filters.prefilter")
    prefilter = {
        "enabled": bool(_get(pre_block, "enabled", True, "filters.prefilter",
                             bool)),
        "f_low": float(_get(pre_block, "f_low", PREFILTER_BAND[0],
                            "filters.prefilter", (int, float))),
        "f_high": float(_get(pre_block, "f_high", PREFILTER_BAND[1],
                             "filters.prefilter", (int, float))),
    }

    solver_block = _get(raw, "solver", {}, "config", dict) or {}
    _require_keys(solver_block, ("lambda", "eta", "mu", "max_iters",
                                 "rel_tol", "methods"), "solver")
    lam = _get(solver_block, "lambda", None, "solver", (int, float))
    lam = None if lam is None else float(lam)
    eta = float(_get(solver_block, "eta", 1.0, "solver", (int, float)))
    mu = _get(solver_block, "mu", None, "solver", list)
    if mu is not None:
        mu = [float(m) for m in mu]
    max_iters = _get(solver_block, "max_iters", 60, "solver", int)
    rel_tol = float(_get(solver_block, "rel_tol", 1e-6, "solver",
                         (int, float)))
    methods = _get(solver_block, "methods", ["mb", "fbmb2", "butterworth2",
                                             "swt2"], "solver", list)
    n_bands = len(edges) - 1
    for name in methods:
        kind, n = parse_method(name)
        if kind != "mb" and n != n_bands:
            raise ParameterError(
                f"method {name!r} wants {n} bands but filters.edges "
                f"defines {n_bands}")
    if len(set(methods)) != len(methods):
        raise ParameterError("solver.methods has duplicates")

    metrics = _get(raw, "metrics", list(METRIC_NAMES), "config", list)
    for name in metrics:
        if name not in METRIC_NAMES:
            raise ParameterError(
                f"unknown metric {name!r}; allowed: {METRIC_NAMES}")
    needs_reference = {"residual", "ssim"} & set(metrics)
    if needs_reference and methods and "mb" not in methods:
        raise ParameterError(
            f"metrics {sorted(needs_reference)} need the 'mb' reference "
            "method in solver.methods")

    output = _get(raw, "output", {}, "config", dict) or {}
    _require_keys(output, ("directory", "save_png", "composite"), "output")
    directory = _get(output, "directory", None, "output", str)
    save_png = bool(_get(output, "save_png", True, "output", bool))
    comp = _get(output, "composite", {}, "output", dict) or {}
    _require_keys(comp, ("colors", "clip_high", "clip_low"),
                  "output.composite")
    colors = _get(comp, "colors", None, "output.composite", list)
    if colors is not None:
        colors = [[float(c) for c in rgb] for rgb in colors]
        if len(colors) != n_bands:
            raise ParameterError(
                f"output.composite.colors has {len(colors)} entries for "
                f"{n_bands} bands")
    clip_high = float(_get(comp, "clip_high", DEFAULT_CLIP_HIGH,
                           "output.composite", (int, float)))
    clip_low = float(_get(comp, "clip_low", DEFAULT_CLIP_LOW,
                          "output.composite", (int, float)))

    return PipelineConfig(
        seed=seed, grid=grid, array=array, timing=timing,
        model_cache=model_cache, phantom=phantom, generator=generator,
        spheres=spheres,
        sinogram_file=sinogram_file, noise_snr_db=noise, eir=eir,
        sphere_spacing_factor=spacing, edges=edges, order=order,
        prefilter=prefilter, lam=lam, eta=eta, mu=mu, max_iters=max_iters,
        rel_tol=rel_tol, methods=list(methods), metrics=list(metrics),
        output_directory=directory, save_png=save_png,
        composite_colors=colors, clip_high=clip_high, clip_low=clip_low)


def load_config(path) -> PipelineConfig:
    """Read and validate a JSON config file."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{path}: invalid JSON ({exc})") from exc
    return validate_config(raw)


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key.path=json_value`` strings onto a raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ParameterError(f"override {item!r} is not key.path=value")
        key_path, _, value = item.partition("=")
        try:
            parsed = json.loads(value)
        except json.JSONDecodeError:
            parsed = value  # bare strings allowed
        node = raw
        parts = key_path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ParameterError(
                    f"cannot override through non-object key {part!r}")
        node[parts[-1]] = parsed
    return raw
