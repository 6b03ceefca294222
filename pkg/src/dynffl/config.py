"""Experiment configuration documents (JSON).

Schema (all keys optional unless noted)::

    {
      "scanner":  {... see physics.scanner_from_dict ...},      # required
      "phantom":  {"kind": "disk", "center_m": [0, 0],
                   "radius_fov_fraction": 0.25 | "radius_m": ..., "value": 1.0},
      "motion":   {"kind": "paper", "preservation": "mass",
                   "deformation_frequency_Hz": 78e3, "translation_shift_m": 2e-3},
      "grids":    {"simulation": 101, "reconstruction": 64},
      "method":   "M2",
      "solve":    {"alpha1": 2e5, "alpha2": 1e-3, "alpha3": 0,
                   "max_iterations": 2000, "tolerance": 1e-6},
      "sweep":    {"alpha1": "paper" | [..], "alpha2": "paper" | [..]},
      "noise":    {"std_V": 0 | "std_relative": 0.1, "seed": 0},
      "output":   "out"
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .motion import MotionModel, motion_from_dict
from .phantom import ConcentrationImage, ImageGrid, make_disk_phantom
from .physics import ScannerConfig, scanner_from_dict, scanner_to_dict
from .recon import METHODS, SolveConfig, alpha1_grid, alpha2_grid

DEFAULT_RADIUS_FRACTION = 0.25


@dataclass(frozen=True)
class PhantomSpec:
    center: tuple = (0.0, 0.0)
    radius_fraction: float | None = DEFAULT_RADIUS_FRACTION
    radius: float | None = None
    value: float = 1.0

    def radius_m(self, half_width: float) -> float:
        return self.radius if self.radius is not None else self.radius_fraction * half_width

    def build(self, grid: ImageGrid) -> ConcentrationImage:
        return make_disk_phantom(grid, self.center, self.radius_m(grid.half_width), self.value)

    def to_dict(self) -> dict:
        d = {"kind": "disk", "center_m": list(self.center), "value": self.value}
        if self.radius is not None:
            d["radius_m"] = self.radius
        else:
            d["radius_fov_fraction"] = self.radius_fraction
        return d


@dataclass(frozen=True)
class NoiseSpec:
    std: float = 0.0  # volts
    relative: float | None = None  # fraction of u*
    seed: int = 0

    def absolute_std(self, u_star: float) -> float:
        return self.relative * u_star if self.relative is not None else self.std

    def to_dict(self) -> dict:
        d = {"seed": self.seed}
        if self.relative is not None:
            d["std_relative"] = self.relative
        else:
            d["std_V"] = self.std
        return d


@dataclass(frozen=True)
class ExperimentConfig:
    scanner: ScannerConfig
    motion_doc: dict
    phantom: PhantomSpec = PhantomSpec()
    n_sim: int = 101
    n_rec: int = 64
    method: str = "M2"
    solve: SolveConfig = field(default_factory=lambda: SolveConfig(2e5, 1e-3))
    sweep_alpha1: tuple = tuple(alpha1_grid())
    sweep_alpha2: tuple = tuple(alpha2_grid())
    noise: NoiseSpec = NoiseSpec()
    output: str = "out"

    @property
    def motion(self) -> MotionModel:
        return motion_from_dict(self.motion_doc, self.scanner)

    def sim_grid(self) -> ImageGrid:
        return ImageGrid(self.scanner.fov_half_width, self.n_sim)

    def rec_grid(self) -> ImageGrid:
        return ImageGrid(self.scanner.fov_half_width, self.n_rec)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, noise=replace(self.noise, seed=int(seed)),
                       solve=replace(self.solve, seed=int(seed)))

    def to_dict(self) -> dict:
        s = self.solve
        return {
            "scanner": scanner_to_dict(self.scanner),
            "phantom": self.phantom.to_dict(),
            "motion": self.motion.to_dict(),
            "grids": {"simulation": self.n_sim, "reconstruction": self.n_rec},
            "method": self.method,
            "solve": {"alpha1": s.alpha1, "alpha2": s.alpha2, "alpha3": s.alpha3,
                      "max_iterations": s.max_iterations, "tolerance": s.tolerance,
                      "power_iterations": s.power_iterations, "step_safety": s.step_safety,
                      "seed": s.seed},
            "sweep": {"alpha1": list(self.sweep_alpha1), "alpha2": list(self.sweep_alpha2)},
            "noise": self.noise.to_dict(),
            "output": self.output,
        }


def _num(d, key, path, problems, default=None, integer=False):
    if key not in d:
        if default is None:
            problems.append((path, "missing"))
        return default
    v = d[key]
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        problems.append((path, f"expected {'an integer' if integer else 'a number'}, got {v!r}"))
        return default
    return v


def _grid_values(spec, path, default, problems):
    if spec is None or spec == "paper":
        return tuple(float(x) for x in default)
    if (not isinstance(spec, list) or not spec
            or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in spec)):
        problems.append((path, "expected \"paper\" or a non-empty list of numbers"))
        return tuple(float(x) for x in default)
    return tuple(float(x) for x in spec)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Validate a configuration document; all problems are reported together."""
    if not isinstance(doc, dict):
        raise ConfigError([("", "configuration must be a JSON object")])
    problems: list = []
    known = {"scanner", "phantom", "motion", "grids", "method", "solve", "sweep", "noise", "output"}
    for key in sorted(set(doc) - known):
        problems.append((key, "unknown key"))

    scanner = None
    if "scanner" not in doc or not isinstance(doc["scanner"], dict):
        problems.append(("scanner", "missing or not an object"))
    else:
        try:
            scanner = scanner_from_dict(doc["scanner"])
        except ConfigError as exc:
            problems.extend(exc.problems)

    pd = doc.get("phantom", {})
    phantom = PhantomSpec()
    if pd.get("kind", "disk") != "disk":
        problems.append(("phantom.kind", "only 'disk' phantoms are supported"))
    center = pd.get("center_m", [0.0, 0.0])
    if not (isinstance(center, list) and len(center) == 2):
        problems.append(("phantom.center_m", "expected a 2-vector"))
        center = [0.0, 0.0]
    value = _num(pd, "value", "phantom.value", problems, 1.0)
    if value is not None and value < 0:
        problems.append(("phantom.value", "must be >= 0"))
    if "radius_m" in pd:
        radius = _num(pd, "radius_m", "phantom.radius_m", problems)
        phantom = PhantomSpec(tuple(center), None, radius, value)
    else:
        frac = _num(pd, "radius_fov_fraction", "phantom.radius_fov_fraction", problems,
                    DEFAULT_RADIUS_FRACTION)
        phantom = PhantomSpec(tuple(center), frac, None, value)

    md = doc.get("motion", {"kind": "identity"})
    if not isinstance(md, dict):
        problems.append(("motion", "expected an object"))
        md = {"kind": "identity"}
    if scanner is not None:
        try:
            motion_from_dict(md, scanner)
        except ConfigError as exc:
            problems.extend(exc.problems)

    gd = doc.get("grids", {})
    n_sim = _num(gd, "simulation", "grids.simulation", problems, 101, integer=True)
    n_rec = _num(gd, "reconstruction", "grids.reconstruction", problems, 64, integer=True)
    if isinstance(n_sim, int) and isinstance(n_rec, int) and not n_sim >= n_rec >= 8:
        problems.append(("grids", f"need simulation >= reconstruction >= 8, got {n_sim}, {n_rec}"))

    method = doc.get("method", "M2")
    if method not in METHODS:
        problems.append(("method", f"must be one of {METHODS}, got {method!r}"))
        method = "M2"

    sd = doc.get("solve", {})
    kw = dict(alpha1=_num(sd, "alpha1", "solve.alpha1", problems, 2e5),
              alpha2=_num(sd, "alpha2", "solve.alpha2", problems, 1e-3),
              alpha3=_num(sd, "alpha3", "solve.alpha3", problems, 0.0),
              max_iterations=_num(sd, "max_iterations", "solve.max_iterations", problems, 2000,
                                  integer=True),
              tolerance=_num(sd, "tolerance", "solve.tolerance", problems, 1e-6),
              power_iterations=_num(sd, "power_iterations", "solve.power_iterations", problems,
                                    100, integer=True),
              step_safety=_num(sd, "step_safety", "solve.step_safety", problems, 0.99),
              seed=_num(sd, "seed", "solve.seed", problems, 0, integer=True))
    solve = None
    try:
        solve = SolveConfig(method=method, **kw)
    except ConfigError as exc:
        problems.extend(exc.problems)

    swd = doc.get("sweep", {})
    a1 = _grid_values(swd.get("alpha1"), "sweep.alpha1", alpha1_grid(), problems)
    a2 = _grid_values(swd.get("alpha2"), "sweep.alpha2", alpha2_grid(), problems)

    nd = doc.get("noise", {})
    seed = _num(nd, "seed", "noise.seed", problems, 0, integer=True)
    if "std_relative" in nd:
        rel = _num(nd, "std_relative", "noise.std_relative", problems)
        if rel is not None and rel < 0:
            problems.append(("noise.std_relative", "must be >= 0"))
        noise = NoiseSpec(0.0, rel, seed)
    else:
        std = _num(nd, "std_V", "noise.std_V", problems, 0.0)
        if std is not None and std < 0:
            problems.append(("noise.std_V", "must be >= 0"))
        noise = NoiseSpec(std, None, seed)

    output = doc.get("output", "out")
    if not isinstance(output, str):
        problems.append(("output", "expected a path string"))

    if scanner is not None and not problems:
        try:
            phantom.build(ImageGrid(scanner.fov_half_width, n_sim))
        except DomainError as exc:
            problems.append(("phantom", str(exc)))
    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(scanner, dict(md), phantom, n_sim, n_rec, method, solve,
                            a1, a2, noise, output)


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([("", f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})")]) from None
    return config_from_dict(doc)


def scanner_fingerprint(config: ScannerConfig) -> dict:
    """Fields a recording must agree on with the system it is reconstructed with."""
    return {"drive_frequency": config.drive_frequency,
            "sampling_frequency": config.sampling_frequency,
            "angle_count": config.angle_count,
            "samples_per_translation": config.samples_per_translation,
            "fov_half_width": float(np.float64(config.fov_half_width)),
            "channel_count": config.channel_count}
