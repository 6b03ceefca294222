"""Tracer magnetization and scanner excitation.

Field quantities are carried in H-field units (A/m, A/m^2) throughout; the
``*_T_mu0`` style values found in scanner tables are converted once when a
configuration is loaded.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import bernoulli

from .errors import ConfigError, DomainError

MU0 = 4e-7 * math.pi  # T m / A
K_BOLTZMANN = 1.380650424e-23  # J / K

# Below this |lambda| the derivative of the Langevin function switches to its
# three-term Taylor polynomial.
SERIES_SWITCH = 1e-4
# Below this |lambda| coth(x) - 1/x cancels badly; use the Laurent series of
# coth instead (converges for |x| < pi, 13 terms reach double precision at 0.5).
_LAURENT_SWITCH = 0.5
_B = bernoulli(26)
_COTH_COEFFS = np.array(
    [2.0 ** (2 * k) * _B[2 * k] / math.factorial(2 * k) for k in range(1, 14)]
)


def _check_finite(x):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("Langevin argument must be finite")
    return arr


def _scalar_or_array(out, like):
    return float(out) if np.ndim(like) == 0 else out


def langevin(lam):
    """Langevin function ``coth(lam) - 1/lam`` with ``L(0) = 0``.

    Accepts scalars or arrays.
    """
    x = _check_finite(lam)
    ax = np.abs(x)
    out = np.empty_like(ax)
    small = ax < _LAURENT_SWITCH
    xs = x[small]
    x2 = xs * xs
    acc = np.zeros_like(xs)
    for c in _COTH_COEFFS[::-1]:
        acc = acc * x2 + c
    out[small] = acc * xs
    xb = x[~small]
    with np.errstate(over="ignore"):
        out[~small] = 1.0 / np.tanh(xb) - 1.0 / xb
    return _scalar_or_array(out.reshape(np.shape(x)), lam)


def langevin_prime(lam):
    """Derivative of the Langevin function, ``1/lam^2 - csch^2(lam)``.

    Uses ``1/3 - lam^2/15 + 2 lam^4/189`` for ``|lam| < SERIES_SWITCH``.
    In the cancellation-prone band up to 0.5 the closed form is evaluated via
    the differentiated Laurent series, which is the same function computed
    without loss of significance.
    """
    x = _check_finite(lam)
    ax = np.abs(x)
    out = np.empty_like(ax)

    tiny = ax < SERIES_SWITCH
    t2 = ax[tiny] ** 2
    out[tiny] = 1.0 / 3.0 - t2 / 15.0 + 2.0 * t2 * t2 / 189.0

    mid = (~tiny) & (ax < _LAURENT_SWITCH)
    m2 = ax[mid] ** 2
    acc = np.zeros_like(m2)
    for k in range(len(_COTH_COEFFS), 0, -1):
        acc = acc * m2 + (2 * k - 1) * _COTH_COEFFS[k - 1]
    out[mid] = acc

    big = ax >= _LAURENT_SWITCH
    xb = ax[big]
    e = np.exp(-xb)
    csch = 2.0 * e / (1.0 - e * e)
    out[big] = 1.0 / (xb * xb) - csch * csch
    return _scalar_or_array(out.reshape(np.shape(x)), lam)


@dataclass(frozen=True)
class ParticleModel:
    """Single-domain tracer particle.

    ``concentration_scale`` converts a (normalized) image value into an areal
    particle density [1/m^2]; the 2D signal integral needs one.
    """

    core_diameter: float = 30e-9  # m
    saturation_magnetization: float = 0.6 / MU0  # A/m
    temperature: float = 293.0  # K
    concentration_scale: float = 1e19  # 1/m^2 per unit image value
    magnetic_moment: float = field(init=False)
    langevin_scale: float = field(init=False)

    def __post_init__(self):
        problems = []
        for name in ("core_diameter", "saturation_magnetization", "temperature",
                     "concentration_scale"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                problems.append((f"particle.{name}", f"must be > 0, got {v!r}"))
        if problems:
            raise ConfigError(problems)
        m = self.saturation_magnetization * math.pi / 6.0 * self.core_diameter ** 3
        object.__setattr__(self, "magnetic_moment", m)
        object.__setattr__(self, "langevin_scale",
                           MU0 * m / (K_BOLTZMANN * self.temperature))


def moment_modulus(H, particle: ParticleModel):
    """Mean magnetic moment modulus ``m * L(xi * H)`` [A m^2]."""
    return particle.magnetic_moment * langevin(particle.langevin_scale * np.asarray(H, float))


def moment_modulus_prime(H, particle: ParticleModel):
    """Derivative of :func:`moment_modulus` with respect to the field."""
    xi = particle.langevin_scale
    return particle.magnetic_moment * xi * langevin_prime(xi * np.asarray(H, float))


@dataclass(frozen=True)
class ScannerConfig:
    """Field-free-line scanner parameters in H-field units."""

    gradient_strength: float = 4.0 / MU0  # A/m^2
    drive_amplitude: float = 0.015 / MU0  # A/m
    coil_sensitivities: tuple = ((0.015 / 293.29, 0.0), (0.0, 0.015 / 379.71))
    drive_frequency: float = 25e3  # Hz
    sampling_frequency: float = 8e6  # Hz
    angle_count: int = 25
    particle: ParticleModel = field(default_factory=ParticleModel)

    def __post_init__(self):
        object.__setattr__(
            self, "coil_sensitivities",
            tuple(tuple(float(c) for c in p) for p in self.coil_sensitivities))
        problems = []
        for name in ("gradient_strength", "drive_amplitude", "drive_frequency",
                     "sampling_frequency"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                problems.append((name, f"must be > 0, got {v!r}"))
        if int(self.angle_count) != self.angle_count or self.angle_count < 1:
            problems.append(("angle_count", "must be an integer >= 1"))
        if len(self.coil_sensitivities) < 1:
            problems.append(("coil_sensitivities", "need at least one receive coil"))
        for i, p in enumerate(self.coil_sensitivities):
            if len(p) != 2:
                problems.append((f"coil_sensitivities[{i}]", "must be a 2-vector"))
        if not problems:
            ratio = self.sampling_frequency / (2.0 * self.drive_frequency)
            if ratio < 1 or abs(ratio - round(ratio)) > 1e-9 * ratio:
                problems.append(("sampling_frequency",
                                 "f_s / (2 f_d) must be a positive integer"))
        if problems:
            raise ConfigError(problems)

    @property
    def fov_half_width(self) -> float:
        return self.drive_amplitude / self.gradient_strength

    @property
    def samples_per_translation(self) -> int:
        return int(round(self.sampling_frequency / (2.0 * self.drive_frequency)))

    @property
    def translation_time(self) -> float:
        return 1.0 / (2.0 * self.drive_frequency)

    @property
    def channel_count(self) -> int:
        return len(self.coil_sensitivities)

    def angles(self) -> np.ndarray:
        """FFL angles ``(j - 1) pi / p`` for j = 1..p."""
        p = self.angle_count
        return np.arange(p) * math.pi / p

    def times(self) -> np.ndarray:
        return np.arange(self.samples_per_translation + 1) / self.sampling_frequency

    def displacements(self) -> np.ndarray:
        """Reduced-sinogram displacements ``(1 - 2n/N) A/G``."""
        N = self.samples_per_translation
        return (1.0 - 2.0 * np.arange(N + 1) / N) * self.fov_half_width


def _check_index(config: ScannerConfig, j):
    if int(j) != j or not 1 <= j <= config.angle_count:
        raise IndexError(f"angle index {j} outside 1..{config.angle_count}")


def _parity_sign(j) -> float:
    return 1.0 if int(j) % 2 == 1 else -1.0


def excitation(config: ScannerConfig, j: int, t):
    """Normalized drive waveform: +cos for odd angle index, -cos for even."""
    _check_index(config, j)
    return _parity_sign(j) * np.cos(2.0 * math.pi * config.drive_frequency * np.asarray(t, float))


def excitation_prime(config: ScannerConfig, j: int, t):
    _check_index(config, j)
    w = 2.0 * math.pi * config.drive_frequency
    return -_parity_sign(j) * w * np.sin(w * np.asarray(t, float))


def ffl_displacement(config: ScannerConfig, j: int, t):
    """Signed FFL distance to the origin, ``(A/G) * excitation``."""
    return config.fov_half_width * excitation(config, j, t)


def unit_normal(phi):
    """``e_phi = (-sin phi, cos phi)``, orthogonal to the FFL."""
    return np.array([-math.sin(phi), math.cos(phi)])


def unit_along(phi):
    """``e_phi^perp = -(cos phi, sin phi)``."""
    return -np.array([math.cos(phi), math.sin(phi)])


def scanner_from_dict(doc: dict) -> ScannerConfig:
    """Build a :class:`ScannerConfig` from a unit-suffixed JSON document.

    Field values like ``gradient_strength_T_per_m_mu0`` are multiplied by
    ``1/mu0`` here; everything downstream works in A/m.
    """
    problems = []

    def get(d, key, path, default=None):
        if key in d:
            v = d[key]
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                problems.append((path, f"expected a number, got {v!r}"))
                return default
            return float(v)
        if default is None:
            problems.append((path, "missing"))
        return default

    s = doc
    G = get(s, "gradient_strength_T_per_m_mu0", "scanner.gradient_strength_T_per_m_mu0")
    A = get(s, "drive_amplitude_mT_mu0", "scanner.drive_amplitude_mT_mu0")
    fd = get(s, "drive_frequency_Hz", "scanner.drive_frequency_Hz")
    fs = get(s, "sampling_frequency_Hz", "scanner.sampling_frequency_Hz")
    p = s.get("angle_count")
    if not isinstance(p, int) or isinstance(p, bool):
        problems.append(("scanner.angle_count", f"expected an integer, got {p!r}"))
    coils = s.get("coil_sensitivities_per_m")
    if not isinstance(coils, list) or not coils:
        problems.append(("scanner.coil_sensitivities_per_m", "expected a non-empty list of 2-vectors"))
    pd = s.get("particle", {})
    d = get(pd, "core_diameter_m", "scanner.particle.core_diameter_m", 30e-9)
    ms = get(pd, "saturation_magnetization_T_mu0", "scanner.particle.saturation_magnetization_T_mu0", 0.6)
    temp = get(pd, "temperature_K", "scanner.particle.temperature_K", 293.0)
    scale = get(pd, "concentration_scale_per_m2", "scanner.particle.concentration_scale_per_m2",
                ParticleModel.concentration_scale)
    if problems:
        raise ConfigError(problems)
    try:
        particle = ParticleModel(core_diameter=d, saturation_magnetization=ms / MU0,
                                 temperature=temp, concentration_scale=scale)
        return ScannerConfig(
            gradient_strength=G / MU0,
            drive_amplitude=A * 1e-3 / MU0,
            coil_sensitivities=tuple(tuple(c) for c in coils),
            drive_frequency=fd,
            sampling_frequency=fs,
            angle_count=p,
            particle=particle,
        )
    except ConfigError as exc:
        raise ConfigError([(f"scanner.{path}", msg) for path, msg in exc.problems]) from None


def scanner_to_dict(config: ScannerConfig) -> dict:
    pm = config.particle
    return {
        "gradient_strength_T_per_m_mu0": config.gradient_strength * MU0,
        "drive_amplitude_mT_mu0": config.drive_amplitude * MU0 * 1e3,
        "coil_sensitivities_per_m": [list(p) for p in config.coil_sensitivities],
        "drive_frequency_Hz": config.drive_frequency,
        "sampling_frequency_Hz": config.sampling_frequency,
        "angle_count": config.angle_count,
        "particle": {
            "core_diameter_m": pm.core_diameter,
            "saturation_magnetization_T_mu0": pm.saturation_magnetization * MU0,
            "temperature_K": pm.temperature,
            "concentration_scale_per_m2": pm.concentration_scale,
        },
    }
