"""Radon-type transforms and the dynamic MPI forward operator.

Line integrals use the substitution ``y = Gamma(s e_phi - v e_phi^perp)``, so
the delta in the dynamic Radon transform is resolved exactly and only the
``v`` integral is discretized (midpoint rule).  The voltage signal is
available two ways: direct 2D quadrature of the time-differentiated signal
equation (:func:`dynamic_forward_direct`) and the three-term convolution
decomposition applied to dynamic / weighted sinograms
(:func:`apply_decomposition`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, DomainError
from .motion import IdentityMotion, MotionModel, motion_bounds
from .phantom import ConcentrationImage, evaluate
from .physics import (
    MU0,
    ScannerConfig,
    excitation,
    excitation_prime,
    moment_modulus,
    moment_modulus_prime,
    unit_along,
    unit_normal,
)

REDUCED = "reduced-diagonal"
FULL = "full-grid"
NOISE_ALGORITHM = "numpy.random.Philox(4x64)/standard_normal"

_IDENTITY = IdentityMotion()


# ---------------------------------------------------------------------------
# data containers


@dataclass
class Sinogram:
    """Dynamic Radon samples.

    ``reduced-diagonal``: ``values[j, n]`` at ``(phi_j, t_n, s_n)``.
    ``full-grid``: ``values[j, n, k]`` at ``(phi_j, t_n, displacements[k])``.
    """

    values: np.ndarray
    angles: np.ndarray
    times: np.ndarray
    displacements: np.ndarray
    kind: str = REDUCED

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        p, nt = len(self.angles), len(self.times)
        want = (p, nt) if self.kind == REDUCED else (p, nt, len(self.displacements))
        if self.kind not in (REDUCED, FULL):
            raise DomainError(f"unknown sinogram kind {self.kind!r}")
        if self.values.shape != want:
            raise DomainError(f"sinogram values shape {self.values.shape}, expected {want}")

    @classmethod
    def zeros_like(cls, other: "Sinogram") -> "Sinogram":
        return cls(np.zeros_like(other.values), other.angles, other.times,
                   other.displacements, other.kind)


@dataclass
class VoltageRecording:
    """Receive-coil voltages ``values[l, j, n]`` [V] (or normalized)."""

    values: np.ndarray
    u_star: float | None = None
    normalized: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def channel_count(self) -> int:
        return self.values.shape[0]


def _sinogram_axes(config: ScannerConfig):
    return config.angles(), config.times(), config.displacements()


# ---------------------------------------------------------------------------
# line integrals


def _line_offsets(half_width: float, step: float) -> tuple[np.ndarray, float]:
    if not step > 0:
        raise DomainError("quadrature step must be positive")
    n = max(1, int(math.ceil(2.0 * half_width / step - 1e-9)))
    h = 2.0 * half_width / n
    return -half_width + (np.arange(n) + 0.5) * h, h


def _line_points(phi, s, v):
    """Points ``s e_phi - v e_phi^perp`` for each s (rows) and v (cols)."""
    e = unit_normal(phi)
    ep = unit_along(phi)
    s = np.asarray(s, float)
    return s[..., None, None] * e - v[:, None] * ep


def _line_integrals(c0, model, phi, t, s, step, weight=None):
    half = c0.grid.half_width
    v, h = _line_offsets(half, step)
    r = _line_points(phi, np.atleast_1d(s), v)
    y = model.gamma(phi, t, r)
    vals = evaluate(c0, y)
    vals = vals * model.h_weight(phi, t, y) * model.det_jacobian(phi, t, r)
    if weight is not None:
        vals = vals * weight(phi, t, y)
    out = vals.sum(axis=-1) * h
    return out if np.ndim(s) else float(out[0])


def _default_step(c0: ConcentrationImage, quad_step):
    return c0.grid.pixel_size if quad_step is None else quad_step


def radon(c: ConcentrationImage, phi, s, quad_step=None):
    """Line integral of ``c`` over ``{r : r . e_phi = s}``; s may be an array."""
    return _line_integrals(c, _IDENTITY, phi, 0.0, s, _default_step(c, quad_step))


def dynamic_radon(c0: ConcentrationImage, model: MotionModel, phi, t, s, quad_step=None):
    """Line integral of the deformed frame at ``(phi, t)``, computed from ``c0``."""
    return _line_integrals(c0, model, phi, t, s, _default_step(c0, quad_step))


def _weight_fn(model: MotionModel, weight: str):
    if weight == "alpha":
        return model.alpha_weight
    if weight == "beta":
        return model.beta_weight
    raise DomainError(f"weight must be 'alpha' or 'beta', got {weight!r}")


def weighted_dynamic_radon(c0, model, weight, phi, t, s, quad_step=None):
    """Dynamic Radon transform with integrand weighted by ``alpha`` or ``beta``."""
    return _line_integrals(c0, model, phi, t, s, _default_step(c0, quad_step),
                           _weight_fn(model, weight))


def reduced_sinogram(c0: ConcentrationImage, model: MotionModel, config: ScannerConfig,
                     quad_step=None, weight: str | None = None) -> Sinogram:
    """Diagonal samples ``R^Gamma c0(phi_m, t_n, s_n)``."""
    angles, times, disp = _sinogram_axes(config)
    step = _default_step(c0, quad_step)
    w = None if weight is None else _weight_fn(model, weight)
    vals = np.empty((len(angles), len(times)))
    for m, phi in enumerate(angles):
        for n, t in enumerate(times):
            vals[m, n] = _line_integrals(c0, model, phi, t, disp[n], step, w)
    return Sinogram(vals, angles, times, disp, REDUCED)


def full_sinogram(c0: ConcentrationImage, model: MotionModel, config: ScannerConfig,
                  quad_step=None, weight: str | None = None, displacements=None) -> Sinogram:
    """``R^Gamma c0(phi_m, t_n, s_k)`` for every time and every displacement."""
    angles, times, disp = _sinogram_axes(config)
    if displacements is not None:
        disp = np.asarray(displacements, float)
    step = _default_step(c0, quad_step)
    w = None if weight is None else _weight_fn(model, weight)
    vals = np.empty((len(angles), len(times), len(disp)))
    for m, phi in enumerate(angles):
        for n, t in enumerate(times):
            vals[m, n] = _line_integrals(c0, model, phi, t, disp, step, w)
    return Sinogram(vals, angles, times, disp, FULL)


# ---------------------------------------------------------------------------
# convolution operators K1, K2, K3


def _displacement_step(displacements: np.ndarray) -> float:
    if len(displacements) < 2:
        raise DomainError("need at least two displacement samples")
    d = np.diff(displacements)
    if not np.allclose(d, d[0], rtol=1e-9, atol=0):
        raise DomainError("displacement samples must be uniformly spaced")
    return abs(float(d[0]))


def row_coefficients(kind: str, config: ScannerConfig, l: int, j: int) -> np.ndarray:
    """Per-time scalar factor of ``K_{kind,l}`` at angle index j (1-based)."""
    phi = config.angles()[j - 1]
    ep = float(unit_normal(phi) @ np.asarray(config.coil_sensitivities[l]))
    scale = MU0 * ep * config.particle.concentration_scale
    t = config.times()
    if kind == "K1":
        return -scale * config.drive_amplitude * excitation_prime(config, j, t)
    if kind == "K2":
        return np.full(len(t), scale * config.gradient_strength)
    if kind == "K3":
        return np.full(len(t), -scale)
    raise DomainError(f"unknown kernel kind {kind!r}")


def conv_kernel_matrix(kind: str, config: ScannerConfig, l: int, j: int,
                       displacements=None) -> np.ndarray:
    """Discretized ``K_{kind,l}`` at angle index j: ``(N+1) x len(displacements)``.

    Row n samples the convolution at the FFL position ``s_{phi_j, t_n}``;
    columns are sinogram displacements (default: the reduced ``s_k``).
    ``l`` is the 0-based receive channel.
    """
    if displacements is None:
        displacements = config.displacements()
    disp = np.asarray(displacements, float)
    ds = _displacement_step(disp)
    ffl = config.fov_half_width * excitation(config, j, config.times())
    arg = config.gradient_strength * (ffl[:, None] - disp[None, :])
    if kind in ("K1", "K2"):
        kern = moment_modulus_prime(arg, config.particle)
    elif kind == "K3":
        kern = moment_modulus(arg, config.particle)
    else:
        raise DomainError(f"unknown kernel kind {kind!r}")
    return row_coefficients(kind, config, l, j)[:, None] * kern * ds


def _apply_kernel(kind, sino: Sinogram, config: ScannerConfig) -> np.ndarray:
    L, p = config.channel_count, config.angle_count
    out = np.empty((L, p, len(sino.times)))
    for l in range(L):
        for j in range(1, p + 1):
            M = conv_kernel_matrix(kind, config, l, j, sino.displacements)
            if sino.kind == REDUCED:
                out[l, j - 1] = M @ sino.values[j - 1]
            else:
                out[l, j - 1] = np.einsum("nk,nk->n", M, sino.values[j - 1])
    return out


def decomposition_terms(v: Sinogram, v_alpha: Sinogram, v_beta: Sinogram,
                        config: ScannerConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(K1 v, K2 v_alpha, K3 v_beta)``, each of shape ``(L, p, N+1)``."""
    for other in (v_alpha, v_beta):
        if other.values.shape != v.values.shape or other.kind != v.kind:
            raise DomainError("sinogram shapes do not match")
    if v.values.shape[:2] != (config.angle_count, config.samples_per_translation + 1):
        raise DomainError("sinogram does not match the scanner sampling")
    return (_apply_kernel("K1", v, config), _apply_kernel("K2", v_alpha, config),
            _apply_kernel("K3", v_beta, config))


def apply_decomposition(v: Sinogram, v_alpha: Sinogram, v_beta: Sinogram,
                        config: ScannerConfig) -> VoltageRecording:
    """``K1 R^Gamma + K2 R^Gamma_alpha + K3 R^Gamma_beta`` applied to sinograms."""
    k1, k2, k3 = decomposition_terms(v, v_alpha, v_beta, config)
    return VoltageRecording(k1 + k2 + k3)


# ---------------------------------------------------------------------------
# direct quadrature of the signal equation


def _quadrature_nodes(c0: ConcentrationImage, quad_step):
    """Midpoint nodes over the FOV square carrying nonzero concentration."""
    half = c0.grid.half_width
    step = _default_step(c0, quad_step)
    ax, h = _line_offsets(half, step)
    X, Y = np.meshgrid(ax, ax[::-1])
    pts = np.stack([X, Y], axis=-1).reshape(-1, 2)
    vals = evaluate(c0, pts)
    keep = vals != 0
    return pts[keep], vals[keep], h * h


def dynamic_forward_terms(c0: ConcentrationImage, model: MotionModel, config: ScannerConfig,
                          quad_step=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three signal contributions from direct 2D quadrature.

    Returns arrays of shape ``(L, p, N+1)``: the excitation term
    ``-mu0 (e.p) A Lambda' I``, the motion-velocity term ``+mu0 (e.p) G II``
    and the weight-rate term ``-mu0 (e.p) III``.
    """
    y, c, dA = _quadrature_nodes(c0, quad_step)
    L, p = config.channel_count, config.angle_count
    times = config.times()
    nt = len(times)
    G, A = config.gradient_strength, config.drive_amplitude
    coils = np.asarray(config.coil_sensitivities)
    kappa = config.particle.concentration_scale
    out = np.zeros((3, L, p, nt))
    if len(c) == 0:
        return out[0], out[1], out[2]
    for jm1, phi in enumerate(config.angles()):
        j = jm1 + 1
        e = unit_normal(phi)
        lam = excitation(config, j, times)
        lam_p = excitation_prime(config, j, times)
        I = np.empty(nt)
        II = np.empty(nt)
        III = np.empty(nt)
        for n, t in enumerate(times):
            h = model.h_weight(phi, t, y)
            arg = -G * (model.gamma_inverse(phi, t, y) @ e) + A * lam[n]
            ch = c * h
            mp = moment_modulus_prime(arg, config.particle)
            I[n] = np.sum(ch * mp) * dA
            II[n] = np.sum(ch * mp * model.alpha_weight(phi, t, y)) * dA
            III[n] = np.sum(c * moment_modulus(arg, config.particle)
                            * model.h_weight_dot(phi, t, y)) * dA
        ep = coils @ e
        pref = -MU0 * ep * kappa
        out[0, :, jm1] = pref[:, None] * (A * lam_p * I)[None, :]
        out[1, :, jm1] = -pref[:, None] * (G * II)[None, :]
        out[2, :, jm1] = pref[:, None] * III[None, :]
    return out[0], out[1], out[2]


def dynamic_forward_direct(c0: ConcentrationImage, model: MotionModel, config: ScannerConfig,
                           quad_step=None) -> VoltageRecording:
    """Voltages of the dynamic forward operator by 2D midpoint quadrature."""
    t1, t2, t3 = dynamic_forward_terms(c0, model, config, quad_step)
    return VoltageRecording(t1 + t2 + t3)


def static_forward(c: ConcentrationImage, config: ScannerConfig, quad_step=None) -> VoltageRecording:
    """Voltages for a static concentration (same quadrature path, Gamma = Id)."""
    return dynamic_forward_direct(c, _IDENTITY, config, quad_step)


# ---------------------------------------------------------------------------
# noise and normalization


def add_noise(recording: VoltageRecording, std: float, seed: int) -> VoltageRecording:
    """Add i.i.d. zero-mean Gaussian noise; deterministic for a given seed."""
    if std < 0:
        raise DomainError("noise std must be nonnegative")
    meta = dict(recording.metadata)
    meta.update(noise_std=float(std), noise_seed=int(seed), noise_algorithm=NOISE_ALGORITHM)
    if std == 0:
        return VoltageRecording(recording.values.copy(), recording.u_star,
                                recording.normalized, meta)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    noisy = recording.values + std * rng.standard_normal(recording.values.shape)
    return VoltageRecording(noisy, recording.u_star, recording.normalized, meta)


def normalize(recording: VoltageRecording) -> tuple[VoltageRecording, float]:
    """Scale to unit max-abs value; returns the recording and ``u*``."""
    u_star = float(np.max(np.abs(recording.values))) if recording.values.size else 0.0
    if u_star == 0 or not np.isfinite(u_star):
        raise DegenerateInputError("cannot normalize an all-zero recording")
    out = VoltageRecording(recording.values / u_star, u_star, True, dict(recording.metadata))
    return out, u_star


# ---------------------------------------------------------------------------
# diagnostics


def k2_relative_magnitude(c0, model, config, quad_step=None) -> float:
    """``||K2 R_alpha|| / ||A^Gamma c0||`` from direct quadrature."""
    t1, t2, t3 = dynamic_forward_terms(c0, model, config, quad_step)
    total = np.linalg.norm(t1 + t2 + t3)
    return float(np.linalg.norm(t2) / total) if total else 0.0


@dataclass
class KernelBoundReport:
    """Pointwise checks of the K2 / K3 magnitude estimates."""

    lower_bound_violations: int  # |K1 R| >= |Lambda'/C| |K2 R_alpha|
    k2_bound_violations: int  # |K2 R_alpha| <= mu0 |p| m'_inf A C c_max pi R^2
    k3_bound_violations: int  # |K3 R_beta| <= mu0 |p| m D c_max pi R^2
    checked: int
    speed: np.ndarray  # C per (j, n)
    weight_rate: np.ndarray  # D per (j, n)

    @property
    def violations(self) -> int:
        return self.lower_bound_violations + self.k2_bound_violations + self.k3_bound_violations


def kernel_bound_check(k1, k2, k3, c0: ConcentrationImage, model: MotionModel,
                       config: ScannerConfig, sample_count: int = 10_000,
                       rel_slack: float = 1e-12) -> KernelBoundReport:
    """Verify the magnitude estimates at every ``(l, phi_j, t_n)`` sample."""
    angles, times = config.angles(), config.times()
    p, nt = len(angles), len(times)
    R = config.fov_half_width
    pm = config.particle
    m_prime_inf = pm.magnetic_moment * pm.langevin_scale / 3.0
    kappa = pm.concentration_scale
    C = np.empty((p, nt))
    D = np.empty((p, nt))
    cmax = np.empty((p, nt))
    pts = c0.grid.centers().reshape(-1, 2)
    vals = c0.values.ravel()
    nz = vals > 0
    for jm1, phi in enumerate(angles):
        for n, t in enumerate(times):
            b = motion_bounds(model, phi, t, config, sample_count)
            C[jm1, n], D[jm1, n] = b.speed, b.weight_rate
            y = pts[nz]
            r = model.gamma_inverse(phi, t, y)
            frame = vals[nz] * model.h_weight(phi, t, y) * model.det_jacobian(phi, t, r)
            cmax[jm1, n] = kappa * (frame.max() if frame.size else 0.0)
    lower = k2_bad = k3_bad = 0
    disk = math.pi * R * R
    for l, pl in enumerate(config.coil_sensitivities):
        pn = float(np.linalg.norm(pl))
        for jm1 in range(p):
            lam_p = excitation_prime(config, jm1 + 1, times)
            for n in range(nt):
                a1, a2, a3 = abs(k1[l, jm1, n]), abs(k2[l, jm1, n]), abs(k3[l, jm1, n])
                c, d = C[jm1, n], D[jm1, n]
                if c > 0:
                    rhs = abs(lam_p[n] / c) * a2
                    lower += a1 < rhs * (1 - rel_slack)
                else:
                    lower += a2 > 0
                k2_bound = MU0 * pn * m_prime_inf * config.drive_amplitude * c * cmax[jm1, n] * disk
                k3_bound = MU0 * pn * pm.magnetic_moment * d * cmax[jm1, n] * disk
                k2_bad += a2 > k2_bound * (1 + rel_slack)
                k3_bad += a3 > k3_bound * (1 + rel_slack)
    return KernelBoundReport(int(lower), int(k2_bad), int(k3_bad),
                       config.channel_count * p * nt, C, D)
