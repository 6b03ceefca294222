"""Diffeomorphic motion models and the weights derived from them.

A motion maps a point ``r`` of the current frame at scan state ``(phi, t)`` to
its reference-frame position ``Gamma(r)``.  Everything the forward model needs
(``h``, ``alpha``, ``beta``) is computed from ``Gamma^{-1}`` and its time
derivative.

All point arguments may be a single 2-vector or an array of shape ``(..., 2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SingularMotionError
from .physics import ScannerConfig, unit_normal

MASS = "mass"
INTENSITY = "intensity"
PRESERVATIONS = (MASS, INTENSITY)


def rotation(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


_J = np.array([[0.0, -1.0], [1.0, 0.0]])  # d/da R^a = R^a J


class MotionModel:
    """Base class; subclasses provide ``Gamma^{-1}`` and its derivatives.

    Subclasses implement ``gamma``, ``gamma_inverse``, ``gamma_inverse_dot``,
    ``jacobian_inverse`` (``D Gamma^{-1}`` at y) and ``jacobian_inverse_dot``.
    """

    kind = "abstract"

    def __init__(self, preservation: str = MASS):
        if preservation not in PRESERVATIONS:
            raise ConfigError([("motion.preservation",
                                f"must be one of {PRESERVATIONS}, got {preservation!r}")])
        self.preservation = preservation

    # -- Jacobian-derived quantities --------------------------------------
    def jacobian(self, phi, t, r):
        """``D Gamma`` at current-frame point r."""
        y = self.gamma(phi, t, r)
        Jinv = self.jacobian_inverse(phi, t, y)
        return _inv2(Jinv)

    def det_jacobian(self, phi, t, r):
        """``|det D Gamma(r)|``."""
        return np.abs(_det2(self.jacobian(phi, t, r)))

    def h_weight(self, phi, t, y):
        """Preservation weight: ``|det D Gamma^{-1}(y)|`` (intensity) or 1 (mass)."""
        y = np.asarray(y, float)
        if self.preservation == MASS:
            return np.ones(y.shape[:-1]) if y.ndim > 1 else 1.0
        det = _det2(self.jacobian_inverse(phi, t, y))
        if np.any(det == 0):
            raise SingularMotionError("D Gamma^{-1} is singular")
        return np.abs(det)

    def alpha_weight(self, phi, t, y):
        """Velocity of ``Gamma^{-1}`` projected on ``e_phi``."""
        return self.gamma_inverse_dot(phi, t, y) @ unit_normal(phi)

    def beta_weight(self, phi, t, y):
        """``h'/h``; Jacobi's formula ``tr(D Gamma(Gamma^{-1} y) (D Gamma^{-1})'(y))``."""
        y = np.asarray(y, float)
        if self.preservation == MASS:
            return np.zeros(y.shape[:-1]) if y.ndim > 1 else 0.0
        Jinv = self.jacobian_inverse(phi, t, y)
        det = _det2(Jinv)
        if np.any(det == 0):
            raise SingularMotionError("D Gamma^{-1} is singular")
        Jfwd = _inv2(Jinv)
        Jdot = self.jacobian_inverse_dot(phi, t, y)
        return np.einsum("...ij,...ji->...", Jfwd, Jdot)

    def h_weight_dot(self, phi, t, y):
        """Time derivative ``h'`` = ``beta * h``."""
        return self.beta_weight(phi, t, y) * self.h_weight(phi, t, y)

    def to_dict(self) -> dict:
        raise NotImplementedError


def _det2(M):
    M = np.asarray(M)
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


def _inv2(M):
    M = np.asarray(M)
    det = _det2(M)
    if np.any(det == 0):
        raise SingularMotionError("singular 2x2 matrix")
    out = np.empty_like(M, dtype=float)
    out[..., 0, 0] = M[..., 1, 1]
    out[..., 1, 1] = M[..., 0, 0]
    out[..., 0, 1] = -M[..., 0, 1]
    out[..., 1, 0] = -M[..., 1, 0]
    return out / det[..., None, None]


class AffineMotion(MotionModel):
    """Affine motion with analytic time derivatives.

    ``params(phi, t)`` returns ``(M, M_dot, d, d_dot)``.  With
    ``parametrizes="inverse"`` these describe ``Gamma^{-1} y = M y + d``;
    with ``parametrizes="forward"`` they describe ``Gamma r = M r + d`` and are
    converted to the inverse map internally.
    """

    kind = "affine-general"

    def __init__(self, params, preservation: str = MASS, parametrizes: str = "inverse"):
        super().__init__(preservation)
        if parametrizes not in ("inverse", "forward"):
            raise ConfigError([("motion.parametrizes", "must be 'inverse' or 'forward'")])
        self._params = params
        self.parametrizes = parametrizes

    def inverse_affine(self, phi, t):
        """``(A, A_dot, b, b_dot)`` with ``Gamma^{-1} y = A y + b``."""
        M, Md, d, dd = (np.asarray(x, float) for x in self._params(phi, t))
        if _det2(M) == 0:
            raise SingularMotionError(f"singular linear part at phi={phi}, t={t}")
        if self.parametrizes == "inverse":
            return M, Md, d, dd
        A = _inv2(M)
        Ad = -A @ Md @ A
        b = -A @ d
        bd = -Ad @ d - A @ dd
        return A, Ad, b, bd

    def gamma(self, phi, t, r):
        A, _, b, _ = self.inverse_affine(phi, t)
        return (np.asarray(r, float) - b) @ _inv2(A).T

    def gamma_inverse(self, phi, t, y):
        A, _, b, _ = self.inverse_affine(phi, t)
        return np.asarray(y, float) @ A.T + b

    def gamma_inverse_dot(self, phi, t, y):
        _, Ad, _, bd = self.inverse_affine(phi, t)
        return np.asarray(y, float) @ Ad.T + bd

    def jacobian_inverse(self, phi, t, y):
        A = self.inverse_affine(phi, t)[0]
        y = np.asarray(y, float)
        return np.broadcast_to(A, y.shape[:-1] + (2, 2))

    def jacobian_inverse_dot(self, phi, t, y):
        Ad = self.inverse_affine(phi, t)[1]
        y = np.asarray(y, float)
        return np.broadcast_to(Ad, y.shape[:-1] + (2, 2))

    def jacobian(self, phi, t, r):
        A = self.inverse_affine(phi, t)[0]
        r = np.asarray(r, float)
        return np.broadcast_to(_inv2(A), r.shape[:-1] + (2, 2))

    def det_jacobian(self, phi, t, r):
        A = self.inverse_affine(phi, t)[0]
        r = np.asarray(r, float)
        v = abs(1.0 / _det2(A))
        return np.full(r.shape[:-1], v) if r.ndim > 1 else v

    def h_weight(self, phi, t, y):
        y = np.asarray(y, float)
        if self.preservation == MASS:
            v = 1.0
        else:
            v = abs(_det2(self.inverse_affine(phi, t)[0]))
        return np.full(y.shape[:-1], v) if y.ndim > 1 else v

    def beta_constant(self, phi, t) -> float:
        """Spatially constant ``beta``: 0 (mass) or ``tr(A^{-1} A')`` (intensity)."""
        if self.preservation == MASS:
            return 0.0
        A, Ad, _, _ = self.inverse_affine(phi, t)
        return float(np.trace(_inv2(A) @ Ad))

    def beta_weight(self, phi, t, y):
        y = np.asarray(y, float)
        v = self.beta_constant(phi, t)
        return np.full(y.shape[:-1], v) if y.ndim > 1 else v


class IdentityMotion(AffineMotion):
    kind = "identity"

    def __init__(self, preservation: str = MASS):
        eye, zero2, zero = np.eye(2), np.zeros((2, 2)), np.zeros(2)
        super().__init__(lambda phi, t: (eye, zero2, zero, zero), preservation)

    def to_dict(self):
        return {"kind": self.kind, "preservation": self.preservation}


class PaperMotion(AffineMotion):
    """Pulsating scaling with a left-to-right drift, defined on ``Gamma``.

    ``Gamma r = a r + b`` with ``a = base + amp * cos(2 pi f tau)``,
    ``b = a * (dx - tau * 2 dx / ((p - 1) T), 0)`` and global time
    ``tau = (j - 1) / (2 f_d) + t``; the angle index is recovered from
    ``phi = (j - 1) pi / p``.
    """

    kind = "paper"

    def __init__(self, scanner: ScannerConfig, deformation_frequency: float = 78e3,
                 translation_shift: float = 2e-3, preservation: str = MASS,
                 base_scale: float = 0.8, scale_amplitude: float = 0.2):
        if not abs(scale_amplitude) < abs(base_scale):
            raise ConfigError([("motion.scale_amplitude",
                                "must be smaller than base_scale so a never vanishes")])
        self.scanner = scanner
        self.deformation_frequency = float(deformation_frequency)
        self.translation_shift = float(translation_shift)
        self.base_scale = float(base_scale)
        self.scale_amplitude = float(scale_amplitude)
        super().__init__(self._forward_params, preservation, parametrizes="forward")

    def global_time(self, phi, t):
        sc = self.scanner
        j_minus_1 = phi * sc.angle_count / math.pi
        return j_minus_1 / (2.0 * sc.drive_frequency) + t

    def scale(self, phi, t):
        """``(a, a')`` at the given scan state."""
        w = 2.0 * math.pi * self.deformation_frequency
        tau = self.global_time(phi, t)
        return (self.base_scale + self.scale_amplitude * math.cos(w * tau),
                -self.scale_amplitude * w * math.sin(w * tau))

    def _forward_params(self, phi, t):
        sc = self.scanner
        a, ad = self.scale(phi, t)
        tau = self.global_time(phi, t)
        p = sc.angle_count
        # drift rate 2 dx / ((p - 1) T); a single angle has no drift
        k = 2.0 * self.translation_shift / ((p - 1) * sc.translation_time) if p > 1 else 0.0
        u = self.translation_shift - tau * k
        M = a * np.eye(2)
        Md = ad * np.eye(2)
        d = np.array([a * u, 0.0])
        dd = np.array([ad * u - a * k, 0.0])
        return M, Md, d, dd

    def to_dict(self):
        return {"kind": self.kind, "preservation": self.preservation,
                "deformation_frequency_Hz": self.deformation_frequency,
                "translation_shift_m": self.translation_shift,
                "base_scale": self.base_scale, "scale_amplitude": self.scale_amplitude}


class RotationMotion(AffineMotion):
    """Rigid rotation ``Gamma^{-1} y = R^{a} y`` with ``a = omega * tau``."""

    kind = "rotation"

    def __init__(self, scanner: ScannerConfig, angular_velocity: float,
                 preservation: str = MASS):
        self.scanner = scanner
        self.angular_velocity = float(angular_velocity)
        super().__init__(self._inverse_params, preservation)

    def angle(self, phi, t):
        sc = self.scanner
        tau = phi * sc.angle_count / math.pi / (2.0 * sc.drive_frequency) + t
        return self.angular_velocity * tau, self.angular_velocity

    def _inverse_params(self, phi, t):
        a, ad = self.angle(phi, t)
        R = rotation(a)
        return R, ad * R @ _J, np.zeros(2), np.zeros(2)

    def to_dict(self):
        return {"kind": self.kind, "preservation": self.preservation,
                "angular_velocity_rad_per_s": self.angular_velocity}


class LinearDriftAffine(AffineMotion):
    """Serializable general affine motion, linear in global time.

    ``Gamma^{-1} y = (A0 + tau A1) y + (b0 + tau b1)``.
    """

    def __init__(self, scanner: ScannerConfig, A0, A1, b0, b1, preservation: str = MASS):
        self.scanner = scanner
        self.A0, self.A1 = np.asarray(A0, float), np.asarray(A1, float)
        self.b0, self.b1 = np.asarray(b0, float), np.asarray(b1, float)
        super().__init__(self._inverse_params, preservation)

    def _inverse_params(self, phi, t):
        sc = self.scanner
        tau = phi * sc.angle_count / math.pi / (2.0 * sc.drive_frequency) + t
        return self.A0 + tau * self.A1, self.A1, self.b0 + tau * self.b1, self.b1

    def to_dict(self):
        return {"kind": self.kind, "preservation": self.preservation,
                "A0": self.A0.tolist(), "A1": self.A1.tolist(),
                "b0": self.b0.tolist(), "b1": self.b1.tolist()}


def motion_from_dict(doc: dict, scanner: ScannerConfig) -> MotionModel:
    kind = doc.get("kind", "identity")
    pres = doc.get("preservation", MASS)
    if kind == "identity":
        return IdentityMotion(pres)
    if kind == "paper":
        return PaperMotion(scanner,
                           deformation_frequency=doc.get("deformation_frequency_Hz", 78e3),
                           translation_shift=doc.get("translation_shift_m", 2e-3),
                           preservation=pres,
                           base_scale=doc.get("base_scale", 0.8),
                           scale_amplitude=doc.get("scale_amplitude", 0.2))
    if kind == "rotation":
        if "angular_velocity_rad_per_s" not in doc:
            raise ConfigError([("motion.angular_velocity_rad_per_s", "missing")])
        return RotationMotion(scanner, doc["angular_velocity_rad_per_s"], pres)
    if kind == "affine-general":
        try:
            return LinearDriftAffine(scanner, doc["A0"], doc.get("A1", [[0, 0], [0, 0]]),
                                     doc.get("b0", [0, 0]), doc.get("b1", [0, 0]), pres)
        except KeyError as exc:
            raise ConfigError([(f"motion.{exc.args[0]}", "missing")]) from None
    raise ConfigError([("motion.kind", f"unknown motion kind {kind!r}")])


def _disk_samples(radius: float, count: int) -> np.ndarray:
    """Nested sample set of the closed disk.

    Even indices walk the boundary circle along a van der Corput sequence,
    odd indices fill the interior with a 2D Halton sequence; every prefix of
    a longer set is the shorter set, so suprema grow monotonically.
    """
    out = np.empty((count, 2))
    nb = (count + 1) // 2
    theta_b = 2.0 * math.pi * _radical_inverse(np.arange(nb), 2)
    out[0::2] = radius * np.stack([np.cos(theta_b), np.sin(theta_b)], axis=-1)
    ni = count // 2
    if ni:
        k = np.arange(1, ni + 1)
        u = _radical_inverse(k, 2)
        v = _radical_inverse(k, 3)
        rr = radius * np.sqrt(u)
        th = 2.0 * math.pi * v
        out[1::2] = np.stack([rr * np.cos(th), rr * np.sin(th)], axis=-1)
    return out


def _radical_inverse(k, base):
    k = np.asarray(k, dtype=np.int64).copy()
    out = np.zeros(k.shape)
    f = 1.0 / base
    while np.any(k > 0):
        out += f * (k % base)
        k //= base
        f /= base
    return out


@dataclass(frozen=True)
class MotionBounds:
    """Empirical motion constants at one scan state."""

    speed: float  # C: sup ||(Gamma^{-1})' y|| * G / A
    weight_rate: float  # D: sup |h'(y)|
    sample_count: int


def motion_bounds(model: MotionModel, phi, t, config: ScannerConfig,
                  sample_count: int = 10_000) -> MotionBounds:
    """Grid suprema of the motion speed and weight rate over the FOV disk."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    y = _disk_samples(config.fov_half_width, sample_count)
    vel = model.gamma_inverse_dot(phi, t, y)
    C = float(np.max(np.linalg.norm(vel, axis=-1))) / config.fov_half_width
    D = float(np.max(np.abs(model.h_weight_dot(phi, t, y))))
    return MotionBounds(C, D, sample_count)
