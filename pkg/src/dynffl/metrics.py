"""Image-quality metrics on concentration images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import DomainError
from .phantom import ConcentrationImage

PSNR_IDENTICAL = float("inf")


@dataclass(frozen=True)
class SsimParams:
    size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0

    def __post_init__(self):
        if self.size < 1 or self.size % 2 == 0:
            raise DomainError("window size must be odd and positive")
        if not (self.sigma > 0 and self.dynamic_range > 0):
            raise DomainError("sigma and dynamic range must be positive")

    def window(self) -> np.ndarray:
        ax = np.arange(self.size) - (self.size - 1) / 2.0
        g = np.exp(-0.5 * (ax / self.sigma) ** 2)
        w = np.outer(g, g)
        return w / w.sum()

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


def _pair(x, ref):
    xv = x.values if isinstance(x, ConcentrationImage) else np.asarray(x, float)
    rv = ref.values if isinstance(ref, ConcentrationImage) else np.asarray(ref, float)
    if isinstance(x, ConcentrationImage) and isinstance(ref, ConcentrationImage):
        if x.grid != ref.grid:
            raise DomainError("images live on different grids")
    if xv.shape != rv.shape:
        raise DomainError(f"shape mismatch {xv.shape} vs {rv.shape}")
    return xv, rv


def psnr(x, ref, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` when the images coincide."""
    xv, rv = _pair(x, ref)
    if not peak > 0:
        raise DomainError("peak must be positive")
    mse = float(np.mean((xv - rv) ** 2))
    if mse == 0:
        return PSNR_IDENTICAL
    return 10.0 * np.log10(peak ** 2 / mse)


def ssim_map(x, ref, params: SsimParams = SsimParams()) -> np.ndarray:
    xv, rv = _pair(x, ref)
    if min(xv.shape) < params.size:
        raise DomainError(f"images must be at least {params.size} pixels wide")
    w = params.window()

    def filt(a):
        return fftconvolve(a, w[::-1, ::-1], mode="valid")

    mx, mr = filt(xv), filt(rv)
    sxx = filt(xv * xv) - mx * mx
    srr = filt(rv * rv) - mr * mr
    sxr = filt(xv * rv) - mx * mr
    c1, c2 = params.c1, params.c2
    num = (2 * mx * mr + c1) * (2 * sxr + c2)
    den = (mx * mx + mr * mr + c1) * (sxx + srr + c2)
    return num / den


def ssim(x, ref, params: SsimParams = SsimParams()) -> float:
    """Mean structural similarity over the valid-window map (Gaussian weights)."""
    xv, rv = _pair(x, ref)
    if np.array_equal(xv, rv):
        if min(xv.shape) < params.size:
            raise DomainError(f"images must be at least {params.size} pixels wide")
        return 1.0
    return float(np.clip(np.mean(ssim_map(xv, rv, params)), -1.0, 1.0))
