"""Pixel grids, concentration images and their motion-deformed frames.

Layout: pixel ``(0, 0)`` is the top-left pixel; column index grows with x,
row index grows with decreasing y; samples sit at pixel centers and the grid
is centered on the origin.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .motion import MotionModel


@dataclass(frozen=True)
class ImageGrid:
    half_width: float
    resolution: int

    def __post_init__(self):
        if int(self.resolution) != self.resolution or self.resolution < 2:
            raise DomainError("grid resolution must be an integer >= 2")
        if not self.half_width > 0:
            raise DomainError("grid half width must be positive")

    @property
    def pixel_size(self) -> float:
        return 2.0 * self.half_width / self.resolution

    @property
    def pixel_area(self) -> float:
        return self.pixel_size ** 2

    def axis(self) -> np.ndarray:
        """Pixel-center coordinates along x (ascending)."""
        n = self.resolution
        return -self.half_width + (np.arange(n) + 0.5) * self.pixel_size

    def centers(self) -> np.ndarray:
        """``(n, n, 2)`` array of pixel-center points ``(x, y)``."""
        ax = self.axis()
        x = ax[None, :].repeat(self.resolution, 0)
        y = ax[::-1][:, None].repeat(self.resolution, 1)
        return np.stack([x, y], axis=-1)


class ConcentrationImage:
    """Nonnegative pixel image on an :class:`ImageGrid`.

    Values outside the inscribed disk are allowed in storage but never seen by
    :func:`evaluate`, which extends the image by zero outside the disk.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: ImageGrid, values):
        values = np.array(values, dtype=float)
        if values.shape != (grid.resolution, grid.resolution):
            raise DomainError(f"values shape {values.shape} does not match grid {grid.resolution}")
        if not np.all(np.isfinite(values)):
            raise DomainError("concentration values must be finite")
        if np.any(values < 0):
            raise DomainError("concentration values must be nonnegative")
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    def total_mass(self) -> float:
        return float(self.values.sum() * self.grid.pixel_area)

    def __repr__(self):
        return f"ConcentrationImage(n={self.grid.resolution}, max={self.values.max():.3g})"


def make_disk_phantom(grid: ImageGrid, center=(0.0, 0.0), radius: float = 0.0,
                      value: float = 1.0) -> ConcentrationImage:
    """Binary disk: pixels whose center lies inside get ``value``."""
    center = np.asarray(center, float)
    if radius < 0 or value < 0:
        raise DomainError("radius and value must be nonnegative")
    if np.hypot(*center) + radius > grid.half_width * (1 + 1e-12):
        raise DomainError("disk is not contained in the field-of-view disk")
    pts = grid.centers()
    inside = np.sum((pts - center) ** 2, axis=-1) < radius ** 2
    return ConcentrationImage(grid, np.where(inside, value, 0.0))


def bilinear_weights(grid: ImageGrid, points):
    """Interpolation stencil for ``points`` (shape ``(..., 2)``).

    Returns ``(flat_index, weight)``, each of shape ``(..., 4)``.  Neighbours
    outside the pixel array contribute zero, as do points outside the
    inscribed disk of radius ``half_width``.
    """
    pts = np.asarray(points, float)
    if pts.ndim == 1:
        idx, w = bilinear_weights(grid, pts[None])
        return idx[0], w[0]
    n = grid.resolution
    h = grid.pixel_size
    # fractional column / row positions of the pixel centers
    fc = (pts[..., 0] + grid.half_width) / h - 0.5
    fr = (grid.half_width - pts[..., 1]) / h - 0.5
    # snap round-off so pixel centers reproduce stored values exactly
    for f in (fc, fr):
        near = np.rint(f)
        snap = np.abs(f - near) < 1e-9
        f[snap] = near[snap]
    c0 = np.floor(fc)
    r0 = np.floor(fr)
    wc = fc - c0
    wr = fr - r0
    c0 = c0.astype(np.int64)
    r0 = r0.astype(np.int64)
    inside = (pts[..., 0] ** 2 + pts[..., 1] ** 2) <= grid.half_width ** 2

    idx = np.empty(pts.shape[:-1] + (4,), dtype=np.int64)
    w = np.empty(pts.shape[:-1] + (4,))
    for k, (dr, dc) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        rr = r0 + dr
        cc = c0 + dc
        wk = (wr if dr else 1.0 - wr) * (wc if dc else 1.0 - wc)
        ok = inside & (rr >= 0) & (rr < n) & (cc >= 0) & (cc < n)
        idx[..., k] = np.where(ok, rr * n + cc, 0)
        w[..., k] = np.where(ok, wk, 0.0)
    return idx, w


def evaluate(image: ConcentrationImage, points):
    """Bilinear interpolation of ``image`` at ``points``; zero outside the disk."""
    idx, w = bilinear_weights(image.grid, points)
    flat = image.values.ravel()
    out = np.sum(flat[idx] * w, axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def resample(image: ConcentrationImage, grid: ImageGrid) -> ConcentrationImage:
    if grid == image.grid:
        return image
    return ConcentrationImage(grid, np.maximum(evaluate(image, grid.centers()), 0.0))


def frame_density(c0: ConcentrationImage, model: MotionModel, phi, t, r):
    """``c(r, phi, t) = c0(Gamma r) h(Gamma r) |det D Gamma(r)|`` at points r."""
    y = model.gamma(phi, t, r)
    return evaluate(c0, y) * model.h_weight(phi, t, y) * model.det_jacobian(phi, t, r)


def dynamic_frame(c0: ConcentrationImage, model: MotionModel, phi, t,
                  out_grid: ImageGrid | None = None) -> ConcentrationImage:
    """Concentration at scan state ``(phi, t)`` sampled on ``out_grid``."""
    out_grid = out_grid or c0.grid
    vals = frame_density(c0, model, phi, t, out_grid.centers())
    return ConcentrationImage(out_grid, np.maximum(vals, 0.0))

