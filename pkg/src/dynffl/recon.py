"""Discrete operators and the joint TV reconstruction of ``(c0, v)``.

Minimizes, over ``c0 >= 0`` and ``v >= 0``::

    1/2 sum_l ||B_l v - u_l||^2 + a1/2 ||R c0 - v||^2 + a2 TV(c0) + a3 ||v||_1

where ``v`` is the reduced dynamic sinogram, ``R`` the (static or dynamic)
Radon matrix on the reconstruction grid and ``B_l`` the method's
convolution matrix divided by ``u*``.  Sinogram values carry metres, the TV
term uses pixel differences.

The solver is the first-order primal-dual method of Chambolle and Pock.  The
three dual blocks differ in norm by orders of magnitude, so both ``v`` and
each dual block are rescaled before the step sizes are chosen from a power
iteration; the scaling is a change of variables and leaves the minimizer
unchanged.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from .errors import ConfigError, DivergenceError, DomainError
from .forward import REDUCED, Sinogram, VoltageRecording, conv_kernel_matrix
from .metrics import psnr, ssim
from .motion import IdentityMotion, MotionModel
from .phantom import ConcentrationImage, ImageGrid, bilinear_weights
from .physics import ScannerConfig, unit_along, unit_normal

METHODS = ("M1", "M2", "M3")


# ---------------------------------------------------------------------------
# operator assembly


@dataclass(frozen=True)
class OperatorBundle:
    """Immutable reconstruction system for one method."""

    radon_matrix: sp.csr_matrix  # (p (N+1)) x n^2
    data_matrices: tuple  # per channel, (p (N+1)) x (p (N+1))
    grid: ImageGrid
    angles: np.ndarray
    times: np.ndarray
    displacements: np.ndarray
    method: str
    u_star: float
    provenance: dict = field(default_factory=dict)

    @property
    def pixel_count(self) -> int:
        return self.grid.resolution ** 2

    @property
    def sinogram_size(self) -> int:
        return self.radon_matrix.shape[0]

    @property
    def stacked_data_matrix(self) -> sp.csr_matrix:
        return sp.vstack(self.data_matrices, format="csr")


def radon_matrix(config: ScannerConfig, model: MotionModel, grid: ImageGrid,
                 quad_step: float | None = None) -> sp.csr_matrix:
    """Bilinear footprint matrix of the dynamic Radon transform.

    Row ``j (N+1) + n`` integrates the recon image along the deformed line at
    ``(phi_j, t_n, s_n)``; with identity motion this is the static transform.
    """
    step = grid.pixel_size if quad_step is None else quad_step
    half = grid.half_width
    nv = max(1, int(math.ceil(2.0 * half / step - 1e-9)))
    dv = 2.0 * half / nv
    v = -half + (np.arange(nv) + 0.5) * dv
    angles, times, disp = config.angles(), config.times(), config.displacements()
    nt = len(times)
    rows, cols, vals = [], [], []
    for m, phi in enumerate(angles):
        e, ep = unit_normal(phi), unit_along(phi)
        for n, t in enumerate(times):
            r = disp[n] * e - v[:, None] * ep
            y = model.gamma(phi, t, r)
            w = model.h_weight(phi, t, y) * model.det_jacobian(phi, t, r) * dv
            idx, bw = bilinear_weights(grid, y)
            bw = bw * np.asarray(w).reshape(-1, 1)
            keep = bw != 0
            cols.append(idx[keep])
            vals.append(bw[keep])
            rows.append(np.full(int(keep.sum()), m * nt + n))
    shape = (len(angles) * nt, grid.resolution ** 2)
    mat = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                        shape=shape)
    return mat.tocsr()


def _beta_constant(model: MotionModel, phi, t) -> float:
    fn = getattr(model, "beta_constant", None)
    if fn is None:
        raise DomainError(f"method M3 needs a spatially constant beta; {model.kind} motion has none")
    return fn(phi, t)


def data_matrices(config: ScannerConfig, model: MotionModel, method: str,
                  u_star: float) -> tuple:
    """Block-diagonal (per angle) convolution matrices scaled by ``1/u*``."""
    times = config.times()
    mats = []
    for l in range(config.channel_count):
        blocks = []
        for j in range(1, config.angle_count + 1):
            M = conv_kernel_matrix("K1", config, l, j)
            if method == "M3":
                phi = config.angles()[j - 1]
                bt = np.array([_beta_constant(model, phi, t) for t in times])
                if np.any(bt != 0):
                    M = M + bt[:, None] * conv_kernel_matrix("K3", config, l, j)
            blocks.append(M / u_star)
        mats.append(sp.block_diag(blocks, format="csr"))
    return tuple(mats)


def build_system(config: ScannerConfig, model: MotionModel, recon_grid: ImageGrid,
                 method: str, u_star: float, quad_step: float | None = None) -> OperatorBundle:
    """Assemble the Radon and data matrices of method M1, M2 or M3.

    M1 ignores the motion (static Radon matrix, ``K1`` only); M2 uses the
    dynamic Radon matrix; M3 additionally adds ``beta~ K3`` to the data
    matrices, which vanishes under mass preservation.
    """
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}, got {method!r}")
    if not (np.isfinite(u_star) and u_star > 0):
        raise DomainError("u* must be positive")
    geom = IdentityMotion() if method == "M1" else model
    R = radon_matrix(config, geom, recon_grid, quad_step)
    B = data_matrices(config, model, method, u_star)
    prov = {"method": method, "motion": model.to_dict(), "u_star": float(u_star),
            "recon_resolution": recon_grid.resolution}
    return OperatorBundle(R, B, recon_grid, config.angles(), config.times(),
                          config.displacements(), method, float(u_star), prov)


# ---------------------------------------------------------------------------
# total variation


def gradient(c: np.ndarray) -> np.ndarray:
    """Forward differences with Neumann boundary; returns ``(2, n, n)`` (x, y)."""
    g = np.zeros((2,) + c.shape)
    g[0, :, :-1] = c[:, 1:] - c[:, :-1]
    g[1, :-1, :] = c[1:, :] - c[:-1, :]
    return g


def divergence(g: np.ndarray) -> np.ndarray:
    """Negative adjoint of :func:`gradient`."""
    gx, gy = g[0], g[1]
    d = np.zeros(gx.shape)
    d[:, :-1] += gx[:, :-1]
    d[:, 1:] -= gx[:, :-1]
    d[:-1, :] += gy[:-1, :]
    d[1:, :] -= gy[:-1, :]
    return d


def tv(c) -> float:
    """Isotropic total variation in pixel units."""
    vals = c.values if isinstance(c, ConcentrationImage) else np.asarray(c, float)
    g = gradient(vals)
    return float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))


# ---------------------------------------------------------------------------
# solver configuration and objective


@dataclass(frozen=True)
class SolveConfig:
    alpha1: float
    alpha2: float
    alpha3: float = 0.0
    method: str = "M2"
    max_iterations: int = 2000
    tolerance: float = 1e-6
    power_iterations: int = 100
    step_safety: float = 0.99
    seed: int = 0

    def __post_init__(self):
        problems = []
        if not (np.isfinite(self.alpha1) and self.alpha1 > 0):
            problems.append(("solve.alpha1", "must be > 0"))
        if not (np.isfinite(self.alpha2) and self.alpha2 > 0):
            problems.append(("solve.alpha2", "must be > 0"))
        if not (np.isfinite(self.alpha3) and self.alpha3 >= 0):
            problems.append(("solve.alpha3", "must be >= 0"))
        if self.method not in METHODS:
            problems.append(("solve.method", f"must be one of {METHODS}"))
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            problems.append(("solve.max_iterations", "must be an integer >= 1"))
        if not self.tolerance >= 0:
            problems.append(("solve.tolerance", "must be >= 0"))
        if not 0 < self.step_safety <= 1:
            problems.append(("solve.step_safety", "must be in (0, 1]"))
        if problems:
            raise ConfigError(problems)


@dataclass
class ReconResult:
    c0_estimate: ConcentrationImage
    sinogram_estimate: Sinogram
    objective_trace: np.ndarray
    iterations: int
    termination: str
    step_sizes: tuple = ()
    note: str = ""

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1]) if len(self.objective_trace) else 0.0


def _data_vector(bundle: OperatorBundle, data) -> np.ndarray:
    vals = data.values if isinstance(data, VoltageRecording) else np.asarray(data, float)
    L = len(bundle.data_matrices)
    if vals.size != L * bundle.sinogram_size:
        raise DomainError(f"data has {vals.size} entries, system expects {L * bundle.sinogram_size}")
    return vals.reshape(-1)


def objective_terms(bundle: OperatorBundle, c0, v, data, cfg: SolveConfig) -> dict:
    """The four objective contributions, unweighted and weighted."""
    c = c0.values if isinstance(c0, ConcentrationImage) else np.asarray(c0, float)
    vv = v.values if isinstance(v, Sinogram) else np.asarray(v, float)
    c = c.reshape(bundle.grid.resolution, bundle.grid.resolution)
    vv = vv.reshape(-1)
    if vv.size != bundle.sinogram_size:
        raise DomainError("sinogram size does not match the system")
    u = _data_vector(bundle, data)
    res = bundle.stacked_data_matrix @ vv - u
    cpl = bundle.radon_matrix @ c.ravel() - vv
    return {"data": 0.5 * float(res @ res), "coupling": 0.5 * cfg.alpha1 * float(cpl @ cpl),
            "tv": cfg.alpha2 * tv(c), "sparsity": cfg.alpha3 * float(np.abs(vv).sum())}


def objective(bundle: OperatorBundle, c0, v, data, cfg: SolveConfig) -> float:
    """Discrete objective exactly as minimized by :func:`pdhg_solve`."""
    return float(sum(objective_terms(bundle, c0, v, data, cfg).values()))


# ---------------------------------------------------------------------------
# power iteration


def power_iteration(linear_op, iterations: int = 100, seed: int = 0) -> float:
    """Largest singular value estimate of ``linear_op`` (matrix or LinearOperator)."""
    if iterations < 1:
        raise DomainError("iterations must be >= 1")
    op = aslinearoperator(linear_op)
    rng = np.random.Generator(np.random.Philox(seed))
    x = rng.standard_normal(op.shape[1])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iterations):
        y = op.matvec(x)
        est = max(est, float(np.linalg.norm(y)))
        z = op.rmatvec(y)
        nz = np.linalg.norm(z)
        if nz == 0:
            break
        x = z / nz
    return est


# ---------------------------------------------------------------------------
# primal-dual solver


class _ScaledSystem:
    """Stacked operator ``K`` acting on ``(c, w)`` with ``v = s_v w``.

    Dual blocks: ``g1 * B s_v w``, ``g2 (R c - s_v w)`` and ``g3 grad c``.
    """

    def __init__(self, bundle: OperatorBundle, cfg: SolveConfig):
        self.n = bundle.grid.resolution
        self.R = bundle.radon_matrix
        self.B = bundle.stacked_data_matrix
        self.RT = self.R.T.tocsr()
        self.BT = self.B.T.tocsr()
        self.nc = self.n * self.n
        self.nv = self.R.shape[0]
        self.nd = self.B.shape[0]
        seed, its = cfg.seed, cfg.power_iterations
        rs = np.asarray(self.R.sum(axis=1)).ravel()
        pos = rs[rs > 0]
        self.s_v = float(pos.mean()) if pos.size else 1.0
        nb = power_iteration(self.B, its, seed) * self.s_v
        self.g1 = 1.0 / nb if nb > 0 else 1.0
        nr = power_iteration(sp.hstack([self.R, -self.s_v * sp.identity(self.nv)]), its, seed)
        self.g2 = 1.0 / nr if nr > 0 else 1.0
        self.g3 = 1.0 / math.sqrt(8.0)

    def split_primal(self, x):
        return x[: self.nc], x[self.nc:]

    def forward(self, x):
        c, w = self.split_primal(x)
        y1 = self.g1 * self.s_v * (self.B @ w)
        y2 = self.g2 * (self.R @ c - self.s_v * w)
        y3 = self.g3 * gradient(c.reshape(self.n, self.n)).ravel()
        return y1, y2, y3

    def adjoint(self, y1, y2, y3):
        c = self.g2 * (self.RT @ y2) - self.g3 * divergence(y3.reshape(2, self.n, self.n)).ravel()
        w = self.g1 * self.s_v * (self.BT @ y1) - self.g2 * self.s_v * y2
        return np.concatenate([c, w])

    def as_linear_operator(self) -> LinearOperator:
        ny = self.nd + self.nv + 2 * self.nc

        def mv(x):
            return np.concatenate(self.forward(np.asarray(x).ravel()))

        def rmv(y):
            y = np.asarray(y).ravel()
            return self.adjoint(y[: self.nd], y[self.nd: self.nd + self.nv], y[self.nd + self.nv:])

        return LinearOperator((ny, self.nc + self.nv), matvec=mv, rmatvec=rmv, dtype=float)


def _objective_from(Kx, x, sysm: _ScaledSystem, u, cfg: SolveConfig) -> float:
    y1, y2, y3 = Kx
    _, w = sysm.split_primal(x)
    res = y1 / sysm.g1 - u
    cpl = y2 / sysm.g2
    g = (y3 / sysm.g3).reshape(2, -1)
    return (0.5 * float(res @ res) + 0.5 * cfg.alpha1 * float(cpl @ cpl)
            + cfg.alpha2 * float(np.sum(np.sqrt(g[0] ** 2 + g[1] ** 2)))
            + cfg.alpha3 * sysm.s_v * float(np.abs(w).sum()))


def _result(bundle, sysm, x, trace, its, reason, steps, note=""):
    c, w = sysm.split_primal(x)
    n = bundle.grid.resolution
    p, nt = len(bundle.angles), len(bundle.times)
    img = ConcentrationImage(bundle.grid, np.maximum(c, 0.0).reshape(n, n))
    sino = Sinogram(np.maximum(sysm.s_v * w, 0.0).reshape(p, nt), bundle.angles,
                    bundle.times, bundle.displacements, REDUCED)
    return ReconResult(img, sino, np.asarray(trace), its, reason, steps, note)


def pdhg_solve(bundle: OperatorBundle, data, cfg: SolveConfig) -> ReconResult:
    """Primal-dual hybrid gradient iteration for the joint problem.

    Terminates after ``cfg.max_iterations`` or when the relative change of the
    (scaled) primal pair drops below ``cfg.tolerance``.
    """
    u = _data_vector(bundle, data)
    sysm = _ScaledSystem(bundle, cfg)
    x = np.zeros(sysm.nc + sysm.nv)
    if not np.any(u) and cfg.alpha3 >= 0:
        return _result(bundle, sysm, x, [0.0], 0, "zero-data",
                       (0.0, 0.0), "all-zero data: (0, 0) is a minimizer")

    norm = power_iteration(sysm.as_linear_operator(), cfg.power_iterations, cfg.seed)
    # power iteration approaches the norm from below; pad slightly
    L = norm * 1.01
    tau = sigma = cfg.step_safety / L
    a1 = 1.0 / sysm.g1 ** 2
    a2 = cfg.alpha1 / sysm.g2 ** 2
    b1 = sysm.g1 * u
    tv_radius = cfg.alpha2 / sysm.g3
    shrink = tau * cfg.alpha3 * sysm.s_v

    y1 = np.zeros(sysm.nd)
    y2 = np.zeros(sysm.nv)
    y3 = np.zeros(2 * sysm.nc)
    Kx = sysm.forward(x)
    Kx_bar = Kx
    trace = []
    reason = "max-iterations"
    its = 0
    for its in range(1, cfg.max_iterations + 1):
        # dual step
        q1 = y1 + sigma * Kx_bar[0]
        y1 = (q1 - sigma * b1) / (1.0 + sigma / a1)
        q2 = y2 + sigma * Kx_bar[1]
        y2 = q2 / (1.0 + sigma / a2)
        q3 = (y3 + sigma * Kx_bar[2]).reshape(2, -1)
        mag = np.sqrt(q3[0] ** 2 + q3[1] ** 2)
        q3 = q3 / np.maximum(1.0, mag / tv_radius)
        y3 = q3.ravel()
        # primal step
        z = x - tau * sysm.adjoint(y1, y2, y3)
        x_new = np.empty_like(x)
        x_new[: sysm.nc] = np.maximum(z[: sysm.nc], 0.0)
        x_new[sysm.nc:] = np.maximum(z[sysm.nc:] - shrink, 0.0)
        Kx_new = sysm.forward(x_new)
        Kx_bar = tuple(2.0 * a - b for a, b in zip(Kx_new, Kx))
        change = np.linalg.norm(x_new - x)
        scale = max(np.linalg.norm(x_new), 1e-300)
        x, Kx = x_new, Kx_new
        obj = _objective_from(Kx, x, sysm, u, cfg)
        if not np.isfinite(obj):
            raise DivergenceError(f"objective became non-finite at iteration {its} "
                                  f"(tau={tau:.3e}, sigma={sigma:.3e})")
        trace.append(obj)
        if change / scale < cfg.tolerance:
            reason = "converged"
            break
    return _result(bundle, sysm, x, trace, its, reason, (tau, sigma))


# ---------------------------------------------------------------------------
# parameter sweep


def alpha1_grid() -> np.ndarray:
    """``2 * 10^i`` for i = 1..8."""
    return np.array([2.0 * 10.0 ** i for i in range(1, 9)])


def alpha2_grid() -> np.ndarray:
    """``0.1^(5 - 0.2 i)`` for i = 0..19."""
    return np.array([0.1 ** (5.0 - 0.2 * i) for i in range(20)])


@dataclass
class SweepRow:
    method: str
    alpha1: float
    alpha2: float
    alpha3: float
    ssim: float
    psnr: float
    iterations: int
    seconds: float
    i1: int
    i2: int


@dataclass
class SweepResult:
    rows: list
    best_ssim: SweepRow
    best_psnr: SweepRow
    results: dict = field(default_factory=dict)  # (i1, i2) -> ReconResult when kept


def _cell(args):
    bundle, data, cfg, reference, i1, i2, keep = args
    t0 = time.perf_counter()
    res = pdhg_solve(bundle, data, cfg)
    secs = time.perf_counter() - t0
    est = res.c0_estimate
    row = SweepRow(cfg.method, cfg.alpha1, cfg.alpha2, cfg.alpha3, ssim(est, reference),
                   psnr(est, reference), res.iterations, secs, i1, i2)
    return row, (res if keep else None)


def _argmax(rows, key):
    best = rows[0]
    for r in rows[1:]:
        if getattr(r, key) > getattr(best, key):
            best = r
    return best


def sweep(bundle: OperatorBundle, data, alpha1_values, alpha2_values, alpha3: float,
          reference: ConcentrationImage, base: SolveConfig | None = None,
          workers: int = 1, keep_results: bool = False) -> SweepResult:
    """Solve on the full ``alpha1 x alpha2`` grid and pick SSIM / PSNR maximizers.

    Rows are ordered by ``(alpha1 index, alpha2 index)``; ties in the argmax go
    to the earliest row.  Results do not depend on ``workers``.
    """
    a1s, a2s = list(alpha1_values), list(alpha2_values)
    if not a1s or not a2s:
        raise DomainError("parameter grids must be nonempty")
    if reference.grid != bundle.grid:
        raise DomainError("reference image must live on the reconstruction grid")
    base = base or SolveConfig(1.0, 1.0, method=bundle.method)
    jobs = []
    for i1, a1 in enumerate(a1s):
        for i2, a2 in enumerate(a2s):
            kw = asdict(base)
            kw.update(alpha1=float(a1), alpha2=float(a2), alpha3=float(alpha3),
                      method=bundle.method)
            jobs.append((bundle, data, SolveConfig(**kw), reference, i1, i2, keep_results))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_cell, jobs))
    else:
        out = [_cell(j) for j in jobs]
    rows = [r for r, _ in out]
    results = {(r.i1, r.i2): res for r, res in out if res is not None}
    return SweepResult(rows, _argmax(rows, "ssim"), _argmax(rows, "psnr"), results)
