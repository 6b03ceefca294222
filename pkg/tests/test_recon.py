import dataclasses
import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import aslinearoperator

from dynffl.errors import ConfigError, DomainError
from dynffl.forward import dynamic_forward_direct, normalize, reduced_sinogram
from dynffl.motion import IdentityMotion, PaperMotion
from dynffl.phantom import ConcentrationImage, ImageGrid, make_disk_phantom
from dynffl.physics import ParticleModel
from dynffl.recon import (
    SolveConfig,
    _ScaledSystem,
    alpha1_grid,
    alpha2_grid,
    build_system,
    divergence,
    gradient,
    objective,
    objective_terms,
    pdhg_solve,
    power_iteration,
    radon_matrix,
    sweep,
    tv,
)

from conftest import small_problem, small_scanner

RNG = np.random.default_rng(11)


def _inner(a, b):
    return float(np.dot(np.ravel(a), np.ravel(b)))


def _adjoint_gap(fwd, adj, nin, nout, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(nin)
    y = rng.standard_normal(nout)
    Ax = fwd(x)
    ATy = adj(y)
    lhs, rhs = _inner(Ax, y), _inner(x, ATy)
    return abs(lhs - rhs) / max(np.linalg.norm(Ax) * np.linalg.norm(y), 1e-300)


@pytest.fixture(scope="module")
def mass_problem():
    return small_problem("M2", "mass")


@pytest.fixture(scope="module")
def intensity_problem():
    return small_problem("M3", "intensity")


class TestAssembly:
    def test_shapes(self, mass_problem):
        b, data, _ = mass_problem
        assert b.radon_matrix.shape == (8 * 17, 256)
        assert len(b.data_matrices) == 2
        assert all(B.shape == (136, 136) for B in b.data_matrices)
        assert data.values.size == 2 * 136

    def test_radon_rows_match_forward(self):
        cfg = small_scanner(p=4, N=12)
        g = ImageGrid(cfg.fov_half_width, 24)
        img = make_disk_phantom(g, radius=0.3 * cfg.fov_half_width)
        m = PaperMotion(cfg, preservation="intensity")
        Rm = radon_matrix(cfg, m, g)
        np.testing.assert_allclose(Rm @ img.values.ravel(),
                                   reduced_sinogram(img, m, cfg).values.ravel(),
                                   rtol=1e-12, atol=1e-18)

    def test_identity_m1_equals_m2(self):
        cfg = small_scanner(p=4, N=12)
        g = ImageGrid(cfg.fov_half_width, 16)
        a = build_system(cfg, IdentityMotion(), g, "M1", 1.0).radon_matrix
        b = build_system(cfg, IdentityMotion(), g, "M2", 1.0).radon_matrix
        assert (a != b).nnz == 0

    def test_mass_m3_equals_m2(self):
        cfg = small_scanner(p=4, N=12)
        g = ImageGrid(cfg.fov_half_width, 16)
        m = PaperMotion(cfg, preservation="mass")
        a = build_system(cfg, m, g, "M2", 1e-8)
        b = build_system(cfg, m, g, "M3", 1e-8)
        assert (a.radon_matrix != b.radon_matrix).nnz == 0
        for x, y in zip(a.data_matrices, b.data_matrices):
            assert (x != y).nnz == 0

    def test_intensity_m3_differs(self):
        cfg = small_scanner(p=4, N=12)
        g = ImageGrid(cfg.fov_half_width, 16)
        m = PaperMotion(cfg, preservation="intensity")
        a = build_system(cfg, m, g, "M2", 1e-8)
        b = build_system(cfg, m, g, "M3", 1e-8)
        assert (a.data_matrices[0] != b.data_matrices[0]).nnz > 0

    def test_invalid(self):
        cfg = small_scanner(p=2, N=8)
        g = ImageGrid(cfg.fov_half_width, 8)
        with pytest.raises(DomainError):
            build_system(cfg, IdentityMotion(), g, "M4", 1.0)
        with pytest.raises(DomainError):
            build_system(cfg, IdentityMotion(), g, "M1", 0.0)


class TestAdjoints:
    def test_radon(self, mass_problem):
        R = mass_problem[0].radon_matrix
        assert _adjoint_gap(lambda x: R @ x, lambda y: R.T @ y, *R.shape[::-1]) < 1e-10

    def test_data(self, intensity_problem):
        B = intensity_problem[0].stacked_data_matrix
        assert _adjoint_gap(lambda x: B @ x, lambda y: B.T @ y, *B.shape[::-1]) < 1e-10

    def test_gradient_divergence(self):
        n = 13
        gap = _adjoint_gap(lambda x: gradient(x.reshape(n, n)),
                           lambda y: -divergence(y.reshape(2, n, n)), n * n, 2 * n * n)
        assert gap < 1e-12

    def test_stacked(self, intensity_problem):
        sysm = _ScaledSystem(intensity_problem[0], SolveConfig(2e3, 1e-3, method="M3"))
        op = sysm.as_linear_operator()
        assert _adjoint_gap(op.matvec, op.rmatvec, op.shape[1], op.shape[0]) < 1e-10


class TestTV:
    def test_constant(self):
        assert tv(np.full((5, 5), 3.0)) == 0.0

    def test_single_pixel(self):
        c = np.zeros((3, 3))
        c[1, 1] = 1.0
        # center pixel (1, 1) has gradient (-1, -1); left and upper neighbours +1 each
        assert tv(c) == pytest.approx(2.0 + math.sqrt(2.0), rel=1e-15)

    def test_homogeneous(self):
        c = RNG.random((9, 9))
        assert tv(-2.5 * c) == pytest.approx(2.5 * tv(c), rel=1e-14)

    def test_image_input(self):
        img = make_disk_phantom(ImageGrid(1e-3, 16), radius=4e-4)
        assert tv(img) == tv(img.values) > 0


class TestPowerIteration:
    def test_identity(self):
        assert power_iteration(np.eye(10), 5) == pytest.approx(1.0, abs=1e-9)

    def test_diagonal(self):
        assert power_iteration(np.diag([1.0, 2.0, 3.0]), 200) == pytest.approx(3.0, abs=1e-6)

    def test_random_matrix_svd(self):
        A = np.random.default_rng(3).standard_normal((50, 30))
        want = np.linalg.svd(A, compute_uv=False)[0]
        assert power_iteration(A, 500) == pytest.approx(want, rel=1e-6)

    def test_zero(self):
        assert power_iteration(np.zeros((4, 3)), 10) == 0.0

    def test_deterministic_and_monotone(self):
        A = np.random.default_rng(4).standard_normal((40, 40))
        vals = [power_iteration(A, k, seed=5) for k in (1, 2, 5, 10, 50)]
        assert vals == [power_iteration(A, k, seed=5) for k in (1, 2, 5, 10, 50)]
        assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))

    def test_sparse_and_operator(self):
        A = sp.random(30, 20, density=0.3, random_state=1, format="csr")
        assert power_iteration(A, 300) == pytest.approx(
            power_iteration(aslinearoperator(A), 300), rel=1e-14)

    def test_bad_iterations(self):
        with pytest.raises(DomainError):
            power_iteration(np.eye(2), 0)


class TestSolveConfig:
    def test_invalid_all_reported(self):
        with pytest.raises(ConfigError) as exc:
            SolveConfig(alpha1=0.0, alpha2=-1.0, alpha3=-1.0, method="M9")
        paths = {p for p, _ in exc.value.problems}
        assert {"solve.alpha1", "solve.alpha2", "solve.alpha3", "solve.method"} <= paths

    def test_grids(self):
        a1 = alpha1_grid()
        assert len(a1) == 8 and a1[0] == 20.0 and a1[-1] == pytest.approx(2e8)
        a2 = alpha2_grid()
        assert len(a2) == 20 and a2[0] == pytest.approx(1e-5)
        assert a2[-1] == pytest.approx(0.1 ** 1.2)
        assert np.all(np.diff(a2) > 0)


class TestObjective:
    def test_zero(self, mass_problem):
        b, data, _ = mass_problem
        z = np.zeros_like(data.values)
        cfg = SolveConfig(10.0, 1.0)
        assert objective(b, np.zeros(b.pixel_count), np.zeros(b.sinogram_size), z, cfg) == 0.0

    def test_ground_truth_pair(self):
        # with matching sim and recon grids and the literal reduced samples, the
        # coupling term vanishes; the data residual is the reduced-sinogram model error
        cfg = small_scanner(p=8, N=16)
        R = cfg.fov_half_width
        g = ImageGrid(R, 24)
        m = PaperMotion(cfg, preservation="mass")
        c0 = make_disk_phantom(g, radius=0.25 * R)
        data, u = normalize(dynamic_forward_direct(c0, m, cfg))
        b = build_system(cfg, m, g, "M2", u)
        v = reduced_sinogram(c0, m, cfg).values.ravel()
        terms = objective_terms(b, c0, v, data, SolveConfig(1.0, 1.0))
        assert terms["coupling"] < 1e-20 * max(1.0, float(v @ v))
        assert terms["tv"] == pytest.approx(tv(c0), rel=1e-14)
        resid = math.sqrt(2 * terms["data"]) / np.linalg.norm(data.values)
        assert resid < 0.5

    def test_alpha2_increases(self, mass_problem):
        b, data, ref = mass_problem
        v = np.abs(RNG.standard_normal(b.sinogram_size))
        f = [objective(b, ref, v, data, SolveConfig(1.0, a2)) for a2 in (0.1, 0.2, 0.4)]
        assert f[0] < f[1] < f[2]

    def test_shape_mismatch(self, mass_problem):
        b, data, ref = mass_problem
        with pytest.raises(DomainError):
            objective(b, ref, np.zeros(3), data, SolveConfig(1.0, 1.0))


class TestPdhg:
    def test_zero_data(self, mass_problem):
        b, data, _ = mass_problem
        res = pdhg_solve(b, np.zeros_like(data.values), SolveConfig(10.0, 1.0))
        assert res.termination == "zero-data" and res.objective == 0.0
        assert not res.c0_estimate.values.any() and not res.sinogram_estimate.values.any()
        assert res.note

    def test_feasible_and_monotone_windows(self, mass_problem):
        b, data, _ = mass_problem
        res = pdhg_solve(b, data, SolveConfig(2e3, 1e-3, max_iterations=600, tolerance=0))
        assert res.c0_estimate.values.min() >= 0 and res.sinogram_estimate.values.min() >= 0
        tr = res.objective_trace
        assert len(tr) == 600 and np.all(np.isfinite(tr))
        windows = tr[100:].reshape(-1, 50)[:, -1]
        assert np.all(np.diff(windows) <= 1e-9)

    def test_trace_matches_objective(self, intensity_problem):
        b, data, _ = intensity_problem
        cfg = SolveConfig(2e3, 1e-3, alpha3=1e-4, method="M3", max_iterations=50)
        res = pdhg_solve(b, data, cfg)
        # the reported estimate is the projected final iterate, which is feasible already
        f = objective(b, res.c0_estimate, res.sinogram_estimate, data, cfg)
        assert res.objective == pytest.approx(f, rel=1e-10)

    def test_deterministic(self, mass_problem):
        b, data, _ = mass_problem
        cfg = SolveConfig(2e3, 1e-3, max_iterations=80)
        a, c = pdhg_solve(b, data, cfg), pdhg_solve(b, data, cfg)
        np.testing.assert_array_equal(a.c0_estimate.values, c.c0_estimate.values)
        np.testing.assert_array_equal(a.objective_trace, c.objective_trace)

    def test_converged_flag(self, mass_problem):
        b, data, _ = mass_problem
        res = pdhg_solve(b, data, SolveConfig(2e3, 1e-2, max_iterations=20000, tolerance=1e-5))
        assert res.termination == "converged" and res.iterations < 20000

    def test_mass_m3_bitwise_m2(self):
        b2, data, _ = small_problem("M2", "mass")
        b3, _, _ = small_problem("M3", "mass")
        cfg = SolveConfig(2e3, 1e-3, max_iterations=60)
        r2 = pdhg_solve(b2, data, cfg)
        r3 = pdhg_solve(b3, data, dataclasses.replace(cfg, method="M3"))
        np.testing.assert_array_equal(r2.c0_estimate.values, r3.c0_estimate.values)

    def test_scaling_consistency(self):
        # scaling the particle concentration scales recording, u* and K alike
        cfg = small_scanner(p=6, N=12)
        R = cfg.fov_half_width
        g = ImageGrid(R, 16)
        m = PaperMotion(cfg)
        c0 = make_disk_phantom(ImageGrid(R, 24), radius=0.25 * R)
        sols = []
        for k in (1.0, 10.0):
            pm = ParticleModel(concentration_scale=1e19 * k)
            sc = dataclasses.replace(cfg, particle=pm)
            data, u = normalize(dynamic_forward_direct(c0, m, sc))
            b = build_system(sc, m, g, "M2", u)
            sols.append(pdhg_solve(b, data, SolveConfig(2e3, 1e-3, max_iterations=200)))
        a, c = sols
        np.testing.assert_allclose(a.c0_estimate.values, c.c0_estimate.values,
                                   rtol=0, atol=1e-8 * a.c0_estimate.values.max())

    def test_recovers_disk(self, mass_problem):
        b, data, ref = mass_problem
        res = pdhg_solve(b, data, SolveConfig(2e3, 1e-3, max_iterations=1000))
        err = np.linalg.norm(res.c0_estimate.values - ref.values) / np.linalg.norm(ref.values)
        assert err < 0.6


class TestSweep:
    def test_single_cell(self, mass_problem):
        b, data, ref = mass_problem
        base = SolveConfig(1.0, 1.0, max_iterations=30)
        out = sweep(b, data, [2e3], [1e-3], 0.0, ref, base)
        assert len(out.rows) == 1
        assert out.best_ssim is out.rows[0] and out.best_psnr is out.rows[0]

    def test_grid_order_and_subset(self, mass_problem):
        b, data, ref = mass_problem
        base = SolveConfig(1.0, 1.0, max_iterations=40)
        full = sweep(b, data, [2e2, 2e3], [1e-4, 1e-3, 1e-2], 0.0, ref, base)
        assert [(r.i1, r.i2) for r in full.rows] == [(i, j) for i in range(2) for j in range(3)]
        sub = sweep(b, data, [2e3], [1e-3, 1e-2], 0.0, ref, base)
        assert sub.best_ssim.ssim <= full.best_ssim.ssim
        assert sub.best_psnr.psnr <= full.best_psnr.psnr
        cell = next(r for r in full.rows if (r.alpha1, r.alpha2) == (2e3, 1e-3))
        assert cell.ssim == sub.rows[0].ssim

    def test_workers_do_not_change_results(self, mass_problem):
        b, data, ref = mass_problem
        base = SolveConfig(1.0, 1.0, max_iterations=20)
        a = sweep(b, data, [2e2, 2e3], [1e-3], 0.0, ref, base, workers=1)
        c = sweep(b, data, [2e2, 2e3], [1e-3], 0.0, ref, base, workers=2)
        assert [r.ssim for r in a.rows] == [r.ssim for r in c.rows]

    def test_errors(self, mass_problem):
        b, data, ref = mass_problem
        with pytest.raises(DomainError):
            sweep(b, data, [], [1.0], 0.0, ref)
        other = ConcentrationImage(ImageGrid(1e-3, 16), np.zeros((16, 16)))
        with pytest.raises(DomainError):
            sweep(b, data, [1.0], [1.0], 0.0, other)
