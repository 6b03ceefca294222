import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dynffl.errors import DomainError
from dynffl.metrics import SsimParams, psnr, ssim, ssim_map
from dynffl.phantom import ConcentrationImage, ImageGrid

RNG = np.random.default_rng(5)


class TestPsnr:
    def test_identical(self):
        x = RNG.random((8, 8))
        assert psnr(x, x) == math.inf

    @pytest.mark.parametrize("n", [4, 16, 33])
    def test_single_pixel(self, n):
        ref = np.zeros((n, n))
        ref[n // 2, n // 3] = 1.0
        assert psnr(np.zeros((n, n)), ref) == pytest.approx(10 * math.log10(n * n), rel=1e-14)

    def test_peak_doubling(self):
        x, r = RNG.random((10, 10)), RNG.random((10, 10))
        assert psnr(x, r, 2.0) - psnr(x, r, 1.0) == pytest.approx(20 * math.log10(2), rel=1e-12)

    def test_decreasing_with_noise(self):
        ref = RNG.random((32, 32))
        noise = np.random.default_rng(9).standard_normal((32, 32))
        vals = [psnr(ref + s * noise, ref) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_errors(self):
        with pytest.raises(DomainError):
            psnr(np.zeros((3, 3)), np.zeros((4, 4)))
        with pytest.raises(DomainError):
            psnr(np.zeros((3, 3)), np.ones((3, 3)), peak=0.0)
        a = ConcentrationImage(ImageGrid(1.0, 4), np.zeros((4, 4)))
        b = ConcentrationImage(ImageGrid(2.0, 4), np.zeros((4, 4)))
        with pytest.raises(DomainError):
            psnr(a, b)


class TestSsim:
    def test_params(self):
        p = SsimParams()
        assert p.window().shape == (11, 11)
        assert p.window().sum() == pytest.approx(1.0, rel=1e-15)
        assert p.c1 == pytest.approx(1e-4) and p.c2 == pytest.approx(9e-4)
        with pytest.raises(DomainError):
            SsimParams(size=10)

    def test_identical_exact(self):
        x = RNG.random((20, 20))
        assert ssim(x, x) == 1.0
        z = np.zeros((12, 12))
        assert ssim(z, z) == 1.0

    def test_constant_closed_form(self):
        # constant images: variances vanish, only the luminance term remains
        a, c = 0.3, 0.2
        ref = np.full((16, 16), a)
        c1 = SsimParams().c1
        want = (2 * a * (a + c) + c1) / (a * a + (a + c) ** 2 + c1)
        assert ssim(ref + c, ref) == pytest.approx(want, rel=1e-9)

    def test_symmetric(self):
        x, r = RNG.random((24, 24)), RNG.random((24, 24))
        assert ssim(x, r) == pytest.approx(ssim(r, x), rel=1e-13)

    def test_map_shape(self):
        assert ssim_map(RNG.random((20, 30)), RNG.random((20, 30))).shape == (10, 20)

    def test_skimage_cross_check(self):
        skm = pytest.importorskip("skimage.metrics")
        x, r = RNG.random((40, 40)), RNG.random((40, 40))
        y = 0.7 * r + 0.3 * x
        for a in (x, y):
            ref = skm.structural_similarity(a, r, data_range=1.0, gaussian_weights=True,
                                            sigma=1.5, use_sample_covariance=False)
            # skimage crops the 5-pixel border of its map, which is our valid map
            assert ssim(a, r) == pytest.approx(float(np.mean(ssim_map(a, r))), rel=1e-12)
            assert abs(ssim(a, r) - ref) < 1e-12

    def test_too_small(self):
        with pytest.raises(DomainError):
            ssim(np.zeros((8, 8)), np.ones((8, 8)))
        with pytest.raises(DomainError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, (12, 12), elements=st.floats(-5, 5)),
           arrays(np.float64, (12, 12), elements=st.floats(-5, 5)))
    def test_range(self, x, r):
        v = ssim(x, r)
        assert -1.0 <= v <= 1.0
