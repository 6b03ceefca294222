import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dynffl.physics import ScannerConfig  # noqa: E402

# criterion lines recorded by test_acceptance, printed after the run
ACCEPTANCE_LINES: list = []


def small_scanner(p=8, N=40, **kw) -> ScannerConfig:
    """Default scanner with fewer angles and samples."""
    return ScannerConfig(angle_count=p, sampling_frequency=2 * 25e3 * N, **kw)


@pytest.fixture
def scanner():
    return ScannerConfig()


@pytest.fixture
def small():
    return small_scanner()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def small_problem(method="M2", preservation="mass", p=8, N=16, n_sim=32, n_rec=16,
                  radius_fraction=0.25):
    """Simulated data and assembled system for a small dynamic instance.

    Returns ``(bundle, data, reference)`` with data normalized by ``u*``.
    """
    from dynffl.forward import dynamic_forward_direct, normalize
    from dynffl.motion import PaperMotion
    from dynffl.phantom import ImageGrid, make_disk_phantom, resample
    from dynffl.recon import build_system

    cfg = small_scanner(p=p, N=N)
    R = cfg.fov_half_width
    model = PaperMotion(cfg, preservation=preservation)
    c0 = make_disk_phantom(ImageGrid(R, n_sim), radius=radius_fraction * R)
    data, u_star = normalize(dynamic_forward_direct(c0, model, cfg))
    rec_grid = ImageGrid(R, n_rec)
    bundle = build_system(cfg, model, rec_grid, method, u_star)
    return bundle, data, resample(c0, rec_grid)
