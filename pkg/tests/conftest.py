import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dmdxtalk.config import OpticalConfig
from dmdxtalk.hologram import AddressingTarget

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_cfg():
    """Coarse train: 160 x 206 FP1 pixels, 256^2 IP1 grid."""
    return OpticalConfig(superpixel=10, ip1_grid=256)


@pytest.fixture(scope="session")
def small_target():
    return AddressingTarget((0.4e-3, 0.0), 12e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_scene(small_cfg, small_target):
    """Aberrated coarse scene with a fixed residual (no tuning)."""
    from dmdxtalk.scenario import build_scene

    return build_scene(small_cfg, small_target, seed=1, residual_rms=0.3)


@pytest.fixture(scope="session")
def fine_scene():
    """Full-resolution scene; IP1 mirrors are smaller than the spot, as pupils need."""
    from dmdxtalk.scenario import build_scene

    return build_scene(OpticalConfig(superpixel=1, ip1_grid=512), seed=0, residual_rms=0.3)


# acceptance verdicts, printed once at the end of the run
VERDICTS: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(VERDICTS):
        terminalreporter.write_line(VERDICTS[key])
