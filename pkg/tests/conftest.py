import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ssnqi import generate_stack, standard_scene


@pytest.fixture(scope="session")
def lossless_scene():
    """Small unity-efficiency scene with exact mirror symmetry."""
    return standard_scene(48, 48, 8, 8, mu=0.2, m_temp=100,
                          eta_s=1.0, eta_i=1.0, gain_jitter=0.0, seed=3)


@pytest.fixture(scope="session")
def balanced_stack():
    """eta = 0.7 both arms, 200 frames, 288x288 regions, cell 6."""
    cfg = standard_scene(288, 288, 48, 48, mu=0.1, m_temp=700,
                         eta_s=0.7, eta_i=0.7, gain_jitter=0.0, seed=11)
    frames, truth = generate_stack(cfg, 200)
    return cfg, frames, truth


@pytest.fixture(scope="session")
def poisson_arms_stack():
    """Two uncorrelated Poissonian arms (straylight only, no source)."""
    cfg = standard_scene(96, 96, 16, 16, mu=0.0, m_temp=1,
                         eta_s=1.0, eta_i=1.0, gain_jitter=0.0,
                         straylight_mean=20.0, seed=7)
    frames, truth = generate_stack(cfg, 300)
    return cfg, frames, truth


def assert_close(value, target, tol, label=""):
    assert abs(value - target) <= tol, \
        f"{label}: {value:.5f} not within {tol} of {target}"
