import numpy as np
import pytest

from harpcal.model import DistortionModel, half_diagonal, image_center
from harpcal.synth import HarpScene, HarpString, harp_scene, render, synth_chains

W, H = 1200, 800
# order-4 correction moving the frame corners by about 7 px
K4 = (1.0, 0.001, 0.004, 0.0007, 0.004)


def step_image(c, width=24, height=12, ss=16, lo=0.2, hi=0.8):
    """Vertical step at x = c, anti-aliased by ``ss`` box samples per pixel."""
    xs = np.arange(width)
    offs = (np.arange(ss) + 0.5) / ss - 0.5
    cover = np.mean((xs[:, None] + offs[None, :]) >= c, axis=1)
    return np.tile(lo + (hi - lo) * cover, (height, 1))


def linear_step_image(c, width=24, height=12, lo=0.2, hi=0.8):
    cover = np.clip(np.arange(width) + 0.5 - c, 0.0, 1.0)
    return np.tile(lo + (hi - lo) * cover, (height, 1))


def model_k4(width=W, height=H, k=K4, center=None):
    center = image_center(width, height) if center is None else center
    r0 = half_diagonal(width, height)
    corner = max(np.hypot(x - center[0], y - center[1]) for x in (0, width - 1) for y in (0, height - 1))
    return DistortionModel(center, k, r0, max_radius=corner)


@pytest.fixture(scope="session")
def straight_harp():
    """1200x800 undistorted harp, strings at 75 degrees."""
    return render(harp_scene(W, H, angle_deg=75.0))


@pytest.fixture(scope="session")
def distorted_harp():
    return render(harp_scene(W, H, angle_deg=75.0, distortion=model_k4()))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# order-2 correction moving the frame corners by about 5 px
K2 = (1.0, 0.002, 0.005)


def oracle_scene(model=None, n_strings=20, width=W, height=H):
    """Strings through the frame at evenly spread angles and offsets."""
    cx, cy = image_center(width, height)
    strings = []
    for i in range(n_strings):
        a = np.pi * (i + 0.5) / n_strings
        d = (np.cos(a), np.sin(a))
        off = 0.35 * height * ((i * 7) % n_strings / (n_strings - 1) - 0.5) * 2
        strings.append(HarpString((cx - off * d[1], cy + off * d[0]), d))
    return HarpScene(width, height, tuple(strings), distortion=model)


def oracle_chains(model=None, n_strings=20, points=500, noise=0.0, seed=0):
    chains, _ = synth_chains(oracle_scene(model, n_strings), points_per_string=points)
    if noise > 0:
        rng = np.random.default_rng(seed)
        chains = [(cid, p + rng.normal(0.0, noise, p.shape)) for cid, p in chains]
    return chains


# one line per acceptance criterion, replayed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
