import numpy as np
import pytest
from hypothesis import settings
from scipy import ndimage

from jologcn.numerics import bilinear_sample

settings.register_profile("default", deadline=None, max_examples=30)
settings.load_profile("default")


def smooth_texture(rng, size=64, sigma=2.0):
    """Band-limited random texture rescaled to [0.1, 0.9]."""
    tex = ndimage.gaussian_filter(rng.random((size, size)), sigma)
    tex = (tex - tex.min()) / (tex.max() - tex.min())
    return 0.1 + 0.8 * tex


def shifted_pair(tex, dx, dy, h=32, w=32, origin=16.0):
    """Patch pair where the second patch shows the content moved by (dx, dy)."""
    yy, xx = np.mgrid[0:h, 0:w] + origin
    return bilinear_sample(tex, xx, yy), bilinear_sample(tex, xx - dx, yy - dy)


def rotated_pair(tex, degrees, h=32, w=32, origin=16.0):
    """Second patch is the first rotated by ``degrees`` about the patch centre.

    Returns the pair and the forward motion field (u, v) of the rotation.
    """
    a = np.deg2rad(degrees)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cx, cy = (w - 1) / 2, (h - 1) / 2
    rx, ry = xx - cx, yy - cy
    # content at p moves to R p; the second image samples the first at R^-1 p
    bx = np.cos(a) * rx + np.sin(a) * ry
    by = -np.sin(a) * rx + np.cos(a) * ry
    prev = bilinear_sample(tex, xx + origin, yy + origin)
    nxt = bilinear_sample(tex, bx + cx + origin, by + cy + origin)
    u = np.cos(a) * rx - np.sin(a) * ry - rx
    v = np.sin(a) * rx + np.cos(a) * ry - ry
    return prev, nxt, u, v


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria append (name, passed, detail); printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
