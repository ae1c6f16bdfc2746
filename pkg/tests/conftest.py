import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def textured():
    """Smooth, non-periodic 64x64 test image with structure at several scales."""
    g = np.random.default_rng(7)
    ii, jj = np.meshgrid(np.arange(64), np.arange(64), indexing="ij")
    noise = g.random((64, 64))
    noise = (noise + np.roll(noise, 1, 0) + np.roll(noise, 1, 1) + np.roll(noise, (1, 1), (0, 1))) / 4
    img = 0.5 + 0.2 * np.sin(ii / 5.0) * np.cos(jj / 7.0) + 0.1 * noise
    img += 0.2 * ((ii - 30) ** 2 + (jj - 36) ** 2 < 150)
    return ((img - img.min()) / (img.max() - img.min())).astype(np.float32)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES
    if LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
