import numpy as np
import pytest

from rectidic.image import GrayImage
from rectidic.synthesis import speckle_image


@pytest.fixture(scope="session")
def speckle512():
    return speckle_image(512, 512, seed=0)


@pytest.fixture(scope="session")
def speckle128():
    return speckle_image(128, 128, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def smooth_image(h=64, w=64):
    """Low-frequency test pattern for interpolation roundtrips."""
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    return GrayImage(0.5 + 0.2 * np.sin(xx / 7.0) * np.cos(yy / 9.0) + 0.1 * np.sin((xx + yy) / 13.0))


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Records one PASS/FAIL line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def log(number: int, title: str, ok: bool, detail: str) -> None:
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        lines.append(line)
        print(line)

    return log


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
