from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from stitchsim.digital_thread import DigitalThread, SeamSpec, load_thread

FIXTURES = Path(resources.files("stitchsim") / "fixtures")
FIXTURE_NAMES = ("straight_panel", "back_panel_arc", "spline_panel")


def fixture_path(name, ext="dxf"):
    return FIXTURES / f"{name}.{ext}"


def fixture_thread(name):
    return load_thread(fixture_path(name), fixture_path(name, "json"))


@pytest.fixture(scope="session")
def straight():
    return fixture_thread("straight_panel")


@pytest.fixture(scope="session")
def arc():
    return fixture_thread("back_panel_arc")


@pytest.fixture(scope="session")
def spline():
    return fixture_thread("spline_panel")


@pytest.fixture(scope="session")
def square40():
    """40 x 40 mm square garment with a seam 20 mm in from the bottom edge."""
    contour = np.array([[0, 0], [40, 0], [40, 40], [0, 40], [0, 0]], dtype=float)
    return DigitalThread(contour, np.array([[5.0, 20.0], [35.0, 20.0]]), SeamSpec())


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
