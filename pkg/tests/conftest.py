import numpy as np
import pytest

from vlp.codec import default_database
from vlp.geometry import CameraIntrinsics
from vlp.imaging import RenderConfig
from vlp.simulator import ScenePlatform

# Lines recorded by the acceptance tests, echoed in the terminal summary.
ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"acceptance {number}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def db():
    return default_database()


@pytest.fixture
def scene():
    return ScenePlatform()


@pytest.fixture(params=["native", "compressed"])
def preset(request):
    return request.param


@pytest.fixture
def render(preset):
    return RenderConfig.preset(preset)


@pytest.fixture
def intr(preset):
    return CameraIntrinsics.preset(preset)
