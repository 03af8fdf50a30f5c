import warnings

import numpy as np
import pytest

from histopet.dataset import DESK_GEOMETRY, DESK_GRID
from histopet.phantoms import build_phantom, sphere_set
from histopet.simulate import EfficiencyTable, SimulationConfig, simulate_events


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    """Record ``(criterion, ok, detail)``; one line each is printed at the end of the run."""
    def record(number, ok, detail):
        _ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(autouse=True)
def _quiet_scale_warning():
    # 64x64 slices only support three MS-SSIM scales; that warning is expected here
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*MS-SSIM scales.*")
        yield


@pytest.fixture(scope="session")
def geometry():
    return DESK_GEOMETRY


@pytest.fixture(scope="session")
def grid():
    return DESK_GRID


@pytest.fixture(scope="session")
def phantom(grid):
    spec = sphere_set(body_radius=100.0, body_half_length=11.9, z=-0.8)
    return build_phantom(spec, grid)


@pytest.fixture(scope="session")
def efficiencies(geometry):
    return EfficiencyTable.random(geometry, 3)


@pytest.fixture(scope="session")
def small_events(phantom, geometry, efficiencies):
    activity, mu = phantom
    cfg = SimulationConfig(prompts=50_000, randoms_fraction=0.1, seed=11)
    return simulate_events(activity, mu, geometry, efficiencies, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
