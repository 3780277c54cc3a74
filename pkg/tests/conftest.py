import numpy as np
import pytest
from hypothesis import settings

from voxmc.domain import AIR, BACKGROUND, VoxelGrid

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def homogeneous_grid(n=10, medium=BACKGROUND, voxel_size=1.0):
    return VoxelGrid((n, n, n), voxel_size, np.ones((n, n, n), dtype=np.int32), (AIR, medium))


@pytest.fixture
def small_grid():
    return homogeneous_grid()


# filled by test_acceptance.py, echoed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
