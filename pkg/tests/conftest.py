import numpy as np
import pytest

from puppetmap import calibration
from puppetmap.geometry import pose_from_mm
from puppetmap.model import load_demo_model


@pytest.fixture(scope="session")
def model():
    return load_demo_model()


@pytest.fixture(scope="session")
def gamma_d():
    return calibration.reference_setup().depth


@pytest.fixture
def front_pose():
    # fronto-parallel, 2 m in front of the depth camera
    return pose_from_mm([0.0, 0.0, 2000.0, 0.0, 0.0, 0.0])


@pytest.fixture
def zero_q():
    return np.zeros((4, 3))


def random_rotation_vector(rng, max_angle=np.pi - 1e-6, min_angle=1e-6):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(min_angle, max_angle)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
