import os

import pytest


# force testing config
os.environ["MONOFCW_THREADS"] = "2"
os.environ.pop("MONOFCW_CALIBRATION", None)

# now we can import monofcw stuff
from monofcw import config, formats  # noqa: E402
from tests import factories  # noqa: E402


# bind the log handler now, not to the first test's captured stderr
config.setup_logging()


@pytest.fixture
def params():
    return factories.camera()


@pytest.fixture
def calibration_file(tmp_path, params):
    path = tmp_path / "camera.txt"
    formats.write_calibration(path, params)
    return path


@pytest.fixture
def served_calibration(calibration_file, monkeypatch):
    monkeypatch.setattr(config, "CALIBRATION", calibration_file)
    return calibration_file


@pytest.fixture(scope="session")
def vehicle_plan():
    return factories.vehicle_plan(factories.camera())


@pytest.fixture(scope="session")
def classifier():
    return factories.trained_classifier()
