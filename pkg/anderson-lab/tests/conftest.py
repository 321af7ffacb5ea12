import os
import sys

import pytest

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from point_process import PointCloud  # noqa: E402


@pytest.fixture
def two_point_cloud():
    return PointCloud.manual([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


@pytest.fixture
def cloud_file(tmp_path):
    path = tmp_path / "cloud.csv"
    path.write_text("# dim=3\n0.5,0,0\n-0.5,0,0\n0,2,0\n")
    return str(path)
