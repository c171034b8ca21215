import tempfile
from pathlib import Path

import pytest


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line(
        "markers",
        "basic: mark test as a basic test that runs in seconds",
    )
    config.addinivalue_line(
        "markers", "slow: mark test as a full scale run taking minutes"
    )


@pytest.fixture
def temp_dir():
    """Provide a temporary directory that is cleaned up after the test."""
    with tempfile.TemporaryDirectory() as tmpdirname:
        yield Path(tmpdirname)


@pytest.fixture
def sweep_config_file(temp_dir):
    """Write a tiny heterogeneity sweep configuration."""
    file_path = temp_dir / "sweep_het.cfg"
    file_path.write_text(
        "\n".join(
            [
                'experiment = "sweep-heterogeneity"',
                "seeds = [1, 2]",
                "grid = [0.0, 5.0, 10.0]",
                "model.d = 6",
                "optimizer.batch_size = 60",
                "optimizer.steps = 5",
                f'output_dir = "{(temp_dir / "out").as_posix()}"',
            ]
        )
        + "\n"
    )
    return file_path
