import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphpillars.config import ModelSection, RunConfig, SceneSection, TrainSection  # noqa: E402

SMALL_SCENE = SceneSection(extent=16.0, car_count=(1, 2), truck_bus_count=(0, 0), pedestrian_count=(0, 2),
                           bicycle_count=(0, 1))
SMALL_MODEL = ModelSection(extent=16.0, point_width=8, pillar_width=8, stem_channels=8, stage_channels=(8, 8, 8, 8),
                           stage_blocks=(1, 1, 1, 1), fpn_channels=8, head_width=8)


@pytest.fixture
def small_config() -> RunConfig:
    return RunConfig(scene=SMALL_SCENE, model=SMALL_MODEL, train=TrainSection(epochs=2, batch_size=2, lr=3e-3))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import lines

    rows = lines()
    if rows:
        terminalreporter.section("acceptance criteria")
        for row in rows:
            terminalreporter.write_line(row)
