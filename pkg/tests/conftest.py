import sys

import numpy as np
import pytest

from fpplab.sim import SystemGeometry, random_scene_list, sample_from_arrays, simulate_scene
from fpplab.tpu import FrequencySet


@pytest.fixture(scope="session")
def desk_geom():
    return SystemGeometry()


@pytest.fixture(scope="session")
def toy_samples(desk_geom):
    """Four small noiseless scenes held in memory (3 train, 1 val)."""
    freqs = FrequencySet((1, 4, 16))
    scenes = random_scene_list(4, ("low_reflectivity", "isolated_blobs"), desk_geom, seed=5)
    return [sample_from_arrays(f"t{i}", "train" if i < 3 else "val",
                               simulate_scene(s, desk_geom, freqs, seed=i))
            for i, s in enumerate(scenes)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
