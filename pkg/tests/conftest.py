from __future__ import annotations

import pytest

from src.core.dataset import BuildStats, build_samples
from src.core.models import BehaviorSpec, SampleSpec, SceneSpec, SpanConfig
from src.core.synth import generate

SMALL_SCENE = {
    "seed": 42,
    "room_extent_m": [4.0, 4.0, 2.6],
    "wall_point_density": 5,
    "object_clusters": [
        {"center": [0.9, 0.0, 1.2], "radius": 0.15, "point_count": 300},
        {"center": [0.7, 0.5, 1.0], "radius": 0.1, "point_count": 200},
        {"center": [0.6, -0.4, 0.9], "radius": 0.1, "point_count": 200},
    ],
}

SMALL_BEHAVIOR = {
    "seed": 7,
    "duration_s": 10.0,
    "walk": {"waypoints": [[0.0, 0.0, 1.6], [0.1, 0.0, 1.6]], "speed_mps": 0.02},
    "gaze_program": [
        {"target": t, "fixation_s": 1.5, "saccade_s": 0.1} for t in (0, 1, 2, 0, 1, 2)
    ],
}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def small_scene() -> SceneSpec:
    return SceneSpec.model_validate(SMALL_SCENE)


@pytest.fixture(scope="session")
def small_behavior() -> BehaviorSpec:
    return BehaviorSpec.model_validate(SMALL_BEHAVIOR)


@pytest.fixture(scope="session")
def span_cfg() -> SpanConfig:
    return SpanConfig(cube_length_m=3.2, resolution=8)


@pytest.fixture(scope="session")
def sample_spec(span_cfg) -> SampleSpec:
    return SampleSpec(
        t_past_s=2.0, t_future_s=2.0, stride_s=1.0, frame_duration_s=1.0, frame_quantum_s=0.1, cfg=span_cfg
    )


@pytest.fixture(scope="session")
def synthetic(small_scene, small_behavior, span_cfg):
    return generate(small_scene, small_behavior, 0.1, span_cfg, tag="desk")


@pytest.fixture(scope="session")
def streams(synthetic):
    return synthetic[0]


@pytest.fixture(scope="session")
def truth(synthetic):
    return synthetic[1]


@pytest.fixture(scope="session")
def build_stats(streams, sample_spec):
    stats = BuildStats()
    samples = build_samples(streams, sample_spec, threads=2, stats=stats)
    return samples, stats


@pytest.fixture(scope="session")
def samples(build_stats):
    return build_stats[0]
