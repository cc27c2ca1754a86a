"""
测试共享夹具: 场景、相机与运行配置
"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from monohydra.config import load_run_config  # noqa: E402
from monohydra.model_types import SceneSpec, MappingConfig  # noqa: E402
from monohydra.tools.sim_world import load_scene_spec  # noqa: E402
from monohydra.utils.geometry import CameraIntrinsics  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end pipeline runs")


@pytest.fixture
def repo_root() -> str:
    return ROOT


@pytest.fixture
def principal_camera() -> CameraIntrinsics:
    """fx=fy=100, 主点在原点"""
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=0.0, cy=0.0, width=64, height=48)


@pytest.fixture
def sim_camera() -> CameraIntrinsics:
    return CameraIntrinsics(fx=120.0, fy=120.0, cx=80.0, cy=60.0, width=160, height=120)


@pytest.fixture
def tiny_camera() -> CameraIntrinsics:
    return CameraIntrinsics(fx=40.0, fy=40.0, cx=16.0, cy=12.0, width=32, height=24)


@pytest.fixture
def two_rooms_spec() -> SceneSpec:
    return load_scene_spec(os.path.join(ROOT, "scenes", "two_rooms.json"))


@pytest.fixture
def dynamic_spec() -> SceneSpec:
    return load_scene_spec(os.path.join(ROOT, "scenes", "dynamic_office.json"))


@pytest.fixture
def static_spec() -> SceneSpec:
    return load_scene_spec(os.path.join(ROOT, "scenes", "static_room.json"))


@pytest.fixture
def mapping_cfg() -> MappingConfig:
    return MappingConfig()


@pytest.fixture
def config_path():
    def _path(name: str) -> str:
        return os.path.join(ROOT, "configs", name)

    return _path


@pytest.fixture
def short_run_config():
    """短序列配置工厂: 默认 2 秒, 可追加 --set 覆盖"""

    def _make(*overrides: str, config: str = None):
        base = [f"scene={os.path.join(ROOT, 'scenes', 'two_rooms.json')}", "sim.duration=2.0"]
        return load_run_config(config, base + list(overrides))

    return _make


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
