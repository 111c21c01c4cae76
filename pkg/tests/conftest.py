import json
import shutil
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from vrsync.retarget import default_rig

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

VECTORS = Path(__file__).parent / "vectors"
DATA = Path(__file__).resolve().parents[1] / "src" / "vrsync" / "data"


@pytest.fixture(scope="session")
def oracles():
    return json.loads((VECTORS / "oracles.json").read_text())


@pytest.fixture(scope="session")
def rig():
    return default_rig()


@pytest.fixture
def demo_dir(tmp_path):
    """A scratch copy of the bundled demo assets (simulate writes next to the scenario)."""
    dst = tmp_path / "data"
    shutil.copytree(DATA, dst, ignore=shutil.ignore_patterns("*.stats.jsonl", "*.events.jsonl"))
    return dst


@pytest.fixture(scope="session")
def demo_run():
    """One run of the bundled scenario, shared by every test that only reads it."""
    from vrsync.sim import load_scenario, simulate

    return simulate(load_scenario(DATA / "demo.scenario"))
