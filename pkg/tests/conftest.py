from __future__ import annotations

from pathlib import Path

import pytest

from chops.evalharness import build_runtime, load_config
from chops.store import Store, load_seed
from chops.tools import ToolRegistry, build_shipped_registry

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture
def store() -> Store:
    return load_seed(FIXTURES / "cphos-mini")


@pytest.fixture
def registry(store) -> ToolRegistry:
    return build_shipped_registry(store)


@pytest.fixture
def runtime():
    return build_runtime(load_config(FIXTURES / "config.json"))


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES
