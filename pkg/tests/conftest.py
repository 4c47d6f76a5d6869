from __future__ import annotations

import shutil
from pathlib import Path

import pytest

from cdr_agent import bundled_registry_dir
from cdr_agent.registry import Registry, load_registry

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture(scope="session")
def bundled_registry() -> Registry:
    return load_registry(bundled_registry_dir())


@pytest.fixture(scope="session")
def registry15_dir(tmp_path_factory) -> Path:
    """The bundled definitions plus the bench fixtures, as one 15-rule directory."""
    target = tmp_path_factory.mktemp("registry15")
    for source in (Path(bundled_registry_dir()), FIXTURES / "bench_cdrs"):
        for path in source.glob("*.json"):
            shutil.copy(path, target / path.name)
    return target


@pytest.fixture(scope="session")
def registry15(registry15_dir) -> Registry:
    return load_registry(registry15_dir)


@pytest.fixture()
def nexus(bundled_registry):
    return bundled_registry.get("nexus_cspine")
