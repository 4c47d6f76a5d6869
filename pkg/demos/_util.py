"""Shared helper for the demo scripts: assemble a 15-rule demo registry."""

from __future__ import annotations

import shutil
import tempfile
from pathlib import Path

from cdr_agent import bundled_registry_dir

REPO_ROOT = Path(__file__).resolve().parent.parent
BENCH_DIR = REPO_ROOT / "tests" / "fixtures" / "bench_cdrs"


def demo_registry_dir() -> Path:
    """Bundled clinical definitions plus the bench screens, in a temp directory."""
    target = Path(tempfile.mkdtemp(prefix="cdr_demo_registry_"))
    for source in (Path(bundled_registry_dir()), BENCH_DIR):
        for path in source.glob("*.json"):
            shutil.copy(path, target / path.name)
    return target
