"""Rebuild the committed golden fixtures under tests/fixtures/golden/.

Run from the repository root after any deliberate change to the bundled
definitions, the bench fixtures, the synthetic templates, or the selection
defaults, then review the diff before committing:

    python3 scripts/regenerate_golden.py
"""

from __future__ import annotations

import json
import shutil
import sys
import tempfile
from pathlib import Path

from cdr_agent.evaluation import (
    gen_synthetic,
    load_dataset,
    load_tabular,
    load_templates,
    report_to_dict,
    run_eval,
    save_dataset,
)
from cdr_agent.providers import MockEmbeddingProvider, MockLlmProvider
from cdr_agent.registry import load_registry
from cdr_agent.selection import SelectionConfig

ROOT = Path(__file__).resolve().parent.parent
GOLDEN_DIR = ROOT / "tests" / "fixtures" / "golden"
DATASET_SEED = 20240501
MINI_DATASET_SIZE = 20


def build_fixture_registry(target: Path) -> None:
    target.mkdir(parents=True, exist_ok=True)
    for source in (ROOT / "src/cdr_agent/data/cdrs", ROOT / "tests/fixtures/bench_cdrs"):
        for path in source.glob("*.json"):
            shutil.copy(path, target / path.name)


def strip_timings(report: dict) -> dict:
    out = dict(report)
    for key in ("t_sel", "t_exe", "t_tot"):
        out[key] = None
    return out


def main() -> int:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    notes = gen_synthetic(
        load_tabular(ROOT / "tests/fixtures/synthetic/tabular.csv"),
        load_templates(ROOT / "tests/fixtures/synthetic/templates.json"),
        n=MINI_DATASET_SIZE,
        positive_fraction=0.2,
        seed=DATASET_SEED,
        id_prefix="mini",
    )
    dataset_path = GOLDEN_DIR / "mini_dataset.jsonl"
    save_dataset(notes, dataset_path)

    with tempfile.TemporaryDirectory() as tmp:
        registry_dir = Path(tmp) / "registry15"
        build_fixture_registry(registry_dir)
        registry = load_registry(registry_dir)
        report = run_eval(
            load_dataset(dataset_path),
            registry,
            mode="agent",
            embedding_provider=MockEmbeddingProvider(),
            llm_provider=MockLlmProvider(),
            selection=SelectionConfig(),
        )
    payload = strip_timings(report_to_dict(report))
    (GOLDEN_DIR / "golden_report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"dataset: {dataset_path} ({len(notes)} notes)")
    print(f"EA={report.ea_accuracy} F1={report.f1} sens={report.sensitivity} spec={report.specificity}")
    if report.ea_accuracy != 1.0:
        print("ERROR: the mini dataset is constructed to score EA of exactly 1.0", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
