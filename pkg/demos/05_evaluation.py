"""Evaluate agent mode against the committed 20-note mini dataset.

The dataset was generated from tabular features with sentence templates, so
every note carries a single ground-truth rule label and an intervention label.
Exact-match accuracy is 1.0 on this fixture by construction; the outcome
confusion counts show the cautious-decision texture (two engineered false
positives drive specificity below 1).
"""

from cdr_agent import load_dataset, load_registry, run_eval
from cdr_agent.providers import MockEmbeddingProvider, MockLlmProvider
from cdr_agent.selection import SelectionConfig

from _util import REPO_ROOT, demo_registry_dir

dataset = load_dataset(REPO_ROOT / "tests" / "fixtures" / "golden" / "mini_dataset.jsonl")
registry = load_registry(demo_registry_dir())

report = run_eval(
    dataset,
    registry,
    mode="agent",
    embedding_provider=MockEmbeddingProvider(),
    llm_provider=MockLlmProvider(),
    selection=SelectionConfig(),
)

print(f"mode={report.mode}  notes={report.n_notes}  failures={report.n_failures}")
print(f"selection: EA accuracy={report.ea_accuracy:.4f}  F1={report.f1:.4f}")
print(f"execution: sensitivity={report.sensitivity}  specificity={report.specificity}")
c = report.outcome_counts
print(f"confusion: tp={c.tp} fp={c.fp} tn={c.tn} fn={c.fn} skipped={c.skipped}")
print(f"mean timings: t_sel={report.t_sel * 1e3:.2f} ms  t_exe={report.t_exe * 1e3:.2f} ms  t_tot={report.t_tot * 1e3:.2f} ms")

print("\nper-note detail (first 8):")
for entry in report.per_note[:8]:
    print(f"  {entry['note_id']}: predicted={entry['predicted']} outcomes={entry['outcomes']}")
