"""Evaluation harness: labeled datasets, selection/execution metrics, runners.

Two modes are supported. Agent mode runs the full pipeline per note
(non-interactive, negative imputation). Baseline mode sends one combined
prompt per note holding every rule description and parses a constrained
machine-readable answer out of the completion.
"""

from __future__ import annotations

import csv
import json
import logging
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import CdrAgentError
from .pipeline import PipelineConfig, SessionManager
from .providers import LlmProvider, MockEmbeddingProvider, MockLlmProvider
from .registry import Registry
from .selection import SelectionConfig

logger = logging.getLogger(__name__)

NO_CDR = "__no_cdr__"

BASELINE_PROMPT_VERSION = "v1"
BASELINE_SYSTEM_TEXT = (
    "You are a clinical decision support assistant. Answer strictly in the requested format."
)


@dataclass(frozen=True)
class LabeledNote:
    note_id: str
    note: str
    note_meta: dict[str, Any] = field(default_factory=dict)
    label_sets: tuple[frozenset[str], ...] = (frozenset(),)
    outcome_labels: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.label_sets:
            raise ValueError(f"note '{self.note_id}' has no label sets")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0
    skipped: int = 0


@dataclass
class EvalReport:
    mode: str
    n_notes: int
    ea_accuracy: float
    f1: float
    sensitivity: float | None
    specificity: float | None
    outcome_counts: ConfusionCounts
    n_failures: int
    t_sel: float | None
    t_exe: float | None
    t_tot: float | None
    per_note: list[dict[str, Any]] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Dataset IO
# ---------------------------------------------------------------------------


def note_from_dict(raw: Mapping[str, Any]) -> LabeledNote:
    return LabeledNote(
        note_id=raw["note_id"],
        note=raw["note"],
        note_meta=dict(raw.get("note_meta", {})),
        label_sets=tuple(frozenset(s) for s in raw.get("label_sets", [[]])),
        outcome_labels=dict(raw.get("outcome_labels", {})),
    )


def note_to_dict(note: LabeledNote) -> dict[str, Any]:
    return {
        "note_id": note.note_id,
        "note": note.note,
        "note_meta": note.note_meta,
        "label_sets": [sorted(s) for s in note.label_sets],
        "outcome_labels": note.outcome_labels,
    }


def load_dataset(path: str | Path) -> list[LabeledNote]:
    """Read a JSON-lines dataset, one labeled note per line."""
    notes = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        try:
            notes.append(note_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError) as exc:
            raise CdrAgentError(f"{path}: line {i + 1}: {exc}") from exc
    if not notes:
        raise CdrAgentError(f"{path}: dataset is empty")
    return notes


def save_dataset(notes: Iterable[LabeledNote], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for note in notes:
            fh.write(json.dumps(note_to_dict(note), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _check_alignment(predictions: Mapping[str, Any], labeled: Sequence[LabeledNote]) -> None:
    missing = [n.note_id for n in labeled if n.note_id not in predictions]
    if missing:
        raise CdrAgentError(f"predictions missing for notes: {missing[:5]}")


def ea_accuracy(predictions: Mapping[str, frozenset[str] | set[str]], labeled: Sequence[LabeledNote]) -> float:
    """Fraction of notes whose predicted set equals at least one annotator set.

    An empty prediction matches an empty label set (the no-applicable-rule
    verdict is a first-class answer).
    """
    _check_alignment(predictions, labeled)
    correct = sum(
        1 for n in labeled if any(frozenset(predictions[n.note_id]) == s for s in n.label_sets)
    )
    return correct / len(labeled)


def _note_assertion_counts(
    predicted: frozenset[str], truth: frozenset[str]
) -> tuple[int, int, int]:
    pred_assertions = predicted if predicted else frozenset({NO_CDR})
    truth_assertions = truth if truth else frozenset({NO_CDR})
    tp = len(pred_assertions & truth_assertions)
    fp = len(pred_assertions - truth_assertions)
    fn = len(truth_assertions - pred_assertions)
    return tp, fp, fn


def best_label_set(predicted: frozenset[str], label_sets: Sequence[frozenset[str]]) -> frozenset[str]:
    """Annotator set scored against, chosen to maximize the per-note F1.

    Ties break by higher TP, then fewer FP+FN, then annotator order, so the
    choice (and the pooled counts) is deterministic.
    """
    def rank(s: frozenset[str]):
        tp, fp, fn = _note_assertion_counts(predicted, s)
        f1 = 2 * tp / (2 * tp + fp + fn)
        return (-f1, -tp, fp + fn)

    best_index = min(range(len(label_sets)), key=lambda i: (rank(label_sets[i]), i))
    return label_sets[best_index]


def f1_score(
    predictions: Mapping[str, frozenset[str] | set[str]],
    labeled: Sequence[LabeledNote],
    registry: Registry | Sequence[str],
) -> float:
    """Micro-averaged F1 over per-note binary decisions on every candidate.

    The candidate space is all registry ids plus the reserved
    no-applicable-rule token, asserted exactly when a set is empty. Each note
    is scored against its best-matching annotator set.
    """
    _check_alignment(predictions, labeled)
    candidate_ids = set(registry.ids if isinstance(registry, Registry) else registry)
    tp = fp = fn = 0
    for note in labeled:
        predicted = frozenset(predictions[note.note_id]) & (candidate_ids | {NO_CDR})
        truth = best_label_set(predicted, note.label_sets)
        note_tp, note_fp, note_fn = _note_assertion_counts(predicted, truth)
        tp, fp, fn = tp + note_tp, fp + note_fp, fn + note_fn
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def sensitivity_specificity(
    executed_positive: Mapping[str, Mapping[str, bool | None]],
    predictions: Mapping[str, frozenset[str] | set[str]],
    labeled: Sequence[LabeledNote],
) -> tuple[float | None, float | None, ConfusionCounts]:
    """Outcome metrics restricted to correctly selected (note, rule) pairs.

    A pair qualifies when the rule was selected, appears in at least one
    annotator set, and has a ground-truth outcome label. Pairs without an
    executed outcome (excluded or errored) are counted as skipped rather
    than guessed. Undefined ratios come back as None.
    """
    tp = fp = tn = fn = skipped = 0
    for note in labeled:
        union_labels = frozenset().union(*note.label_sets)
        predicted = frozenset(predictions.get(note.note_id, frozenset()))
        for cdr_id in sorted(predicted & union_labels):
            if cdr_id not in note.outcome_labels:
                continue
            pred_pos = executed_positive.get(note.note_id, {}).get(cdr_id)
            if pred_pos is None:
                skipped += 1
                continue
            truth_pos = note.outcome_labels[cdr_id] == "positive"
            if truth_pos and pred_pos:
                tp += 1
            elif truth_pos and not pred_pos:
                fn += 1
            elif not truth_pos and pred_pos:
                fp += 1
            else:
                tn += 1
    sensitivity = tp / (tp + fn) if (tp + fn) > 0 else None
    specificity = tn / (tn + fp) if (tn + fp) > 0 else None
    return sensitivity, specificity, ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn, skipped=skipped)


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def _load_baseline_template() -> str:
    return (
        resources.files("cdr_agent") / "data" / "prompts" / f"baseline_{BASELINE_PROMPT_VERSION}.txt"
    ).read_text(encoding="utf-8")


def build_baseline_prompt(note: str, registry: Registry) -> str:
    blocks = []
    for d in registry:
        variables = "; ".join(f"{v.name}: {v.definition}" for v in d.variables)
        blocks.append(
            f"[{d.id}] {d.name}\nDescription: {d.description}\n"
            f"Variables: {variables}\nOutcomes: {', '.join(d.outcomes)}"
        )
    return _load_baseline_template().format(rule_blocks="\n\n".join(blocks), note=note)


_SELECTED_LINE_RE = re.compile(r"^\s*selected\s*:\s*(.+?)\s*$", re.IGNORECASE)
_OUTCOME_LINE_RE = re.compile(r"^\s*outcome\s+([a-z][a-z0-9_]*)\s*:\s*(.+?)\s*$", re.IGNORECASE)


def parse_baseline_answer(raw: str, registry: Registry) -> tuple[frozenset[str], dict[str, str]]:
    """Lenient parse of the constrained baseline answer block.

    Unknown rule ids and outcome labels not declared by the rule are dropped.
    """
    known = set(registry.ids)
    selected: set[str] = set()
    outcomes: dict[str, str] = {}
    for line in raw.splitlines():
        sel = _SELECTED_LINE_RE.match(line)
        if sel:
            body = sel.group(1).strip()
            if body.lower() not in ("none", "n/a", "-"):
                selected.update(t for t in (tok.strip().lower() for tok in body.split(",")) if t in known)
            continue
        out = _OUTCOME_LINE_RE.match(line)
        if out:
            cdr_id, label = out.group(1).lower(), out.group(2).strip()
            if cdr_id in known:
                d = registry.get(cdr_id)
                for declared in d.outcomes:
                    if declared.lower() == label.lower():
                        outcomes[cdr_id] = declared
                        break
    return frozenset(selected), outcomes


def run_eval(
    dataset: Sequence[LabeledNote],
    registry: Registry,
    mode: str = "agent",
    embedding_provider=None,
    llm_provider: LlmProvider | None = None,
    selection: SelectionConfig | None = None,
) -> EvalReport:
    """Run a full evaluation and aggregate the selection and outcome metrics.

    Provider failures are recorded per note: the note scores as a miss and is
    left out of the timing means.
    """
    if mode not in ("agent", "baseline"):
        raise ValueError(f"unknown mode '{mode}'")
    embedding_provider = embedding_provider or MockEmbeddingProvider()
    llm_provider = llm_provider or MockLlmProvider()
    selection = selection or SelectionConfig()

    predictions: dict[str, frozenset[str]] = {}
    executed_positive: dict[str, dict[str, bool | None]] = {}
    per_note: list[dict[str, Any]] = []
    t_sel_values: list[float] = []
    t_exe_values: list[float] = []
    t_tot_values: list[float] = []
    n_failures = 0

    manager = None
    if mode == "agent":
        manager = SessionManager(
            registry,
            embedding_provider,
            llm_provider,
            PipelineConfig(selection=selection, interactive=False),
        )

    for note in dataset:
        entry: dict[str, Any] = {"note_id": note.note_id, "failed": False}
        try:
            if mode == "agent":
                assert manager is not None
                session = manager.analyze(note.note, note.note_meta)
                if session.status.value == "error":
                    raise CdrAgentError(session.error or "pipeline error")
                assert session.profile is not None
                # The system's answer is the post-exclusion list: a rule the
                # exclusion criteria invalidated was not applicable after all.
                excluded_ids = {v.cdr_id for v in session.verdicts if v.excluded}
                predicted = frozenset(session.profile.selected) - excluded_ids
                outcome_flags: dict[str, bool | None] = {}
                outcome_labels: dict[str, str] = {}
                excluded: dict[str, list[str]] = {}
                errors: dict[str, str] = {}
                for cdr_id in session.report.order:
                    result = session.report.per_cdr[cdr_id]
                    if result.kind == "outcome" and result.outcome is not None:
                        outcome_flags[cdr_id] = result.outcome.is_positive
                        outcome_labels[cdr_id] = result.outcome.label
                    elif result.kind == "excluded":
                        outcome_flags[cdr_id] = None
                        excluded[cdr_id] = list(result.reasons)
                    else:
                        outcome_flags[cdr_id] = None
                        errors[cdr_id] = result.error or "execution error"
                t_sel_values.append(session.timings.t_sel)
                t_exe_values.append(session.timings.t_exe)
                t_tot_values.append(session.timings.t_tot)
                entry.update(
                    predicted=sorted(predicted),
                    outcomes=outcome_labels,
                    excluded=excluded,
                    errors=errors,
                )
            else:
                start = time.perf_counter()
                prompt = build_baseline_prompt(note.note, registry)
                raw = llm_provider.complete(BASELINE_SYSTEM_TEXT, prompt, temperature=0.0)
                predicted, baseline_outcomes = parse_baseline_answer(raw, registry)
                t_tot_values.append(time.perf_counter() - start)
                outcome_flags = {}
                for cdr_id in predicted:
                    label = baseline_outcomes.get(cdr_id)
                    d = registry.get(cdr_id)
                    outcome_flags[cdr_id] = (label in d.positive_outcomes) if label else None
                entry.update(predicted=sorted(predicted), outcomes=baseline_outcomes)
        except CdrAgentError as exc:
            logger.warning("note %s failed: %s", note.note_id, exc)
            n_failures += 1
            predicted = frozenset()
            outcome_flags = {}
            entry.update(failed=True, error=str(exc), predicted=[])

        predictions[note.note_id] = predicted
        executed_positive[note.note_id] = outcome_flags
        entry["ea_correct"] = (not entry["failed"]) and any(
            predicted == s for s in note.label_sets
        )
        per_note.append(entry)

    # Failed notes keep empty predictions: they score as misses by construction.
    failed_ids = {e["note_id"] for e in per_note if e["failed"]}
    ea = sum(1 for e in per_note if e["ea_correct"]) / len(dataset)
    scored = [n for n in dataset if n.note_id not in failed_ids]
    f1 = _f1_with_failures(predictions, dataset, registry, failed_ids)
    sens, spec, counts = sensitivity_specificity(
        executed_positive, {k: v for k, v in predictions.items() if k not in failed_ids}, scored
    )
    return EvalReport(
        mode=mode,
        n_notes=len(dataset),
        ea_accuracy=ea,
        f1=f1,
        sensitivity=sens,
        specificity=spec,
        outcome_counts=counts,
        n_failures=n_failures,
        t_sel=float(np.mean(t_sel_values)) if t_sel_values else None,
        t_exe=float(np.mean(t_exe_values)) if t_exe_values else None,
        t_tot=float(np.mean(t_tot_values)) if t_tot_values else None,
        per_note=per_note,
    )


def _f1_with_failures(
    predictions: Mapping[str, frozenset[str]],
    labeled: Sequence[LabeledNote],
    registry: Registry,
    failed_ids: set[str],
) -> float:
    """Micro F1 where failed notes contribute only false negatives."""
    tp = fp = fn = 0
    for note in labeled:
        if note.note_id in failed_ids:
            truth = best_label_set(frozenset(), note.label_sets)
            fn += len(truth if truth else {NO_CDR})
            continue
        predicted = frozenset(predictions[note.note_id])
        truth = best_label_set(predicted, note.label_sets)
        note_tp, note_fp, note_fn = _note_assertion_counts(predicted, truth)
        tp, fp, fn = tp + note_tp, fp + note_fp, fn + note_fn
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def report_to_dict(report: EvalReport) -> dict[str, Any]:
    return {
        "mode": report.mode,
        "n_notes": report.n_notes,
        "ea_accuracy": report.ea_accuracy,
        "f1": report.f1,
        "sensitivity": report.sensitivity,
        "specificity": report.specificity,
        "outcome_counts": {
            "tp": report.outcome_counts.tp,
            "fp": report.outcome_counts.fp,
            "tn": report.outcome_counts.tn,
            "fn": report.outcome_counts.fn,
            "skipped": report.outcome_counts.skipped,
        },
        "n_failures": report.n_failures,
        "t_sel": report.t_sel,
        "t_exe": report.t_exe,
        "t_tot": report.t_tot,
        "per_note": report.per_note,
    }


# ---------------------------------------------------------------------------
# Synthetic note generation
# ---------------------------------------------------------------------------

RESERVED_COLUMNS = ("row_id", "cdr_id", "intervention", "age", "sex")
POSITIVE_TOKENS = frozenset({"1", "true", "yes", "positive"})


def load_tabular(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise CdrAgentError(f"{path}: tabular file has no rows")
    return rows


def load_templates(path: str | Path) -> dict[str, dict[str, str]]:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _article(age: str) -> str:
    return "an" if re.match(r"^(8|11|18)(\D|$)", age) else "a"


def render_note(row: Mapping[str, str], templates: Mapping[str, Mapping[str, str]]) -> str:
    """One sentence per non-empty feature cell, after a demographic preamble."""
    age, sex = row.get("age", ""), row.get("sex", "")
    sentences = [f"The patient is {_article(age)} {age}-year-old {sex}."]
    for feature, value in row.items():
        if feature in RESERVED_COLUMNS or value == "" or value is None:
            continue
        feature_templates = templates.get(feature)
        if feature_templates is None or value not in feature_templates:
            raise CdrAgentError(f"no template for feature '{feature}' value {value!r}")
        sentences.append(feature_templates[value])
    return " ".join(sentences)


def gen_synthetic(
    tabular: Sequence[Mapping[str, str]],
    templates: Mapping[str, Mapping[str, str]],
    n: int,
    positive_fraction: float = 0.2,
    seed: int = 0,
    paraphrase_provider: LlmProvider | None = None,
    id_prefix: str = "synthetic",
) -> list[LabeledNote]:
    """Render labeled notes from tabular features, stratified by intervention.

    The sampled positive count is round(n * positive_fraction); sampling is
    with replacement only when a stratum is smaller than its quota. The same
    seed always yields the identical dataset. An optional paraphrase pass
    rewrites each note through a language-model provider (off by default).
    """
    if not tabular:
        raise CdrAgentError("tabular input is empty")
    if not 0.0 <= positive_fraction <= 1.0:
        raise ValueError("positive_fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    is_pos = lambda r: r.get("intervention", "").lower() in POSITIVE_TOKENS
    positives = [r for r in tabular if is_pos(r)]
    negatives = [r for r in tabular if not is_pos(r)]
    n_pos = round(n * positive_fraction)
    n_neg = n - n_pos
    if n_pos > 0 and not positives:
        raise CdrAgentError("no positive rows available for stratified sampling")
    if n_neg > 0 and not negatives:
        raise CdrAgentError("no negative rows available for stratified sampling")

    def sample(pool: list, count: int) -> list:
        if count == 0:
            return []
        idx = rng.choice(len(pool), size=count, replace=len(pool) < count)
        return [pool[int(i)] for i in idx]

    chosen = sample(positives, n_pos) + sample(negatives, n_neg)
    order = rng.permutation(len(chosen))
    notes = []
    for seq, i in enumerate(order):
        row = chosen[int(i)]
        text = render_note(row, templates)
        if paraphrase_provider is not None:
            text = paraphrase_provider.complete(
                "You rewrite clinical notes to sound natural while preserving every fact.",
                f"Rewrite this note as flowing clinical prose, changing no facts:\n{text}",
                temperature=0.0,
            )
        is_positive = row.get("intervention", "").lower() in POSITIVE_TOKENS
        meta: dict[str, Any] = {}
        if row.get("age"):
            meta["patient_age_years"] = float(row["age"])
        if row.get("sex"):
            meta["patient_sex"] = row["sex"]
        notes.append(
            LabeledNote(
                note_id=f"{id_prefix}_{seq:04d}",
                note=text,
                note_meta=meta,
                label_sets=(frozenset({row["cdr_id"]}),),
                outcome_labels={row["cdr_id"]: "positive" if is_positive else "negative"},
            )
        )
    return notes
