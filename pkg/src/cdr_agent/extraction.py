"""Per-rule variable extraction: prompt building, parsing, imputation, exclusions.

Parsing is total: any provider output, including garbage, yields a result in
which undetermined variables are simply missing. Missing values are later
either imputed with the variable's negative default (the value that cannot
trigger a positive decision) or routed to a human.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from typing import Any, Mapping

from .errors import MissingFieldError
from .execution import eval_predicate
from .providers import LlmProvider
from .registry import CdrDefinition, VariableSpec, VarType

EXTRACTION_PROMPT_VERSION = "v1"
EXTRACTION_SYSTEM_TEXT = (
    "You are a careful clinical information extraction assistant. "
    "Answer only in the requested format."
)

BOOLEAN_TRUE_WORDS = frozenset({"true", "yes", "present"})
BOOLEAN_FALSE_WORDS = frozenset({"false", "no", "absent"})

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_LINE_RE = re.compile(r"^\s*[-*]?\s*([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.*\S)\s*$")


class Provenance(str, Enum):
    EXTRACTED = "extracted"
    IMPUTED = "imputed"
    USER_SUPPLIED = "user_supplied"


@dataclass(frozen=True)
class VariableValue:
    value: Any
    provenance: Provenance


@dataclass(frozen=True)
class ExtractionPrompt:
    cdr_id: str
    rendered_text: str
    system_text: str = EXTRACTION_SYSTEM_TEXT
    version: str = EXTRACTION_PROMPT_VERSION


@dataclass(frozen=True)
class ExtractedVariables:
    cdr_id: str
    values: dict[str, VariableValue]
    missing: tuple[str, ...]
    warnings: tuple[str, ...] = ()
    duration_s: float = 0.0


@dataclass(frozen=True)
class ExclusionVerdict:
    cdr_id: str
    excluded: bool
    reasons: tuple[str, ...] = ()


def _load_template(name: str) -> str:
    return (resources.files("cdr_agent") / "data" / "prompts" / name).read_text(encoding="utf-8")


_EXTRACTION_TEMPLATE = _load_template(f"extraction_{EXTRACTION_PROMPT_VERSION}.txt")


def variable_line(spec: VariableSpec) -> str:
    definition = spec.definition
    if spec.vtype is VarType.ENUM:
        definition = f"{definition} Allowed values: {', '.join(spec.values)}."
    return f"- {spec.name} ({spec.vtype.value}): {definition}"


def build_prompt(note: str, d: CdrDefinition) -> ExtractionPrompt:
    """Render the extraction prompt; byte-identical for identical inputs."""
    if not note.strip():
        raise ValueError("note is empty")
    lines = "\n".join(variable_line(spec) for spec in d.variables)
    rendered = _EXTRACTION_TEMPLATE.format(
        rule_name=d.name, rule_id=d.id, variable_lines=lines, note=note
    )
    return ExtractionPrompt(cdr_id=d.id, rendered_text=rendered)


def coerce_value(spec: VariableSpec, raw: str) -> Any:
    """Coerce one textual value to the variable's type; raises ValueError."""
    text = raw.strip().strip('"').strip("'").rstrip(".").strip()
    lowered = text.lower()
    if spec.vtype is VarType.BOOLEAN:
        if lowered in BOOLEAN_TRUE_WORDS:
            return True
        if lowered in BOOLEAN_FALSE_WORDS:
            return False
        raise ValueError(f"{raw!r} is not a recognized boolean word")
    if spec.vtype is VarType.INTEGER:
        if _INT_RE.match(text):
            return int(text)
        raise ValueError(f"{raw!r} is not an integer")
    if spec.vtype is VarType.FLOAT:
        if _FLOAT_RE.match(text) or _INT_RE.match(text):
            return float(text)
        raise ValueError(f"{raw!r} is not a number")
    if spec.vtype is VarType.ENUM:
        for value in spec.values:
            if value.lower() == lowered:
                return value
        raise ValueError(f"{raw!r} is not one of: {', '.join(spec.values)}")
    return text


def parse_extraction(raw: str, d: CdrDefinition) -> ExtractedVariables:
    """Parse `name: value` lines into typed values; never raises.

    Unknown names are skipped with a warning, duplicates keep the last
    occurrence, and uncoercible values leave the variable missing.
    """
    specs = {spec.name: spec for spec in d.variables}
    values: dict[str, VariableValue] = {}
    warnings: list[str] = []
    for line in raw.splitlines():
        match = _LINE_RE.match(line)
        if not match:
            continue
        name = match.group(1).lower()
        if name not in specs:
            warnings.append(f"ignored unknown variable '{name}'")
            continue
        try:
            value = coerce_value(specs[name], match.group(2))
        except ValueError as exc:
            warnings.append(f"could not coerce '{name}': {exc}")
            values.pop(name, None)
            continue
        values[name] = VariableValue(value=value, provenance=Provenance.EXTRACTED)
    missing = tuple(name for name in d.variable_names if name not in values)
    return ExtractedVariables(cdr_id=d.id, values=values, missing=missing, warnings=tuple(warnings))


def impute_negative(ev: ExtractedVariables, d: CdrDefinition) -> ExtractedVariables:
    """Fill every missing variable with its negative default.

    Negative defaults are chosen per definition so a fully imputed assignment
    cannot produce a positive decision on its own. Existing values, including
    user-supplied ones, are never touched; the operation is idempotent.
    """
    if not ev.missing:
        return ev
    values = dict(ev.values)
    for name in ev.missing:
        values[name] = VariableValue(value=d.variable(name).negative_default, provenance=Provenance.IMPUTED)
    return replace(ev, values=values, missing=())


def apply_exclusions(
    ev: ExtractedVariables,
    note_meta: Mapping[str, Any] | None,
    d: CdrDefinition,
) -> ExclusionVerdict:
    """Check every exclusion predicate over variables plus note metadata.

    A predicate touching a field that is still unavailable is treated as
    non-exclusionary: absence of evidence must not discard a valid rule.
    """
    scope: dict[str, Any] = {name: vv.value for name, vv in ev.values.items()}
    for key, value in (note_meta or {}).items():
        if value is not None:
            scope[key] = value
    reasons: list[str] = []
    for i, exclusion in enumerate(d.exclusions):
        try:
            fired = eval_predicate(exclusion.predicate, scope, f"exclusions[{i}]")
        except MissingFieldError:
            fired = False
        if fired:
            reasons.append(exclusion.reason)
    return ExclusionVerdict(cdr_id=d.id, excluded=bool(reasons), reasons=tuple(reasons))


def extract(note: str, d: CdrDefinition, provider: LlmProvider) -> ExtractedVariables:
    """Build the prompt, query the provider, and parse its answer.

    Transport failures propagate (the pipeline isolates them per rule); the
    wall-clock duration of the call is recorded on the result.
    """
    prompt = build_prompt(note, d)
    start = time.perf_counter()
    raw = provider.complete(prompt.system_text, prompt.rendered_text, temperature=0.0)
    duration = time.perf_counter() - start
    return replace(parse_extraction(raw, d), duration_s=duration)
