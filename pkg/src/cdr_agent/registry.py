"""Clinical decision rule definitions: schema, validation, and loading.

A rule definition is a JSON document with a typed variable schema, optional
exclusion predicates, and a decision tree expressed in a small declarative
expression language. Rules are data, never code, so they can be statically
checked and interpreted safely.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping, Union

from .errors import RegistryLoadError

SCHEMA_VERSION = 1
MAX_RULE_DEPTH = 64

IDENTIFIER_RE = re.compile(r"^[a-z][a-z0-9_]*$")

COMPARISON_OPS = ("eq", "ne", "lt", "le", "gt", "ge", "in")

# Note-level metadata usable in exclusion predicates alongside declared variables.
METADATA_FIELDS: dict[str, "VarType"] = {}  # populated below once VarType exists
PATIENT_SEX_VALUES = ("female", "male", "other", "unknown")


class VarType(str, Enum):
    BOOLEAN = "boolean"
    INTEGER = "integer"
    FLOAT = "float"
    STRING = "string"
    ENUM = "enum"


METADATA_FIELDS = {
    "patient_age_years": VarType.FLOAT,
    "patient_sex": VarType.ENUM,
}

# Which comparison operators make sense for each variable type.
_OPS_BY_TYPE = {
    VarType.BOOLEAN: {"eq", "ne"},
    VarType.INTEGER: {"eq", "ne", "lt", "le", "gt", "ge", "in"},
    VarType.FLOAT: {"eq", "ne", "lt", "le", "gt", "ge", "in"},
    VarType.STRING: {"eq", "ne", "in"},
    VarType.ENUM: {"eq", "ne", "in"},
}


@dataclass(frozen=True)
class VariableSpec:
    """One typed variable required by a rule, with its clinical definition."""

    name: str
    vtype: VarType
    definition: str
    negative_default: Any
    required: bool = True
    values: tuple[str, ...] = ()


@dataclass(frozen=True)
class Cmp:
    var: str
    op: str
    value: Any


@dataclass(frozen=True)
class All:
    preds: tuple["Predicate", ...]


@dataclass(frozen=True)
class AnyOf:
    preds: tuple["Predicate", ...]


@dataclass(frozen=True)
class Not:
    pred: "Predicate"


Predicate = Union[Cmp, All, AnyOf, Not]


@dataclass(frozen=True)
class Leaf:
    label: str


@dataclass(frozen=True)
class If:
    pred: Predicate
    then: "RuleExpr"
    els: "RuleExpr"


RuleExpr = Union[Leaf, If]


@dataclass(frozen=True)
class ExclusionRule:
    predicate: Predicate
    reason: str


@dataclass(frozen=True)
class CdrDefinition:
    id: str
    name: str
    description: str
    keywords: tuple[str, ...]
    variables: tuple[VariableSpec, ...]
    exclusions: tuple[ExclusionRule, ...]
    rule: RuleExpr
    outcomes: tuple[str, ...]
    positive_outcomes: tuple[str, ...]

    def variable(self, name: str) -> VariableSpec:
        for spec in self.variables:
            if spec.name == name:
                return spec
        raise KeyError(name)

    @property
    def variable_names(self) -> tuple[str, ...]:
        return tuple(spec.name for spec in self.variables)


@dataclass(frozen=True)
class Registry:
    """Immutable, id-ordered collection of rule definitions."""

    definitions: tuple[CdrDefinition, ...]
    source_digest: str

    def __len__(self) -> int:
        return len(self.definitions)

    def __iter__(self) -> Iterator[CdrDefinition]:
        return iter(self.definitions)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.definitions)

    def get(self, cdr_id: str) -> CdrDefinition:
        for d in self.definitions:
            if d.id == cdr_id:
                return d
        raise KeyError(cdr_id)


@dataclass(frozen=True)
class Violation:
    """One machine-readable validation failure with the path that caused it."""

    code: str
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.code} at {self.path}: {self.message}"


def _is_literal_of(vtype: VarType, values: tuple[str, ...], literal: Any) -> bool:
    if vtype is VarType.BOOLEAN:
        return isinstance(literal, bool)
    if vtype is VarType.INTEGER:
        return isinstance(literal, int) and not isinstance(literal, bool)
    if vtype is VarType.FLOAT:
        return isinstance(literal, (int, float)) and not isinstance(literal, bool) and math.isfinite(literal)
    if vtype is VarType.STRING:
        return isinstance(literal, str)
    if vtype is VarType.ENUM:
        return isinstance(literal, str) and literal in values
    return False


def _check_cmp_literal(vtype: VarType, values: tuple[str, ...], op: str, literal: Any) -> bool:
    if op == "in":
        return (
            isinstance(literal, list)
            and len(literal) > 0
            and all(_is_literal_of(vtype, values, item) for item in literal)
        )
    return _is_literal_of(vtype, values, literal)


class _RawValidator:
    """Walks a raw (JSON-parsed) definition and accumulates violations."""

    def __init__(self, raw: Mapping[str, Any]):
        self.raw = raw
        self.violations: list[Violation] = []
        # name -> (vtype, enum values); includes note metadata for exclusions
        self.var_types: dict[str, tuple[VarType, tuple[str, ...]]] = {}
        self.outcomes: list[str] = []

    def add(self, code: str, path: str, message: str) -> None:
        self.violations.append(Violation(code, path, message))

    def run(self) -> list[Violation]:
        self._check_top_level()
        self._check_variables()
        self._check_outcomes()
        if isinstance(self.raw.get("exclusions"), list):
            for i, raw_exc in enumerate(self.raw["exclusions"]):
                self._check_exclusion(raw_exc, f"exclusions[{i}]")
        if "rule" in self.raw:
            depth = self._check_rule(self.raw["rule"], "rule", 1)
            if depth > MAX_RULE_DEPTH:
                self.add("DEPTH_EXCEEDED", "rule", f"rule tree depth {depth} exceeds {MAX_RULE_DEPTH}")
        return self.violations

    def _check_top_level(self) -> None:
        for name, typ in (
            ("id", str),
            ("name", str),
            ("description", str),
            ("variables", list),
            ("rule", (dict, str)),
            ("outcomes", list),
        ):
            if name not in self.raw:
                self.add("MISSING_FIELD", name, f"required field '{name}' is absent")
            elif not isinstance(self.raw[name], typ):
                self.add("BAD_TYPE", name, f"field '{name}' has the wrong type")
        for name in ("keywords", "positive_outcomes"):
            if name in self.raw and not isinstance(self.raw[name], list):
                self.add("BAD_TYPE", name, f"field '{name}' must be a list")
        if "exclusions" in self.raw and not isinstance(self.raw["exclusions"], list):
            self.add("BAD_TYPE", "exclusions", "field 'exclusions' must be a list")
        cdr_id = self.raw.get("id")
        if isinstance(cdr_id, str) and not IDENTIFIER_RE.match(cdr_id):
            self.add("BAD_IDENTIFIER", "id", f"'{cdr_id}' does not match [a-z][a-z0-9_]*")
        desc = self.raw.get("description")
        if isinstance(desc, str) and not desc.strip():
            self.add("EMPTY_DESCRIPTION", "description", "description must be non-empty")
        version = self.raw.get("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            self.add("UNKNOWN_SCHEMA_VERSION", "schema_version", f"unsupported schema_version {version!r}")

    def _check_variables(self) -> None:
        raw_vars = self.raw.get("variables")
        if not isinstance(raw_vars, list):
            return
        if len(raw_vars) == 0:
            self.add("NO_VARIABLES", "variables", "a definition must declare at least one variable")
        seen: set[str] = set()
        for i, raw_var in enumerate(raw_vars):
            path = f"variables[{i}]"
            if not isinstance(raw_var, Mapping):
                self.add("BAD_TYPE", path, "variable entry must be an object")
                continue
            name = raw_var.get("name")
            if not isinstance(name, str) or not IDENTIFIER_RE.match(name):
                self.add("BAD_IDENTIFIER", f"{path}.name", f"invalid variable name {name!r}")
                continue
            if name in seen:
                self.add("DUPLICATE_VARIABLE", f"{path}.name", f"variable '{name}' declared twice")
                continue
            seen.add(name)
            try:
                vtype = VarType(raw_var.get("vtype"))
            except ValueError:
                self.add("BAD_TYPE", f"{path}.vtype", f"unknown vtype {raw_var.get('vtype')!r}")
                continue
            values: tuple[str, ...] = ()
            if vtype is VarType.ENUM:
                raw_values = raw_var.get("values")
                if (
                    not isinstance(raw_values, list)
                    or len(raw_values) < 2
                    or len(set(raw_values)) != len(raw_values)
                    or not all(isinstance(v, str) for v in raw_values)
                ):
                    self.add("ENUM_VALUES", f"{path}.values", "enum variables need >= 2 distinct string values")
                    continue
                values = tuple(raw_values)
            if not isinstance(raw_var.get("definition"), str) or not raw_var["definition"].strip():
                self.add("MISSING_FIELD", f"{path}.definition", "variable definition text is required")
            if "negative_default" not in raw_var:
                self.add("MISSING_FIELD", f"{path}.negative_default", "negative_default is required")
            elif not _is_literal_of(vtype, values, raw_var["negative_default"]):
                self.add(
                    "BAD_DEFAULT",
                    f"{path}.negative_default",
                    f"default {raw_var['negative_default']!r} is not a valid {vtype.value} literal",
                )
            self.var_types[name] = (vtype, values)

    def _check_outcomes(self) -> None:
        raw_outcomes = self.raw.get("outcomes")
        if not isinstance(raw_outcomes, list):
            return
        if len(raw_outcomes) == 0:
            self.add("EMPTY_OUTCOMES", "outcomes", "outcomes must be non-empty")
        if len(set(raw_outcomes)) != len(raw_outcomes):
            self.add("DUPLICATE_OUTCOME", "outcomes", "outcome labels must be distinct")
        if not all(isinstance(o, str) for o in raw_outcomes):
            self.add("BAD_TYPE", "outcomes", "outcome labels must be strings")
            return
        self.outcomes = list(raw_outcomes)
        for i, label in enumerate(self.raw.get("positive_outcomes", []) or []):
            if label not in self.outcomes:
                self.add("UNKNOWN_POSITIVE_OUTCOME", f"positive_outcomes[{i}]", f"{label!r} not in outcomes")

    def _scope_type(self, var: str, allow_metadata: bool) -> tuple[VarType, tuple[str, ...]] | None:
        if var in self.var_types:
            return self.var_types[var]
        if allow_metadata and var in METADATA_FIELDS:
            vtype = METADATA_FIELDS[var]
            return (vtype, PATIENT_SEX_VALUES if var == "patient_sex" else ())
        return None

    def _check_predicate(self, raw: Any, path: str, depth: int, allow_metadata: bool) -> int:
        if depth > MAX_RULE_DEPTH:
            return depth
        if not isinstance(raw, Mapping):
            self.add("BAD_PREDICATE", path, "predicate must be an object")
            return depth
        keys = set(raw.keys())
        if keys == {"var", "op", "value"}:
            var, op = raw["var"], raw["op"]
            if op not in COMPARISON_OPS:
                self.add("BAD_OP", f"{path}.op", f"unknown operator {op!r}")
                return depth
            resolved = self._scope_type(var, allow_metadata) if isinstance(var, str) else None
            if resolved is None:
                self.add("UNKNOWN_VARIABLE", f"{path}.var", f"predicate references undeclared variable {var!r}")
                return depth
            vtype, values = resolved
            if op not in _OPS_BY_TYPE[vtype]:
                self.add("TYPE_MISMATCH", f"{path}.op", f"operator '{op}' is not valid for {vtype.value} variables")
            elif not _check_cmp_literal(vtype, values, op, raw["value"]):
                self.add("TYPE_MISMATCH", f"{path}.value", f"literal {raw['value']!r} is not compatible with {vtype.value}")
            return depth
        if keys == {"all"} or keys == {"any"}:
            kind = "all" if "all" in keys else "any"
            items = raw[kind]
            if not isinstance(items, list) or len(items) == 0:
                self.add("BAD_PREDICATE", f"{path}.{kind}", f"'{kind}' needs a non-empty list of predicates")
                return depth
            return max(
                self._check_predicate(item, f"{path}.{kind}[{i}]", depth + 1, allow_metadata)
                for i, item in enumerate(items)
            )
        if keys == {"not"}:
            return self._check_predicate(raw["not"], f"{path}.not", depth + 1, allow_metadata)
        self.add("BAD_PREDICATE", path, f"unrecognized predicate shape with keys {sorted(keys)}")
        return depth

    def _check_exclusion(self, raw: Any, path: str) -> None:
        if not isinstance(raw, Mapping) or "predicate" not in raw or "reason" not in raw:
            self.add("BAD_TYPE", path, "exclusion entries need 'predicate' and 'reason'")
            return
        if not isinstance(raw["reason"], str) or not raw["reason"].strip():
            self.add("MISSING_FIELD", f"{path}.reason", "exclusion reason text is required")
        self._check_predicate(raw["predicate"], f"{path}.predicate", 1, allow_metadata=True)

    def _check_rule(self, raw: Any, path: str, depth: int) -> int:
        if depth > MAX_RULE_DEPTH:
            return depth
        if isinstance(raw, str):
            if self.outcomes and raw not in self.outcomes:
                self.add("UNKNOWN_OUTCOME", path, f"leaf outcome {raw!r} not in declared outcomes")
            return depth
        if isinstance(raw, Mapping) and set(raw.keys()) == {"if", "then", "else"}:
            pred_depth = self._check_predicate(raw["if"], f"{path}.if", depth + 1, allow_metadata=False)
            then_depth = self._check_rule(raw["then"], f"{path}.then", depth + 1)
            else_depth = self._check_rule(raw["else"], f"{path}.else", depth + 1)
            return max(pred_depth, then_depth, else_depth)
        self.add("BAD_RULE", path, "rule nodes are outcome strings or {'if','then','else'} objects")
        return depth


def validate_definition(raw: Mapping[str, Any]) -> list[Violation]:
    """Return all invariant violations for a raw parsed definition (empty if valid)."""
    return _RawValidator(raw).run()


def _parse_predicate(raw: Mapping[str, Any]) -> Predicate:
    keys = set(raw.keys())
    if keys == {"var", "op", "value"}:
        value = raw["value"]
        return Cmp(raw["var"], raw["op"], tuple(value) if isinstance(value, list) else value)
    if keys == {"all"}:
        return All(tuple(_parse_predicate(p) for p in raw["all"]))
    if keys == {"any"}:
        return AnyOf(tuple(_parse_predicate(p) for p in raw["any"]))
    return Not(_parse_predicate(raw["not"]))


def _parse_rule(raw: Any) -> RuleExpr:
    if isinstance(raw, str):
        return Leaf(raw)
    return If(_parse_predicate(raw["if"]), _parse_rule(raw["then"]), _parse_rule(raw["else"]))


def parse_definition(raw: Mapping[str, Any], source: str = "<memory>") -> CdrDefinition:
    """Validate and build a definition; raises RegistryLoadError listing violations."""
    violations = validate_definition(raw)
    if violations:
        detail = "; ".join(str(v) for v in violations)
        raise RegistryLoadError(f"{source}: invalid definition: {detail}")
    variables = tuple(
        VariableSpec(
            name=v["name"],
            vtype=VarType(v["vtype"]),
            definition=v["definition"],
            negative_default=v["negative_default"],
            required=bool(v.get("required", True)),
            values=tuple(v.get("values", ())),
        )
        for v in raw["variables"]
    )
    exclusions = tuple(
        ExclusionRule(predicate=_parse_predicate(e["predicate"]), reason=e["reason"])
        for e in raw.get("exclusions", ())
    )
    return CdrDefinition(
        id=raw["id"],
        name=raw["name"],
        description=raw["description"],
        keywords=tuple(raw.get("keywords", ())),
        variables=variables,
        exclusions=exclusions,
        rule=_parse_rule(raw["rule"]),
        outcomes=tuple(raw["outcomes"]),
        positive_outcomes=tuple(raw.get("positive_outcomes", ())),
    )


def _predicate_to_raw(pred: Predicate) -> dict[str, Any]:
    if isinstance(pred, Cmp):
        value = list(pred.value) if isinstance(pred.value, tuple) else pred.value
        return {"var": pred.var, "op": pred.op, "value": value}
    if isinstance(pred, All):
        return {"all": [_predicate_to_raw(p) for p in pred.preds]}
    if isinstance(pred, AnyOf):
        return {"any": [_predicate_to_raw(p) for p in pred.preds]}
    return {"not": _predicate_to_raw(pred.pred)}


def _rule_to_raw(rule: RuleExpr) -> Any:
    if isinstance(rule, Leaf):
        return rule.label
    return {"if": _predicate_to_raw(rule.pred), "then": _rule_to_raw(rule.then), "else": _rule_to_raw(rule.els)}


def definition_to_dict(d: CdrDefinition) -> dict[str, Any]:
    """Serialize back to the JSON file schema; round-trips through parse_definition."""
    raw_vars = []
    for v in d.variables:
        raw_var: dict[str, Any] = {
            "name": v.name,
            "vtype": v.vtype.value,
            "definition": v.definition,
            "negative_default": v.negative_default,
            "required": v.required,
        }
        if v.vtype is VarType.ENUM:
            raw_var["values"] = list(v.values)
        raw_vars.append(raw_var)
    return {
        "schema_version": SCHEMA_VERSION,
        "id": d.id,
        "name": d.name,
        "description": d.description,
        "keywords": list(d.keywords),
        "variables": raw_vars,
        "exclusions": [{"predicate": _predicate_to_raw(e.predicate), "reason": e.reason} for e in d.exclusions],
        "rule": _rule_to_raw(d.rule),
        "outcomes": list(d.outcomes),
        "positive_outcomes": list(d.positive_outcomes),
    }


def load_registry(dir_path: str | Path) -> Registry:
    """Load every *.json definition in a directory into an immutable registry.

    Ordering is deterministic (ascending id) and the digest depends only on
    definition content, not on file names or modification times.
    """
    directory = Path(dir_path)
    if not directory.is_dir():
        raise RegistryLoadError(f"{directory}: not a directory")
    paths = sorted(directory.glob("*.json"))
    if not paths:
        raise RegistryLoadError(f"{directory}: no definitions found")
    definitions: list[CdrDefinition] = []
    seen: dict[str, Path] = {}
    for path in paths:
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise RegistryLoadError(f"{path.name}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(raw, Mapping):
            raise RegistryLoadError(f"{path.name}: top-level value must be an object")
        definition = parse_definition(raw, source=path.name)
        if definition.id in seen:
            raise RegistryLoadError(
                f"{path.name}: duplicate id '{definition.id}' (also defined in {seen[definition.id].name})"
            )
        seen[definition.id] = path
        definitions.append(definition)
    definitions.sort(key=lambda d: d.id)
    digest = hashlib.sha256()
    for definition in definitions:
        canonical = json.dumps(definition_to_dict(definition), sort_keys=True, separators=(",", ":"))
        digest.update(canonical.encode("utf-8"))
    return Registry(definitions=tuple(definitions), source_digest=digest.hexdigest())


KEYWORD_PREFIX = "Keywords to consider often include: "


def selection_text(d: CdrDefinition, include_keywords: bool = True) -> str:
    """Text compared against notes during rule selection.

    With keywords enabled and present, appends exactly one line of synonym
    expansions so lexical variants of the rule's indicators still match.
    """
    if include_keywords and d.keywords:
        return f"{d.description}\n{KEYWORD_PREFIX}{', '.join(d.keywords)}"
    return d.description


def _predicate_vars(pred: Predicate) -> set[str]:
    if isinstance(pred, Cmp):
        return {pred.var}
    if isinstance(pred, (All, AnyOf)):
        out: set[str] = set()
        for p in pred.preds:
            out |= _predicate_vars(p)
        return out
    return _predicate_vars(pred.pred)


def referenced_variables(d: CdrDefinition) -> set[str]:
    """Every variable name reachable from the rule tree or the exclusions."""
    names: set[str] = set()
    stack: list[RuleExpr] = [d.rule]
    while stack:
        node = stack.pop()
        if isinstance(node, If):
            names |= _predicate_vars(node.pred)
            stack.append(node.then)
            stack.append(node.els)
    for exc in d.exclusions:
        names |= _predicate_vars(exc.predicate)
    return names


def unused_variables(d: CdrDefinition) -> list[str]:
    """Lint: declared variables never referenced by the rule or exclusions."""
    used = referenced_variables(d)
    return [name for name in d.variable_names if name not in used]
