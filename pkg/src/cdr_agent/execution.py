"""Interpretation of rule-expression trees against typed variable assignments."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Iterable, Mapping

from .errors import IncompleteAssignmentError, MissingFieldError, RuleExecutionError
from .registry import All, AnyOf, CdrDefinition, Cmp, If, Not, Predicate, RuleExpr, VarType

if TYPE_CHECKING:  # avoids a runtime cycle; extraction imports eval_predicate
    from .extraction import ExclusionVerdict, ExtractedVariables

_NUMERIC_OPS = {"lt", "le", "gt", "ge"}


@dataclass(frozen=True)
class Outcome:
    cdr_id: str
    label: str
    is_positive: bool


@dataclass(frozen=True)
class CdrResult:
    """Per-rule result: exactly one of an outcome, an exclusion, or an error."""

    kind: str  # "outcome" | "excluded" | "error"
    outcome: Outcome | None = None
    reasons: tuple[str, ...] = ()
    error: str | None = None
    node_path: str | None = None


@dataclass
class ExecutionReport:
    per_cdr: dict[str, CdrResult] = field(default_factory=dict)
    order: tuple[str, ...] = ()
    durations: dict[str, float] = field(default_factory=dict)

    @property
    def outcomes(self) -> list[Outcome]:
        return [r.outcome for r in (self.per_cdr[c] for c in self.order) if r.outcome is not None]


def _compare(op: str, left: Any, right: Any, node_path: str) -> bool:
    if op == "eq":
        return left == right
    if op == "ne":
        return left != right
    if op == "in":
        return left in right
    if op in _NUMERIC_OPS:
        if isinstance(left, bool) or not isinstance(left, (int, float)):
            raise RuleExecutionError(f"operator '{op}' applied to non-numeric value {left!r}", node_path)
        if op == "lt":
            return left < right
        if op == "le":
            return left <= right
        if op == "gt":
            return left > right
        return left >= right
    raise RuleExecutionError(f"unknown operator '{op}'", node_path)


def eval_predicate(
    pred: Predicate,
    scope: Mapping[str, Any],
    node_path: str = "pred",
    *,
    on_missing: str = "error",
) -> bool:
    """Evaluate a predicate over a variable scope.

    on_missing="error" raises MissingFieldError for absent fields;
    on_missing="false" makes the comparison itself evaluate false.
    """
    if isinstance(pred, Cmp):
        if pred.var not in scope:
            if on_missing == "false":
                return False
            raise MissingFieldError(pred.var, node_path)
        return _compare(pred.op, scope[pred.var], pred.value, node_path)
    if isinstance(pred, All):
        return all(
            eval_predicate(p, scope, f"{node_path}.all[{i}]", on_missing=on_missing)
            for i, p in enumerate(pred.preds)
        )
    if isinstance(pred, AnyOf):
        return any(
            eval_predicate(p, scope, f"{node_path}.any[{i}]", on_missing=on_missing)
            for i, p in enumerate(pred.preds)
        )
    if isinstance(pred, Not):
        return not eval_predicate(pred.pred, scope, f"{node_path}.not", on_missing=on_missing)
    raise RuleExecutionError(f"unknown predicate node {type(pred).__name__}", node_path)


def _check_assignment(d: CdrDefinition, values: Mapping[str, Any]) -> None:
    missing = [name for name in d.variable_names if name not in values]
    if missing:
        raise IncompleteAssignmentError(d.id, missing)
    for spec in d.variables:
        value = values[spec.name]
        ok = True
        if spec.vtype is VarType.BOOLEAN:
            ok = isinstance(value, bool)
        elif spec.vtype is VarType.INTEGER:
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif spec.vtype is VarType.FLOAT:
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        elif spec.vtype is VarType.STRING:
            ok = isinstance(value, str)
        elif spec.vtype is VarType.ENUM:
            ok = value in spec.values
        if not ok:
            raise RuleExecutionError(
                f"value {value!r} is not a valid {spec.vtype.value} for variable '{spec.name}'",
                f"values.{spec.name}",
            )


def execute_rule(d: CdrDefinition, values: Mapping[str, Any]) -> Outcome:
    """Walk the decision tree to its unique leaf for a complete assignment."""
    _check_assignment(d, values)
    node: RuleExpr = d.rule
    node_path = "rule"
    while isinstance(node, If):
        if eval_predicate(node.pred, values, f"{node_path}.if"):
            node, node_path = node.then, f"{node_path}.then"
        else:
            node, node_path = node.els, f"{node_path}.else"
    return Outcome(cdr_id=d.id, label=node.label, is_positive=node.label in d.positive_outcomes)


def execute_all(
    selected: Iterable[tuple[CdrDefinition, ExtractedVariables, ExclusionVerdict]],
) -> ExecutionReport:
    """Execute each valid rule, isolating per-rule failures from the rest.

    Excluded rules are recorded with their reasons; execution errors never
    fabricate an outcome, they request manual review downstream instead.
    """
    report = ExecutionReport()
    order: list[str] = []
    for d, ev, verdict in selected:
        order.append(d.id)
        start = time.perf_counter()
        if verdict.excluded:
            report.per_cdr[d.id] = CdrResult(kind="excluded", reasons=tuple(verdict.reasons))
        else:
            try:
                plain = {name: vv.value for name, vv in ev.values.items()}
                outcome = execute_rule(d, plain)
                report.per_cdr[d.id] = CdrResult(kind="outcome", outcome=outcome)
            except (RuleExecutionError, MissingFieldError, IncompleteAssignmentError) as exc:
                node_path = getattr(exc, "node_path", None)
                report.per_cdr[d.id] = CdrResult(kind="error", error=str(exc), node_path=node_path)
        report.durations[d.id] = time.perf_counter() - start
    report.order = tuple(order)
    return report
