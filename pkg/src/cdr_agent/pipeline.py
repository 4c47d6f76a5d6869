"""End-to-end orchestration: selection, extraction, exclusion, execution.

A SessionManager owns the registry, the providers, and a session store. In
non-interactive mode missing variables are imputed negatively and the session
completes in one call; in interactive mode they are parked as pending and the
session waits for resolve_variables() calls (typically from the HTTP API).
"""

from __future__ import annotations

import dataclasses
import json
import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .errors import (
    CdrAgentError,
    SessionStateError,
    UnknownSessionError,
    VariableResolutionError,
)
from .execution import CdrResult, ExecutionReport, Outcome, execute_all
from .extraction import (
    ExclusionVerdict,
    ExtractedVariables,
    Provenance,
    VariableValue,
    apply_exclusions,
    coerce_value,
    extract,
    impute_negative,
)
from .providers import EmbeddingCache, EmbeddingProvider, LlmProvider
from .registry import Registry, VariableSpec, VarType
from .selection import CdrSimilarity, SelectionConfig, SimilarityProfile, select_cdrs

logger = logging.getLogger(__name__)


class Status(str, Enum):
    SELECTED = "selected"
    AWAITING_INPUT = "awaiting_input"
    COMPLETED = "completed"
    ERROR = "error"


@dataclass(frozen=True)
class Timings:
    t_sel: float = 0.0
    t_exe: float = 0.0
    t_tot: float = 0.0


@dataclass
class PipelineConfig:
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    interactive: bool = False
    extraction_parallelism: int = 1
    session_ttl_s: float = 3600.0
    journal_path: str | None = None


@dataclass
class AnalysisSession:
    session_id: str
    note: str
    note_meta: dict[str, Any]
    status: Status
    profile: SimilarityProfile | None = None
    extractions: list[ExtractedVariables] = field(default_factory=list)
    verdicts: list[ExclusionVerdict] = field(default_factory=list)
    pending: dict[str, list[str]] = field(default_factory=dict)
    report: ExecutionReport = field(default_factory=ExecutionReport)
    timings: Timings = field(default_factory=Timings)
    interactive: bool = False
    error: str | None = None

    def extraction_for(self, cdr_id: str) -> ExtractedVariables:
        for ev in self.extractions:
            if ev.cdr_id == cdr_id:
                return ev
        raise KeyError(cdr_id)


class SessionStore:
    """In-memory session store with TTL expiry and an optional JSONL journal."""

    def __init__(self, ttl_s: float = 3600.0, journal_path: str | None = None):
        self.ttl_s = ttl_s
        self.journal_path = Path(journal_path) if journal_path else None
        self._sessions: dict[str, AnalysisSession] = {}
        self._expiry: dict[str, float] = {}
        self._lock = threading.Lock()

    def put(self, session: AnalysisSession) -> None:
        with self._lock:
            self._purge()
            self._sessions[session.session_id] = session
            self._expiry[session.session_id] = time.monotonic() + self.ttl_s
        self._journal(session)

    def get(self, session_id: str) -> AnalysisSession:
        with self._lock:
            self._purge()
            if session_id not in self._sessions:
                raise UnknownSessionError(f"unknown or expired session '{session_id}'")
            self._expiry[session_id] = time.monotonic() + self.ttl_s
            return self._sessions[session_id]

    def _purge(self) -> None:
        now = time.monotonic()
        for sid in [s for s, exp in self._expiry.items() if exp < now]:
            self._sessions.pop(sid, None)
            self._expiry.pop(sid, None)

    def _journal(self, session: AnalysisSession) -> None:
        if self.journal_path is None:
            return
        with self.journal_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(session_to_dict(session), sort_keys=True) + "\n")


class SessionManager:
    """Binds a registry and providers to the pipeline operations."""

    def __init__(
        self,
        registry: Registry,
        embedding_provider: EmbeddingProvider,
        llm_provider: LlmProvider,
        config: PipelineConfig | None = None,
    ):
        self.registry = registry
        self.embedding_provider = embedding_provider
        self.llm_provider = llm_provider
        self.config = config or PipelineConfig()
        self.cache = EmbeddingCache()
        self.store = SessionStore(self.config.session_ttl_s, self.config.journal_path)
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._session_locks.setdefault(session_id, threading.Lock())

    def analyze(
        self,
        note: str,
        note_meta: Mapping[str, Any] | None = None,
        selection: SelectionConfig | None = None,
        interactive: bool | None = None,
    ) -> AnalysisSession:
        """Run the full pipeline for one note and store the resulting session."""
        selection_config = selection or self.config.selection
        is_interactive = self.config.interactive if interactive is None else interactive
        session = AnalysisSession(
            session_id=uuid.uuid4().hex,
            note=note,
            note_meta=dict(note_meta or {}),
            status=Status.SELECTED,
            interactive=is_interactive,
        )
        start_total = time.perf_counter()
        try:
            start_sel = time.perf_counter()
            session.profile = select_cdrs(
                note, self.registry, selection_config, self.embedding_provider, self.cache
            )
            t_sel = time.perf_counter() - start_sel
        except CdrAgentError as exc:
            session.status = Status.ERROR
            session.error = f"selection failed: {exc}"
            session.timings = Timings(t_tot=time.perf_counter() - start_total)
            self.store.put(session)
            return session

        selected_defs = [self.registry.get(cdr_id) for cdr_id in session.profile.selected]
        per_cdr_seconds: dict[str, float] = {}

        def run_extract(d):
            return extract(note, d, self.llm_provider)

        extractions: dict[str, ExtractedVariables | Exception] = {}
        if self.config.extraction_parallelism > 1 and len(selected_defs) > 1:
            with ThreadPoolExecutor(max_workers=self.config.extraction_parallelism) as pool:
                futures = {d.id: pool.submit(run_extract, d) for d in selected_defs}
                for cdr_id, future in futures.items():
                    try:
                        extractions[cdr_id] = future.result()
                    except CdrAgentError as exc:
                        extractions[cdr_id] = exc
        else:
            for d in selected_defs:
                try:
                    extractions[d.id] = run_extract(d)
                except CdrAgentError as exc:
                    extractions[d.id] = exc

        ready: list[tuple[Any, ExtractedVariables, ExclusionVerdict]] = []
        failed: dict[str, str] = {}
        for d in selected_defs:
            result = extractions[d.id]
            if isinstance(result, Exception):
                failed[d.id] = f"extraction failed: {result}"
                continue
            per_cdr_seconds[d.id] = result.duration_s
            if is_interactive and result.missing:
                session.extractions.append(result)
                session.pending[d.id] = list(result.missing)
                continue
            completed = impute_negative(result, d)
            verdict = apply_exclusions(completed, session.note_meta, d)
            session.extractions.append(completed)
            session.verdicts.append(verdict)
            ready.append((d, completed, verdict))

        exec_report = execute_all(ready)
        for cdr_id, message in failed.items():
            exec_report.per_cdr[cdr_id] = CdrResult(kind="error", error=message)
        exec_report.order = tuple(
            d.id for d in selected_defs if d.id in exec_report.per_cdr
        )
        for cdr_id, seconds in exec_report.durations.items():
            per_cdr_seconds[cdr_id] = per_cdr_seconds.get(cdr_id, 0.0) + seconds
        session.report = exec_report

        t_tot = time.perf_counter() - start_total
        t_exe = sum(per_cdr_seconds.values()) / len(per_cdr_seconds) if per_cdr_seconds else 0.0
        session.timings = Timings(t_sel=t_sel, t_exe=t_exe, t_tot=t_tot)
        session.status = Status.AWAITING_INPUT if session.pending else Status.COMPLETED
        self.store.put(session)
        logger.info(
            "analyzed note (%d chars): %d selected, status=%s",
            len(note),
            len(session.profile.selected),
            session.status.value,
        )
        return session

    def get_session(self, session_id: str) -> AnalysisSession:
        return self.store.get(session_id)

    def resolve_variables(
        self, session_id: str, cdr_id: str, values: Mapping[str, Any]
    ) -> AnalysisSession:
        """Apply clinician-supplied values to pending variables of one rule.

        Rejected inputs (unknown variable, bad type) leave the session
        unchanged. Once a rule has no pending variables left it proceeds
        through exclusion and execution; once none remain anywhere the
        session completes.
        """
        with self._lock_for(session_id):
            session = self.store.get(session_id)
            if session.status is not Status.AWAITING_INPUT:
                raise SessionStateError(f"session is {session.status.value}, not awaiting input")
            if cdr_id not in session.pending:
                raise VariableResolutionError(f"rule '{cdr_id}' has no pending variables")
            d = self.registry.get(cdr_id)
            pending_names = set(session.pending[cdr_id])
            coerced: dict[str, Any] = {}
            for name, raw in values.items():
                if name not in pending_names:
                    raise VariableResolutionError(f"variable '{name}' is not pending for '{cdr_id}'")
                spec = d.variable(name)
                try:
                    coerced[name] = raw if _is_native(spec, raw) else coerce_value(spec, str(raw))
                except ValueError as exc:
                    raise VariableResolutionError(f"variable '{name}': {exc}") from exc

            ev = session.extraction_for(cdr_id)
            new_values = dict(ev.values)
            for name, value in coerced.items():
                new_values[name] = VariableValue(value=value, provenance=Provenance.USER_SUPPLIED)
            remaining = tuple(n for n in ev.missing if n not in coerced)
            updated = replace(ev, values=new_values, missing=remaining)
            session.extractions = [updated if e.cdr_id == cdr_id else e for e in session.extractions]
            session.pending[cdr_id] = [n for n in session.pending[cdr_id] if n not in coerced]

            if not session.pending[cdr_id]:
                del session.pending[cdr_id]
                completed = impute_negative(updated, d)
                verdict = apply_exclusions(completed, session.note_meta, d)
                session.extractions = [completed if e.cdr_id == cdr_id else e for e in session.extractions]
                session.verdicts.append(verdict)
                single = execute_all([(d, completed, verdict)])
                session.report.per_cdr[cdr_id] = single.per_cdr[cdr_id]
                session.report.durations[cdr_id] = single.durations[cdr_id]
                assert session.profile is not None
                session.report.order = tuple(
                    c for c in session.profile.selected if c in session.report.per_cdr
                )
            if not session.pending:
                session.status = Status.COMPLETED
            self.store.put(session)
            return session


def _is_native(spec: VariableSpec, value: Any) -> bool:
    if spec.vtype is VarType.BOOLEAN:
        return isinstance(value, bool)
    if spec.vtype is VarType.INTEGER:
        return isinstance(value, int) and not isinstance(value, bool)
    if spec.vtype is VarType.FLOAT:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if spec.vtype is VarType.ENUM:
        return isinstance(value, str) and value in spec.values
    return False


# ---------------------------------------------------------------------------
# Session serialization (lossless; used by the HTTP API and the journal)
# ---------------------------------------------------------------------------


def session_to_dict(session: AnalysisSession) -> dict[str, Any]:
    profile = None
    if session.profile is not None:
        profile = {
            "per_cdr": {
                cdr_id: {"scores": list(sim.scores), "statistic": sim.statistic, "zscore": sim.zscore}
                for cdr_id, sim in session.profile.per_cdr.items()
            },
            "mu_hat": session.profile.mu_hat,
            "sigma_hat": session.profile.sigma_hat,
            "selected": list(session.profile.selected),
        }
    report = {
        "order": list(session.report.order),
        "durations": dict(session.report.durations),
        "per_cdr": {
            cdr_id: {
                "kind": r.kind,
                "outcome": dataclasses.asdict(r.outcome) if r.outcome else None,
                "reasons": list(r.reasons),
                "error": r.error,
                "node_path": r.node_path,
            }
            for cdr_id, r in session.report.per_cdr.items()
        },
    }
    return {
        "session_id": session.session_id,
        "note": session.note,
        "note_meta": session.note_meta,
        "status": session.status.value,
        "interactive": session.interactive,
        "profile": profile,
        "extractions": [
            {
                "cdr_id": ev.cdr_id,
                "values": {
                    name: {"value": vv.value, "provenance": vv.provenance.value}
                    for name, vv in ev.values.items()
                },
                "missing": list(ev.missing),
                "warnings": list(ev.warnings),
                "duration_s": ev.duration_s,
            }
            for ev in session.extractions
        ],
        "verdicts": [
            {"cdr_id": v.cdr_id, "excluded": v.excluded, "reasons": list(v.reasons)}
            for v in session.verdicts
        ],
        "pending": {k: list(v) for k, v in session.pending.items()},
        "report": report,
        "timings": dataclasses.asdict(session.timings),
        "error": session.error,
    }


def session_from_dict(data: Mapping[str, Any]) -> AnalysisSession:
    profile = None
    if data.get("profile") is not None:
        raw = data["profile"]
        profile = SimilarityProfile(
            per_cdr={
                cdr_id: CdrSimilarity(
                    scores=tuple(sim["scores"]), statistic=sim["statistic"], zscore=sim["zscore"]
                )
                for cdr_id, sim in raw["per_cdr"].items()
            },
            mu_hat=raw["mu_hat"],
            sigma_hat=raw["sigma_hat"],
            selected=tuple(raw["selected"]),
        )
    raw_report = data.get("report") or {}
    report = ExecutionReport(
        per_cdr={
            cdr_id: CdrResult(
                kind=r["kind"],
                outcome=Outcome(**r["outcome"]) if r.get("outcome") else None,
                reasons=tuple(r.get("reasons", ())),
                error=r.get("error"),
                node_path=r.get("node_path"),
            )
            for cdr_id, r in raw_report.get("per_cdr", {}).items()
        },
        order=tuple(raw_report.get("order", ())),
        durations=dict(raw_report.get("durations", {})),
    )
    extractions = [
        ExtractedVariables(
            cdr_id=ev["cdr_id"],
            values={
                name: VariableValue(value=vv["value"], provenance=Provenance(vv["provenance"]))
                for name, vv in ev["values"].items()
            },
            missing=tuple(ev["missing"]),
            warnings=tuple(ev.get("warnings", ())),
            duration_s=ev.get("duration_s", 0.0),
        )
        for ev in data.get("extractions", ())
    ]
    return AnalysisSession(
        session_id=data["session_id"],
        note=data["note"],
        note_meta=dict(data.get("note_meta", {})),
        status=Status(data["status"]),
        interactive=bool(data.get("interactive", False)),
        profile=profile,
        extractions=extractions,
        verdicts=[
            ExclusionVerdict(cdr_id=v["cdr_id"], excluded=v["excluded"], reasons=tuple(v["reasons"]))
            for v in data.get("verdicts", ())
        ],
        pending={k: list(v) for k, v in data.get("pending", {}).items()},
        report=report,
        timings=Timings(**data.get("timings", {})),
        error=data.get("error"),
    )
