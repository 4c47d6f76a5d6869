"""HTTP API over the pipeline, consumed by the CLI's serve mode and the UI."""

from __future__ import annotations

from typing import Any

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field
from scipy import stats

from .errors import SessionStateError, UnknownSessionError, VariableResolutionError
from .pipeline import SessionManager, session_to_dict
from .registry import VarType
from .selection import SelectionConfig


class AnalyzeRequest(BaseModel):
    note: str = Field(min_length=1)
    note_meta: dict[str, Any] | None = None
    overrides: dict[str, Any] | None = None


class ResolveRequest(BaseModel):
    cdr_id: str
    values: dict[str, Any]


_OVERRIDE_FIELDS = {
    "alpha", "num_truncations", "retention_ratio", "rng_seed", "include_keywords", "sigma_floor",
}


def _selection_with_overrides(base: SelectionConfig, overrides: dict[str, Any] | None) -> SelectionConfig:
    if not overrides:
        return base
    unknown = set(overrides) - _OVERRIDE_FIELDS - {"interactive"}
    if unknown:
        raise HTTPException(status_code=422, detail=f"unknown override fields: {sorted(unknown)}")
    kwargs = {k: v for k, v in overrides.items() if k in _OVERRIDE_FIELDS}
    try:
        return SelectionConfig(**{**base.__dict__, **kwargs})
    except (ValueError, TypeError) as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc


def session_payload(manager: SessionManager, session) -> dict[str, Any]:
    """Session wire format: the lossless session dict plus display helpers."""
    payload = session_to_dict(session)
    if payload["profile"] is not None:
        alpha = manager.config.selection.alpha
        payload["profile"]["alpha"] = alpha
        payload["profile"]["z_threshold"] = float(stats.norm.isf(alpha))
    return payload


def registry_payload(manager: SessionManager) -> list[dict[str, Any]]:
    out = []
    for d in manager.registry:
        out.append(
            {
                "id": d.id,
                "name": d.name,
                "description": d.description,
                "keywords": list(d.keywords),
                "outcomes": list(d.outcomes),
                "positive_outcomes": list(d.positive_outcomes),
                "variables": [
                    {
                        "name": v.name,
                        "vtype": v.vtype.value,
                        "definition": v.definition,
                        "required": v.required,
                        "values": list(v.values) if v.vtype is VarType.ENUM else None,
                    }
                    for v in d.variables
                ],
            }
        )
    return out


def create_app(manager: SessionManager) -> FastAPI:
    app = FastAPI(title="cdr-agent", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.get("/healthz")
    def healthz() -> dict[str, Any]:
        return {"status": "ok", "registry_size": len(manager.registry)}

    @app.get("/v1/registry")
    def get_registry() -> list[dict[str, Any]]:
        return registry_payload(manager)

    @app.post("/v1/analyze")
    def analyze(request: AnalyzeRequest) -> dict[str, Any]:
        selection = _selection_with_overrides(manager.config.selection, request.overrides)
        interactive = None
        if request.overrides and "interactive" in request.overrides:
            interactive = bool(request.overrides["interactive"])
        session = manager.analyze(
            request.note, request.note_meta, selection=selection, interactive=interactive
        )
        return session_payload(manager, session)

    @app.get("/v1/sessions/{session_id}")
    def get_session(session_id: str) -> dict[str, Any]:
        try:
            session = manager.get_session(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return session_payload(manager, session)

    @app.post("/v1/sessions/{session_id}/variables")
    def resolve(session_id: str, request: ResolveRequest) -> dict[str, Any]:
        try:
            session = manager.resolve_variables(session_id, request.cdr_id, request.values)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (VariableResolutionError, SessionStateError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return session_payload(manager, session)

    return app


def serve(manager: SessionManager, host: str = "127.0.0.1", port: int = 8000) -> None:
    """Run the API with uvicorn; returns when the server is shut down."""
    import uvicorn

    uvicorn.run(create_app(manager), host=host, port=port, log_level="info")
