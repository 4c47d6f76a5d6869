from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

from cdr_agent.pipeline import PipelineConfig, SessionManager, session_from_dict
from cdr_agent.providers import MockEmbeddingProvider, MockLlmProvider, text_digest
from cdr_agent.selection import SelectionConfig
from cdr_agent.service import create_app

NOTE = (
    "Presents after blunt trauma to the neck and is held in a cervical collar pending "
    "cervical spine clearance. Palpation reveals midline spinal tenderness over the "
    "cervical spine. The patient denies intoxication and has no signs of impairment."
)


@pytest.fixture()
def manager(registry15):
    fixtures = {
        f"{text_digest(NOTE)}:nexus_cspine": (
            "midline_spinal_tenderness: yes\nintoxication: no\nfocal_neurologic_deficit: no"
        )
    }
    return SessionManager(
        registry15,
        MockEmbeddingProvider(),
        MockLlmProvider(fixtures=fixtures),
        PipelineConfig(selection=SelectionConfig(), interactive=True),
    )


@pytest.fixture()
def client(manager):
    return TestClient(create_app(manager))


class TestHealthAndRegistry:
    def test_healthz(self, client):
        response = client.get("/healthz")
        assert response.status_code == 200
        body = response.json()
        assert body["status"] == "ok"
        assert body["registry_size"] == 15

    def test_registry_listing(self, client):
        response = client.get("/v1/registry")
        assert response.status_code == 200
        rules = response.json()
        assert len(rules) == 15
        by_id = {r["id"]: r for r in rules}
        nexus = by_id["nexus_cspine"]
        assert {"id", "name", "description"} <= set(nexus)
        assert len(nexus["variables"]) == 5
        assert nexus["variables"][0]["vtype"] == "boolean"


class TestAnalyzeEndpoint:
    def test_analyze_matches_in_process_result(self, client, manager):
        response = client.post(
            "/v1/analyze", json={"note": NOTE, "note_meta": {"patient_age_years": 30.0}}
        )
        assert response.status_code == 200
        payload = response.json()
        direct = manager.analyze(NOTE, {"patient_age_years": 30.0})
        assert payload["status"] == direct.status.value
        assert payload["profile"]["selected"] == list(direct.profile.selected)
        assert payload["pending"] == {k: list(v) for k, v in direct.pending.items()}
        assert payload["profile"]["alpha"] == 0.05
        assert payload["profile"]["z_threshold"] == pytest.approx(1.6448536269514722)

    def test_payload_round_trips_to_session(self, client):
        payload = client.post("/v1/analyze", json={"note": NOTE}).json()
        session = session_from_dict(payload)
        assert session.session_id == payload["session_id"]
        assert session.note == NOTE

    def test_empty_note_is_422(self, client):
        assert client.post("/v1/analyze", json={"note": ""}).status_code == 422

    def test_malformed_body_is_422(self, client):
        assert client.post("/v1/analyze", json={"wrong": 1}).status_code == 422

    def test_overrides_applied(self, client):
        payload = client.post(
            "/v1/analyze",
            json={"note": NOTE, "overrides": {"alpha": 0.2, "interactive": False}},
        ).json()
        assert payload["status"] in ("completed", "awaiting_input")
        assert payload["pending"] == {}

    def test_unknown_override_rejected(self, client):
        response = client.post("/v1/analyze", json={"note": NOTE, "overrides": {"beta": 1}})
        assert response.status_code == 422


class TestSessionEndpoints:
    def test_get_session_round_trip(self, client):
        created = client.post(
            "/v1/analyze", json={"note": NOTE, "note_meta": {"patient_age_years": 30.0}}
        ).json()
        fetched = client.get(f"/v1/sessions/{created['session_id']}").json()
        assert fetched == created

    def test_unknown_session_404(self, client):
        assert client.get("/v1/sessions/doesnotexist").status_code == 404

    def test_resolve_flow_to_completion(self, client):
        created = client.post(
            "/v1/analyze", json={"note": NOTE, "note_meta": {"patient_age_years": 30.0}}
        ).json()
        assert created["status"] == "awaiting_input"
        pending = created["pending"]["nexus_cspine"]
        assert pending == ["altered_consciousness", "distracting_injury"]
        sid = created["session_id"]

        first = client.post(
            f"/v1/sessions/{sid}/variables",
            json={"cdr_id": "nexus_cspine", "values": {"altered_consciousness": False}},
        )
        assert first.status_code == 200
        assert first.json()["status"] == "awaiting_input"

        second = client.post(
            f"/v1/sessions/{sid}/variables",
            json={"cdr_id": "nexus_cspine", "values": {"distracting_injury": False}},
        )
        body = second.json()
        assert body["status"] == "completed"
        outcome = body["report"]["per_cdr"]["nexus_cspine"]["outcome"]
        assert outcome["label"] == "imaging recommended"
        values = body["extractions"][0]["values"]
        assert values["distracting_injury"]["provenance"] == "user_supplied"

    def test_bad_type_is_422_and_state_unchanged(self, client):
        created = client.post(
            "/v1/analyze", json={"note": NOTE, "note_meta": {"patient_age_years": 30.0}}
        ).json()
        sid = created["session_id"]
        response = client.post(
            f"/v1/sessions/{sid}/variables",
            json={"cdr_id": "nexus_cspine", "values": {"altered_consciousness": "perhaps"}},
        )
        assert response.status_code == 422
        after = client.get(f"/v1/sessions/{sid}").json()
        assert after["pending"] == created["pending"]

    def test_unknown_variable_is_422(self, client):
        created = client.post(
            "/v1/analyze", json={"note": NOTE, "note_meta": {"patient_age_years": 30.0}}
        ).json()
        response = client.post(
            f"/v1/sessions/{created['session_id']}/variables",
            json={"cdr_id": "nexus_cspine", "values": {"wizardry": True}},
        )
        assert response.status_code == 422

    def test_resolve_unknown_session_404(self, client):
        response = client.post(
            "/v1/sessions/missing/variables", json={"cdr_id": "nexus_cspine", "values": {}}
        )
        assert response.status_code == 404
