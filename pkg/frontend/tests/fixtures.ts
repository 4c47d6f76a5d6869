// A fixture-backed fake of the pipeline service. It is a literal state
// machine over canned payloads: nothing clinical is computed anywhere in the
// frontend stack, which is exactly what the tests assert.

import type { RegistryRule, SessionPayload } from "../src/types.js";

export const NONSENSE_OUTCOME = "zz-fixture-outcome-quetzal";

export const REGISTRY_FIXTURE: RegistryRule[] = [
  {
    id: "nexus_cspine",
    name: "Cervical Spine Imaging Screen",
    description: "Cervical spine imaging after blunt neck trauma.",
    keywords: ["c-spine"],
    outcomes: [NONSENSE_OUTCOME, "imaging not necessary"],
    positive_outcomes: [NONSENSE_OUTCOME],
    variables: [
      {
        name: "midline_spinal_tenderness",
        vtype: "boolean",
        definition: "Tenderness at the posterior midline of the neck.",
        required: true,
        values: null,
      },
      {
        name: "intoxication",
        vtype: "boolean",
        definition: "Clinical intoxication.",
        required: true,
        values: null,
      },
      {
        name: "pain_severity",
        vtype: "enum",
        definition: "Reported severity of neck pain.",
        required: true,
        values: ["low", "high"],
      },
    ],
  },
];

function basePayload(): Omit<SessionPayload, "status" | "pending" | "report"> {
  return {
    session_id: "sess-1",
    note: "fixture note",
    note_meta: { patient_age_years: 30 },
    interactive: true,
    profile: {
      per_cdr: {
        nexus_cspine: { scores: [0.61, 0.59], statistic: 0.6, zscore: 3.1 },
        other_rule: { scores: [0.2, 0.22], statistic: 0.21, zscore: -0.4 },
      },
      mu_hat: 0.25,
      sigma_hat: 0.11,
      selected: ["nexus_cspine"],
      alpha: 0.05,
      z_threshold: 1.6449,
    },
    extractions: [
      {
        cdr_id: "nexus_cspine",
        values: {
          intoxication: { value: false, provenance: "extracted" },
        },
        missing: ["midline_spinal_tenderness", "pain_severity"],
        warnings: [],
        duration_s: 0.01,
      },
    ],
    verdicts: [],
    timings: { t_sel: 0.004, t_exe: 0.01, t_tot: 0.02 },
    error: null,
  };
}

export function awaitingPayload(): SessionPayload {
  return {
    ...basePayload(),
    status: "awaiting_input",
    pending: { nexus_cspine: ["midline_spinal_tenderness", "pain_severity"] },
    report: { order: [], durations: {}, per_cdr: {} },
  };
}

export function completedPayload(): SessionPayload {
  const base = basePayload();
  return {
    ...base,
    status: "completed",
    pending: {},
    extractions: [
      {
        ...base.extractions[0],
        values: {
          intoxication: { value: false, provenance: "extracted" },
          midline_spinal_tenderness: { value: true, provenance: "user_supplied" },
          pain_severity: { value: "high", provenance: "user_supplied" },
        },
        missing: [],
      },
    ],
    report: {
      order: ["nexus_cspine"],
      durations: { nexus_cspine: 0.0001 },
      per_cdr: {
        nexus_cspine: {
          kind: "outcome",
          outcome: { cdr_id: "nexus_cspine", label: NONSENSE_OUTCOME, is_positive: true },
          reasons: [],
          error: null,
          node_path: null,
        },
      },
    },
  };
}

export function selectedPayload(): SessionPayload {
  return {
    ...basePayload(),
    status: "selected",
    extractions: [],
    pending: {},
    report: { order: [], durations: {}, per_cdr: {} },
  };
}

export function errorPayload(): SessionPayload {
  return {
    ...basePayload(),
    status: "error",
    profile: null,
    extractions: [],
    pending: {},
    report: { order: [], durations: {}, per_cdr: {} },
    error: "selection failed: embedding endpoint down",
  };
}

type RecordedRequest = { method: string; path: string; body: unknown };

/** In-memory service double exposing a fetch-compatible function. */
export class FakeService {
  requests: RecordedRequest[] = [];
  private session: SessionPayload | null = null;

  fetch = async (input: RequestInfo | URL, init?: RequestInit): Promise<Response> => {
    const url = String(input);
    const path = url.replace(/^https?:\/\/[^/]+/, "");
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : null;
    this.requests.push({ method, path, body });

    if (method === "GET" && path === "/v1/registry") {
      return json(200, REGISTRY_FIXTURE);
    }
    if (method === "POST" && path === "/v1/analyze") {
      this.session = awaitingPayload();
      return json(200, this.session);
    }
    if (method === "GET" && path.startsWith("/v1/sessions/")) {
      if (!this.session) return json(404, { detail: "unknown session" });
      return json(200, this.session);
    }
    if (method === "POST" && path.endsWith("/variables")) {
      if (!this.session) return json(404, { detail: "unknown session" });
      const values = (body as { values: Record<string, unknown> }).values;
      if ("midline_spinal_tenderness" in values && typeof values.midline_spinal_tenderness !== "boolean") {
        return json(422, { detail: "variable 'midline_spinal_tenderness': not a boolean" });
      }
      const pending = this.session.pending.nexus_cspine.filter((n) => !(n in values));
      this.session =
        pending.length === 0
          ? completedPayload()
          : { ...this.session, pending: { nexus_cspine: pending } };
      return json(200, this.session);
    }
    return json(404, { detail: `no route for ${method} ${path}` });
  };
}

function json(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
