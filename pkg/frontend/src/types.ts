// Wire types mirroring the service payloads. The UI renders these verbatim
// and never derives clinical results on its own.

export type SessionStatus = "selected" | "awaiting_input" | "completed" | "error";

export type Provenance = "extracted" | "imputed" | "user_supplied";

export interface VariableValue {
  value: boolean | number | string;
  provenance: Provenance;
}

export interface CdrSimilarity {
  scores: number[];
  statistic: number;
  zscore: number;
}

export interface Profile {
  per_cdr: Record<string, CdrSimilarity>;
  mu_hat: number;
  sigma_hat: number;
  selected: string[];
  alpha?: number;
  z_threshold?: number;
}

export interface Extraction {
  cdr_id: string;
  values: Record<string, VariableValue>;
  missing: string[];
  warnings: string[];
  duration_s: number;
}

export interface ExclusionVerdict {
  cdr_id: string;
  excluded: boolean;
  reasons: string[];
}

export interface OutcomePayload {
  cdr_id: string;
  label: string;
  is_positive: boolean;
}

export interface CdrResult {
  kind: "outcome" | "excluded" | "error";
  outcome: OutcomePayload | null;
  reasons: string[];
  error: string | null;
  node_path: string | null;
}

export interface Report {
  order: string[];
  durations: Record<string, number>;
  per_cdr: Record<string, CdrResult>;
}

export interface SessionPayload {
  session_id: string;
  note: string;
  note_meta: Record<string, unknown>;
  status: SessionStatus;
  interactive: boolean;
  profile: Profile | null;
  extractions: Extraction[];
  verdicts: ExclusionVerdict[];
  pending: Record<string, string[]>;
  report: Report;
  timings: { t_sel: number; t_exe: number; t_tot: number };
  error: string | null;
}

export interface VariableSchema {
  name: string;
  vtype: "boolean" | "integer" | "float" | "string" | "enum";
  definition: string;
  required: boolean;
  values: string[] | null;
}

export interface RegistryRule {
  id: string;
  name: string;
  description: string;
  keywords: string[];
  outcomes: string[];
  positive_outcomes: string[];
  variables: VariableSchema[];
}

export type RegistryIndex = Map<string, RegistryRule>;

export function indexRegistry(rules: RegistryRule[]): RegistryIndex {
  return new Map(rules.map((rule) => [rule.id, rule]));
}
