// Pure renderers: service payload in, HTML string out. Everything clinical on
// screen is copied from the payload; nothing is recomputed here.

import type {
  Extraction,
  Profile,
  RegistryIndex,
  Report,
  SessionPayload,
  VariableSchema,
} from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

const STATUS_LABELS: Record<string, string> = {
  selected: "Rules selected, extraction in progress",
  awaiting_input: "Waiting for clinician input",
  completed: "Completed",
  error: "Pipeline error",
};

export function renderStatusBadge(status: string): string {
  const label = STATUS_LABELS[status] ?? status;
  return `<span class="status-badge" data-status="${escapeHtml(status)}">${escapeHtml(label)}</span>`;
}

function barWidth(zscore: number): number {
  // Purely visual scaling of the z-axis onto 0..100%.
  const clamped = Math.max(-3, Math.min(5, zscore));
  return Math.round(((clamped + 3) / 8) * 100);
}

export function renderSelectionPanel(profile: Profile, registry: RegistryIndex): string {
  const threshold = profile.z_threshold;
  const rows = Object.entries(profile.per_cdr)
    .sort(([, a], [, b]) => b.statistic - a.statistic)
    .map(([cdrId, sim]) => {
      const selected = profile.selected.includes(cdrId);
      const name = registry.get(cdrId)?.name ?? cdrId;
      return `
        <div class="similarity-row${selected ? " selected" : ""}" data-cdr="${escapeHtml(cdrId)}">
          <span class="cdr-name" title="${escapeHtml(name)}">${escapeHtml(cdrId)}</span>
          <div class="bar-track">
            ${threshold !== undefined ? `<div class="threshold-line" style="left: ${barWidth(threshold)}%"></div>` : ""}
            <div class="bar" style="width: ${barWidth(sim.zscore)}%"></div>
          </div>
          <span class="zscore">z = ${sim.zscore.toFixed(2)}</span>
          ${selected ? '<span class="selected-mark">selected</span>' : ""}
        </div>`;
    })
    .join("");
  const summary =
    profile.selected.length === 0
      ? '<p class="no-selection">No applicable rule: every similarity score is within the fitted null.</p>'
      : "";
  const alphaNote =
    profile.alpha !== undefined
      ? `<p class="panel-note">Upper-tail anomaly test at significance ${escapeHtml(String(profile.alpha))}; the tick marks the selection threshold.</p>`
      : "";
  return `<section class="panel selection-panel"><h2>Similarity profile</h2>${alphaNote}${rows}${summary}</section>`;
}

function provenanceBadge(provenance: string): string {
  return `<span class="provenance" data-provenance="${escapeHtml(provenance)}">${escapeHtml(
    provenance.replace("_", " "),
  )}</span>`;
}

export function renderVariableTable(extraction: Extraction): string {
  const rows = Object.entries(extraction.values)
    .map(
      ([name, vv]) => `
      <tr>
        <td class="var-name">${escapeHtml(name)}</td>
        <td class="var-value">${escapeHtml(String(vv.value))}</td>
        <td>${provenanceBadge(vv.provenance)}</td>
      </tr>`,
    )
    .join("");
  const missing = extraction.missing.length
    ? `<p class="missing-note">Awaiting values: ${extraction.missing.map(escapeHtml).join(", ")}</p>`
    : "";
  return `<table class="variable-table"><tbody>${rows}</tbody></table>${missing}`;
}

function inputFor(schema: VariableSchema): string {
  const name = escapeHtml(schema.name);
  switch (schema.vtype) {
    case "boolean":
      return `<input type="checkbox" name="${name}" data-vtype="boolean" />`;
    case "integer":
      return `<input type="number" step="1" name="${name}" data-vtype="integer" required />`;
    case "float":
      return `<input type="number" step="any" name="${name}" data-vtype="float" required />`;
    case "enum": {
      const options = (schema.values ?? [])
        .map((v) => `<option value="${escapeHtml(v)}">${escapeHtml(v)}</option>`)
        .join("");
      return `<select name="${name}" data-vtype="enum">${options}</select>`;
    }
    default:
      return `<input type="text" name="${name}" data-vtype="string" required />`;
  }
}

export function renderPendingForm(
  cdrId: string,
  pendingNames: string[],
  registry: RegistryIndex,
): string {
  const rule = registry.get(cdrId);
  const fields = pendingNames
    .map((name) => {
      const schema = rule?.variables.find((v) => v.name === name);
      const control = schema
        ? inputFor(schema)
        : `<input type="text" name="${escapeHtml(name)}" data-vtype="string" />`;
      const definition = schema ? escapeHtml(schema.definition) : "";
      return `
        <label class="pending-field">
          <span class="pending-name">${escapeHtml(name)}</span>
          <span class="pending-definition">${definition}</span>
          ${control}
        </label>`;
    })
    .join("");
  return `
    <form class="pending-form" data-cdr="${escapeHtml(cdrId)}">
      <h3>Missing values for ${escapeHtml(rule?.name ?? cdrId)}</h3>
      ${fields}
      <button type="submit">Submit values</button>
    </form>`;
}

export function renderOutcomes(report: Report, registry: RegistryIndex): string {
  const items = report.order
    .map((cdrId) => {
      const result = report.per_cdr[cdrId];
      const name = escapeHtml(registry.get(cdrId)?.name ?? cdrId);
      if (result.kind === "outcome" && result.outcome) {
        const positive = result.outcome.is_positive;
        return `
          <li class="outcome${positive ? " positive" : ""}" data-cdr="${escapeHtml(cdrId)}">
            <span class="outcome-rule">${name}</span>
            <span class="outcome-label">${escapeHtml(result.outcome.label)}</span>
            ${positive ? '<span class="positive-flag">intervention</span>' : ""}
          </li>`;
      }
      if (result.kind === "excluded") {
        return `
          <li class="outcome excluded" data-cdr="${escapeHtml(cdrId)}">
            <span class="outcome-rule">${name}</span>
            <span class="outcome-label">excluded: ${result.reasons.map(escapeHtml).join("; ")}</span>
          </li>`;
      }
      return `
        <li class="outcome error" data-cdr="${escapeHtml(cdrId)}">
          <span class="outcome-rule">${name}</span>
          <span class="outcome-label">needs manual review: ${escapeHtml(result.error ?? "execution error")}</span>
        </li>`;
    })
    .join("");
  if (!items) {
    return '<section class="panel outcomes-panel"><h2>Outcomes</h2><p class="no-selection">No applicable rule for this note.</p></section>';
  }
  return `<section class="panel outcomes-panel"><h2>Outcomes</h2><ul class="outcome-list">${items}</ul></section>`;
}

export function renderErrorBanner(message: string, retryable: boolean): string {
  return `
    <div class="error-banner" role="alert">
      <strong>${retryable ? "Service unreachable." : "Request rejected."}</strong>
      <span>${escapeHtml(message)}</span>
      ${retryable ? '<button type="button" class="retry-button">Retry</button>' : ""}
    </div>`;
}

export function renderSession(payload: SessionPayload, registry: RegistryIndex): string {
  const parts: string[] = [
    `<div class="session" data-status="${escapeHtml(payload.status)}">`,
    renderStatusBadge(payload.status),
  ];
  if (payload.status === "error") {
    parts.push(renderErrorBanner(payload.error ?? "unknown pipeline error", false));
    parts.push("</div>");
    return parts.join("\n");
  }
  if (payload.profile) {
    parts.push(renderSelectionPanel(payload.profile, registry));
  }
  const pendingIds = Object.keys(payload.pending);
  if (pendingIds.length > 0) {
    const forms = pendingIds
      .map((cdrId) => renderPendingForm(cdrId, payload.pending[cdrId], registry))
      .join("");
    parts.push(`<section class="panel pending-panel"><h2>Clinician input needed</h2>${forms}</section>`);
  }
  const extraction_blocks = payload.extractions
    .map(
      (extraction) => `
      <details class="extraction" data-cdr="${escapeHtml(extraction.cdr_id)}">
        <summary>${escapeHtml(registry.get(extraction.cdr_id)?.name ?? extraction.cdr_id)}</summary>
        ${renderVariableTable(extraction)}
      </details>`,
    )
    .join("");
  if (extraction_blocks) {
    parts.push(`<section class="panel extraction-panel"><h2>Extracted variables</h2>${extraction_blocks}</section>`);
  }
  if (payload.status === "completed" || payload.report.order.length > 0) {
    parts.push(renderOutcomes(payload.report, registry));
  }
  if (payload.status === "selected") {
    parts.push('<p class="panel-note">Variable extraction has not finished yet.</p>');
  }
  parts.push("</div>");
  return parts.join("\n");
}
