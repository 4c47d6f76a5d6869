// DOM wiring: note form on the left, session view on the right. At most one
// session mutation is in flight at any time; reads never block.

import { ApiClient, ApiError } from "./api.js";
import { renderErrorBanner, renderSession } from "./render.js";
import { indexRegistry, type RegistryIndex, type SessionPayload } from "./types.js";

export interface AppHandles {
  submitNote: () => Promise<void>;
  state: () => SessionPayload | null;
}

export function coerceFormValue(vtype: string, element: HTMLInputElement | HTMLSelectElement): unknown {
  if (vtype === "boolean") return (element as HTMLInputElement).checked;
  if (vtype === "integer") return parseInt(element.value, 10);
  if (vtype === "float") return parseFloat(element.value);
  return element.value;
}

export function mountApp(root: HTMLElement, client: ApiClient): AppHandles {
  root.innerHTML = `
    <header><h1>Decision rule triage</h1></header>
    <main>
      <section class="note-entry">
        <textarea id="note-input" placeholder="Paste the clinical note here"></textarea>
        <div class="meta-row">
          <label>Age (years) <input id="age-input" type="number" step="any" min="0" /></label>
          <label>Sex
            <select id="sex-input">
              <option value="">unspecified</option>
              <option value="female">female</option>
              <option value="male">male</option>
              <option value="other">other</option>
              <option value="unknown">unknown</option>
            </select>
          </label>
          <button id="submit-note" disabled>Analyze note</button>
        </div>
      </section>
      <section id="session-root" class="session-root"></section>
    </main>`;

  const noteInput = root.querySelector<HTMLTextAreaElement>("#note-input")!;
  const ageInput = root.querySelector<HTMLInputElement>("#age-input")!;
  const sexInput = root.querySelector<HTMLSelectElement>("#sex-input")!;
  const submitButton = root.querySelector<HTMLButtonElement>("#submit-note")!;
  const sessionRoot = root.querySelector<HTMLElement>("#session-root")!;

  let registry: RegistryIndex = new Map();
  let current: SessionPayload | null = null;
  let mutationInFlight = false;

  client
    .getRegistry()
    .then((rules) => {
      registry = indexRegistry(rules);
    })
    .catch(() => {
      sessionRoot.innerHTML = renderErrorBanner("Could not load the rule registry.", true);
    });

  noteInput.addEventListener("input", () => {
    submitButton.disabled = noteInput.value.trim().length === 0;
  });

  function show(payload: SessionPayload): void {
    current = payload;
    sessionRoot.innerHTML = renderSession(payload, registry);
  }

  function showFailure(error: unknown): void {
    if (error instanceof ApiError) {
      sessionRoot.innerHTML = renderErrorBanner(error.detail, false) + sessionRoot.innerHTML;
    } else {
      sessionRoot.innerHTML = renderErrorBanner(String(error), true) + sessionRoot.innerHTML;
    }
  }

  async function submitNote(): Promise<void> {
    const note = noteInput.value.trim();
    if (!note || mutationInFlight) return;
    mutationInFlight = true;
    submitButton.disabled = true;
    try {
      const noteMeta: Record<string, unknown> = {};
      if (ageInput.value) noteMeta.patient_age_years = parseFloat(ageInput.value);
      if (sexInput.value) noteMeta.patient_sex = sexInput.value;
      show(await client.analyze(note, { noteMeta }));
    } catch (error) {
      showFailure(error);
    } finally {
      mutationInFlight = false;
      submitButton.disabled = noteInput.value.trim().length === 0;
    }
  }

  submitButton.addEventListener("click", () => void submitNote());

  sessionRoot.addEventListener("submit", (event) => {
    const form = event.target as HTMLFormElement;
    if (!form.classList.contains("pending-form")) return;
    event.preventDefault();
    if (!current || mutationInFlight) return;
    const cdrId = form.dataset.cdr!;
    const values: Record<string, unknown> = {};
    form.querySelectorAll<HTMLInputElement | HTMLSelectElement>("[data-vtype]").forEach((el) => {
      values[el.name] = coerceFormValue(el.dataset.vtype!, el);
    });
    mutationInFlight = true;
    client
      .resolveVariables(current.session_id, cdrId, values)
      .then(show)
      .catch(showFailure)
      .finally(() => {
        mutationInFlight = false;
      });
  });

  sessionRoot.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.classList.contains("retry-button")) void submitNote();
  });

  return { submitNote, state: () => current };
}
