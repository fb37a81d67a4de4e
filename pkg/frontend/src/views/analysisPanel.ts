/** Analysis configuration, submission, polling, and result display for one
 * measurement.
 *
 * The form edits a copy of the server's default configuration: tick the
 * parameters to float, adjust their bounds, pick the forward table and the
 * fit window.  Submission carries an idempotency key so a nervous double
 * click cannot queue two jobs.  Every displayed number in the result block
 * comes straight from the service response.
 */

import type { AppContext } from "../app.js";
import { renderOverlay } from "../chart.js";
import {
  defaultAnalysisSpec,
  FIT_PARAMETERS,
  PARAMETER_LABELS,
  type AnalysisSpec,
} from "../config.js";
import { errorBox, h } from "../dom.js";
import { pollJob } from "../polling.js";
import type { AnalysisRecord, FitResultPayload, Job, Measurement } from "../types.js";

interface FormDraft {
  free: string[];
  bounds: Record<string, [string, string]>;
  lut: string;
  grid: { start: string; stop: string; step: string };
}

function draftFromSpec(spec: AnalysisSpec): FormDraft {
  return {
    free: [...spec.fit.free_parameters],
    bounds: Object.fromEntries(FIT_PARAMETERS.map((name) => {
      const [lo, hi] = spec.fit.bounds[name];
      return [name, [String(lo), String(hi)] as [string, string]];
    })),
    lut: spec.lut,
    grid: {
      start: String(spec.grid.start_nm),
      stop: String(spec.grid.stop_nm),
      step: String(spec.grid.step_nm),
    },
  };
}

/** Fold the form back into a config payload; numeric junk goes to the
 * server as-is and comes back as its validation message. */
function specFromDraft(draft: FormDraft): AnalysisSpec {
  const spec = defaultAnalysisSpec();
  spec.fit.free_parameters = FIT_PARAMETERS.filter((name) => draft.free.includes(name));
  for (const name of FIT_PARAMETERS) {
    spec.fit.bounds[name] = [Number(draft.bounds[name][0]), Number(draft.bounds[name][1])];
  }
  spec.lut = draft.lut.trim() || "default";
  spec.grid = {
    start_nm: Number(draft.grid.start),
    stop_nm: Number(draft.grid.stop),
    step_nm: Number(draft.grid.step),
  };
  return spec;
}

/** randomUUID needs a secure context and the service is plain http, so
 * fall back to a time-and-randomness token. */
function newIdempotencyKey(): string {
  const c = globalThis.crypto;
  if (c && typeof c.randomUUID === "function") return c.randomUUID();
  return `ui-${Date.now().toString(36)}-${Math.random().toString(36).slice(2, 10)}`;
}

function fmt(v: number): string {
  if (!Number.isFinite(v)) return String(v);
  const a = Math.abs(v);
  if (a !== 0 && (a >= 1e5 || a < 1e-3)) return v.toExponential(4);
  return String(Number(v.toPrecision(6)));
}

function estimateRows(result: FitResultPayload): Array<{ name: string; value: number }> {
  const est = result.estimate;
  const dist = est.scatterer.distribution;
  return [
    { name: "c_hb", value: est.concentrations["hb"] ?? 0 },
    { name: "c_o2hb", value: est.concentrations["o2hb"] ?? 0 },
    { name: "c_cohb", value: est.concentrations["cohb"] ?? 0 },
    { name: "number_density", value: est.scatterer.number_density_per_mm3 },
    { name: "radius_um", value: Number(dist["median_radius_um"] ?? NaN) },
    { name: "calibration_factor", value: est.calibration_factor },
  ];
}

function renderResult(analysis: AnalysisRecord): HTMLElement {
  const result = analysis.result;
  const table = h("table", { class: "grid", "data-role": "estimate" });
  table.appendChild(h("thead", {}, h("tr", {},
    h("th", {}, "parameter"), h("th", {}, "value"), h("th", {}, ""))));
  const body = h("tbody", {});
  for (const row of estimateRows(result)) {
    const atBound = result.at_bound[row.name] === true;
    body.appendChild(h("tr", {
      class: atBound ? "at-bound" : "",
      "data-parameter": row.name,
    },
      h("td", {}, PARAMETER_LABELS[row.name] ?? row.name),
      h("td", { "data-role": "value" }, fmt(row.value)),
      h("td", {}, atBound ? "at bound" : "")));
  }
  table.appendChild(body);

  const summary = h("p", {},
    `converged: ${result.converged ? "yes" : "no"}, `
    + `iterations: ${result.iterations}, `
    + `chi2/dof: ${fmt(result.chi2_per_dof)}, `
    + `residual norm: ${fmt(result.residual_norm)}`);

  const block = h("div", { class: "analysis", "data-analysis": analysis.analysis_id });
  block.appendChild(h("h3", {},
    `Analysis ${analysis.analysis_id} `,
    h("span", { class: "state-tag" }, analysis.created_at),
    ` by ${analysis.created_by}, engine ${analysis.engine_version}`));
  block.appendChild(renderOverlay(analysis.measured ?? null, result.predicted));
  block.appendChild(summary);
  block.appendChild(table);
  const details = h("details", {},
    h("summary", {}, "configuration as run"),
    h("pre", { class: "config" }, JSON.stringify(analysis.config, null, 2)));
  block.appendChild(details);
  return block;
}

export function renderAnalysisPanel(
  container: HTMLElement,
  ctx: AppContext,
  measurement: Measurement,
  analyses: AnalysisRecord[],
): void {
  const panel = h("section", {
    class: "panel",
    "data-panel": "analysis",
    "data-measurement": measurement.measurement_id,
  });
  panel.appendChild(h("h2", {}, `Measurement ${measurement.measurement_id}`));
  panel.appendChild(h("p", {},
    `recorded ${measurement.recorded_at} by ${measurement.operator_id}`));

  for (const analysis of analyses) {
    panel.appendChild(renderResult(analysis));
  }
  if (analyses.length === 0) {
    panel.appendChild(h("p", {}, "no analyses yet"));
  }

  const draftKey = `analysis:${measurement.measurement_id}`;
  const draft = ctx.drafts.get<FormDraft>(draftKey) ?? draftFromSpec(defaultAnalysisSpec());
  const keep = () => ctx.drafts.set(draftKey, draft);

  const paramRows = h("tbody", {});
  for (const name of FIT_PARAMETERS) {
    const checkbox = h("input", { type: "checkbox", "data-free": name }) as HTMLInputElement;
    checkbox.checked = draft.free.includes(name);
    checkbox.addEventListener("change", () => {
      draft.free = checkbox.checked
        ? [...draft.free, name]
        : draft.free.filter((p) => p !== name);
      keep();
    });
    const lo = h("input", {
      type: "text", value: draft.bounds[name][0], size: 10, "data-bound": `${name}:lo`,
    }) as HTMLInputElement;
    const hi = h("input", {
      type: "text", value: draft.bounds[name][1], size: 10, "data-bound": `${name}:hi`,
    }) as HTMLInputElement;
    lo.addEventListener("input", () => { draft.bounds[name][0] = lo.value; keep(); });
    hi.addEventListener("input", () => { draft.bounds[name][1] = hi.value; keep(); });
    paramRows.appendChild(h("tr", {},
      h("td", {}, h("label", {}, checkbox, ` ${PARAMETER_LABELS[name] ?? name}`)),
      h("td", {}, lo),
      h("td", {}, hi)));
  }

  const lutInput = h("input", { type: "text", value: draft.lut, size: 14 }) as HTMLInputElement;
  lutInput.addEventListener("input", () => { draft.lut = lutInput.value; keep(); });
  const gridInputs = (["start", "stop", "step"] as const).map((key) => {
    const input = h("input", {
      type: "text", value: draft.grid[key], size: 6, "data-grid": key,
    }) as HTMLInputElement;
    input.addEventListener("input", () => { draft.grid[key] = input.value; keep(); });
    return input;
  });

  const statusLine = h("p", { "data-role": "job-status" });
  const errorSlot = h("div", {});
  const submitButton = h("button", { type: "submit" }, "Run analysis") as HTMLButtonElement;
  let idempotencyKey = newIdempotencyKey();

  const form = h("form", {
    class: "stack",
    onsubmit: async (event: Event) => {
      event.preventDefault();
      errorSlot.replaceChildren();
      const config = specFromDraft(draft) as unknown as Record<string, unknown>;
      submitButton.disabled = true;
      let job: Job;
      try {
        job = await ctx.client.submitAnalysis(
          measurement.measurement_id, config, idempotencyKey);
      } catch (err) {
        submitButton.disabled = false;
        errorSlot.replaceChildren(errorBox(err instanceof Error ? err.message : String(err)));
        return;
      }
      statusLine.replaceChildren(
        `job ${job.job_id}: `,
        h("span", { class: "job-status" }, job.status));
      const poll = pollJob(
        () => ctx.client.getJob(job.job_id),
        (update) => {
          const tag = h("span", {
            class: `job-status ${update.status === "Done" ? "done" : update.status === "Failed" ? "failed" : ""}`,
          }, update.status);
          statusLine.replaceChildren(`job ${update.job_id}: `, tag);
          if (update.status === "Failed" && update.error) {
            statusLine.appendChild(h("span", {}, ` ${update.error}`));
          }
        });
      try {
        const finished = await poll.done;
        idempotencyKey = newIdempotencyKey();
        if (finished.status === "Done") {
          ctx.drafts.discard(draftKey);
          await ctx.refresh();
          return;
        }
      } catch (err) {
        errorSlot.replaceChildren(errorBox(err instanceof Error ? err.message : String(err)));
      }
      submitButton.disabled = false;
    },
  },
    h("h3", {}, "New analysis"),
    h("table", { class: "grid" },
      h("thead", {}, h("tr", {},
        h("th", {}, "fit parameter"), h("th", {}, "lower bound"), h("th", {}, "upper bound"))),
      paramRows),
    h("label", {}, h("span", {}, "Forward table"), lutInput),
    h("label", {}, h("span", {}, "Fit window [nm]: start / stop / step"),
      gridInputs[0], " ", gridInputs[1], " ", gridInputs[2]),
    statusLine,
    errorSlot,
    submitButton);
  panel.appendChild(form);
  container.appendChild(panel);
}
