/** One case: record fields, lifecycle moves, measurements with their
 * reflectance, and the analysis panel per measurement. */

import type { AppContext } from "../app.js";
import { renderChart, toPoints } from "../chart.js";
import { errorBox, h } from "../dom.js";
import { CASE_STATES, type CaseResults } from "../types.js";
import { renderAnalysisPanel } from "./analysisPanel.js";
import { renderUploadPanel } from "./uploadPanel.js";

function field(label: string, value: string): HTMLElement {
  return h("tr", {}, h("th", {}, label), h("td", {}, value));
}

export async function renderCaseDetail(
  container: HTMLElement,
  ctx: AppContext,
  caseId: string,
): Promise<void> {
  let results: CaseResults;
  try {
    results = await ctx.client.getResults(caseId);
  } catch (err) {
    container.appendChild(errorBox(err instanceof Error ? err.message : String(err)));
    return;
  }
  const record = results.case;

  const transitionError = h("div", {});
  const targetSelect = h("select", {}) as HTMLSelectElement;
  for (const state of CASE_STATES) {
    if (state !== record.state) {
      targetSelect.appendChild(h("option", { value: state }, state));
    }
  }

  const header = h("section", { class: "panel", "data-panel": "case" },
    h("h2", {}, `Case ${record.case_id} `, h("span", { class: "state-tag" }, record.state)),
    h("table", { class: "grid" },
      field("external ref", record.external_ref),
      field("body site", record.body_site),
      field("postmortem interval [h]", record.postmortem_interval_hours === null
        ? "" : String(record.postmortem_interval_hours)),
      field("notes", record.notes),
      field("created", record.created_at),
      field("updated", record.updated_at)),
    h("form", {
      class: "filters",
      onsubmit: async (event: Event) => {
        event.preventDefault();
        transitionError.replaceChildren();
        try {
          await ctx.client.transitionCase(record.case_id, targetSelect.value);
          await ctx.refresh();
        } catch (err) {
          transitionError.replaceChildren(
            errorBox(err instanceof Error ? err.message : String(err)));
        }
      },
    },
      h("label", {}, "move to ", targetSelect),
      h("button", { type: "submit" }, "Transition")),
    transitionError);
  container.appendChild(header);

  renderUploadPanel(container, ctx, record.case_id);

  for (const entry of results.measurements) {
    const section = h("div", {});
    const figure = h("figure", { class: "chart" });
    figure.appendChild(renderChart(
      [{ label: "reflectance", points: toPoints(entry.reflectance), kind: "line", color: "#2a5d8f" }],
      { yLabel: "reflectance", height: 220 }));
    figure.appendChild(h("figcaption", {},
      `derived reflectance, ${entry.reflectance.wavelengths_nm.length} points`));
    section.appendChild(figure);
    container.appendChild(section);
    renderAnalysisPanel(container, ctx, entry.measurement, entry.analyses);
  }
  if (results.measurements.length === 0) {
    container.appendChild(h("p", {}, "no measurements attached"));
  }
}
