/** Three-file measurement upload with a local preflight.
 *
 * Nothing leaves the browser until all three CSVs parse and share one
 * wavelength grid; the verdict lists row counts per file.  Checks the
 * server alone can make (degenerate white/dark, case state) come back as
 * its error text and are shown word for word.
 */

import type { AppContext } from "../app.js";
import { renderChart, type Series } from "../chart.js";
import { preflightBundle, type PreflightResult } from "../csv.js";
import { clear, errorBox, h } from "../dom.js";

/** Blob.text() where available, FileReader everywhere else. */
function readText(file: File): Promise<string> {
  if (typeof file.text === "function") return file.text();
  return new Promise((resolve, reject) => {
    const reader = new FileReader();
    reader.onerror = () => reject(reader.error ?? new Error("file read failed"));
    reader.onload = () => resolve(String(reader.result));
    reader.readAsText(file);
  });
}

export function renderUploadPanel(
  container: HTMLElement,
  ctx: AppContext,
  caseId: string,
): void {
  const sampleInput = h("input", { type: "file", name: "sample", accept: ".csv,text/csv" }) as HTMLInputElement;
  const whiteInput = h("input", { type: "file", name: "white", accept: ".csv,text/csv" }) as HTMLInputElement;
  const darkInput = h("input", { type: "file", name: "dark", accept: ".csv,text/csv" }) as HTMLInputElement;
  const verdict = h("div", {});
  const preview = h("div", {});
  const errorSlot = h("div", {});
  const uploadButton = h("button", { type: "submit", disabled: true }, "Upload measurement") as HTMLButtonElement;

  let checked: PreflightResult | null = null;
  let texts: { sample: string; white: string; dark: string } | null = null;

  async function runPreflight(): Promise<void> {
    clear(verdict);
    clear(preview);
    errorSlot.replaceChildren();
    checked = null;
    texts = null;
    uploadButton.disabled = true;
    const files = [sampleInput.files?.[0], whiteInput.files?.[0], darkInput.files?.[0]];
    if (files.some((f) => !f)) return;
    const [sample, white, dark] = await Promise.all(files.map((f) => readText(f!)));
    texts = { sample, white, dark };
    checked = preflightBundle(texts);

    const list = h("ul", { class: checked.ok ? "activity" : "activity preflight-failed" });
    for (const message of checked.messages) {
      list.appendChild(h("li", {}, message));
    }
    verdict.appendChild(checked.ok
      ? h("div", { class: "notice", "data-preflight": "ok" }, list)
      : h("div", { class: "error", "data-preflight": "blocked" },
          "Upload blocked by local checks:", list));
    if (checked.ok && checked.spectra) {
      const colors = { sample: "#2a5d8f", white: "#68707e", dark: "#a4343a" };
      const series: Series[] = (["sample", "white", "dark"] as const).map((name) => ({
        label: name,
        kind: "line",
        color: colors[name],
        points: checked!.spectra![name].wavelengths.map((wl, i) => ({
          x: wl,
          y: checked!.spectra![name].values[i],
        })),
      }));
      const figure = h("figure", { class: "chart" });
      figure.appendChild(renderChart(series, { yLabel: "raw counts", height: 220 }));
      figure.appendChild(h("figcaption", {}, "raw counts as uploaded: sample (blue), white (grey), dark (red)"));
      preview.appendChild(figure);
      uploadButton.disabled = false;
    }
  }

  for (const input of [sampleInput, whiteInput, darkInput]) {
    input.addEventListener("change", () => { void runPreflight(); });
  }

  const form = h("form", {
    class: "stack",
    onsubmit: async (event: Event) => {
      event.preventDefault();
      if (!checked?.ok || !texts) return;
      errorSlot.replaceChildren();
      const files = {
        sample: { name: sampleInput.files?.[0]?.name ?? "sample.csv", text: texts.sample },
        white: { name: whiteInput.files?.[0]?.name ?? "white.csv", text: texts.white },
        dark: { name: darkInput.files?.[0]?.name ?? "dark.csv", text: texts.dark },
      };
      try {
        await ctx.client.uploadMeasurement(caseId, files);
        await ctx.refresh();
      } catch (err) {
        errorSlot.replaceChildren(errorBox(err instanceof Error ? err.message : String(err)));
      }
    },
  },
    h("label", {}, h("span", {}, "Sample counts (CSV)"), sampleInput),
    h("label", {}, h("span", {}, "White reference (CSV)"), whiteInput),
    h("label", {}, h("span", {}, "Dark reference (CSV)"), darkInput),
    verdict,
    preview,
    errorSlot,
    uploadButton);

  container.appendChild(h("section", { class: "panel", "data-panel": "upload" },
    h("h2", {}, "Attach measurement"), form));
}
