/** New-case form.
 *
 * Server-side validation failures surface inline, unchanged.  Every
 * keystroke lands in the draft store so an expired session cannot eat the
 * form.
 */

import type { AppContext } from "../app.js";
import { errorBox, h } from "../dom.js";
import type { CaseDraft } from "../types.js";

const DRAFT_KEY = "caseForm";

const EMPTY: CaseDraft = {
  external_ref: "",
  body_site: "",
  postmortem_interval_hours: null,
  notes: "",
};

export function renderCaseForm(container: HTMLElement, ctx: AppContext): void {
  const draft: CaseDraft = { ...EMPTY, ...ctx.drafts.get<CaseDraft>(DRAFT_KEY) };

  const refInput = h("input", { type: "text", name: "external_ref", value: draft.external_ref }) as HTMLInputElement;
  const siteInput = h("input", { type: "text", name: "body_site", value: draft.body_site }) as HTMLInputElement;
  const pmiInput = h("input", {
    type: "number", name: "pmi", step: "any", min: "0",
    value: draft.postmortem_interval_hours === null ? "" : String(draft.postmortem_interval_hours),
  }) as HTMLInputElement;
  const notesInput = h("textarea", { name: "notes" }) as HTMLTextAreaElement;
  notesInput.value = draft.notes;

  const keep = () => {
    ctx.drafts.set(DRAFT_KEY, {
      external_ref: refInput.value,
      body_site: siteInput.value,
      postmortem_interval_hours: pmiInput.value === "" ? null : Number(pmiInput.value),
      notes: notesInput.value,
    } satisfies CaseDraft);
  };
  for (const input of [refInput, siteInput, pmiInput, notesInput]) {
    input.addEventListener("input", keep);
  }

  const errorSlot = h("div", {});
  const form = h("form", {
    class: "stack",
    onsubmit: async (event: Event) => {
      event.preventDefault();
      keep();
      errorSlot.replaceChildren();
      const current = ctx.drafts.get<CaseDraft>(DRAFT_KEY) ?? EMPTY;
      try {
        const record = await ctx.client.createCase({
          external_ref: current.external_ref.trim(),
          body_site: current.body_site.trim(),
          postmortem_interval_hours: current.postmortem_interval_hours,
          notes: current.notes,
        });
        ctx.drafts.discard(DRAFT_KEY);
        ctx.navigate(`#/cases/${record.case_id}`);
      } catch (err) {
        errorSlot.replaceChildren(errorBox(err instanceof Error ? err.message : String(err)));
      }
    },
  },
    h("label", {}, h("span", {}, "External reference"), refInput),
    h("label", {}, h("span", {}, "Body site"), siteInput),
    h("label", {}, h("span", {}, "Postmortem interval [hours]"), pmiInput),
    h("label", {}, h("span", {}, "Notes"), notesInput),
    errorSlot,
    h("button", { type: "submit" }, "Create case"));

  container.appendChild(h("section", { class: "panel" },
    h("h2", {}, "New case"), form));
}
