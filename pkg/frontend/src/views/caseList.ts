/** Case browser with state / body-site / text filters and paging. */

import type { AppContext } from "../app.js";
import { clear, errorBox, h } from "../dom.js";
import { CASE_STATES, type CaseRecord } from "../types.js";

const PAGE_SIZE = 25;

interface Filters {
  state: string;
  body_site: string;
  text: string;
  page: number;
}

export async function renderCaseList(container: HTMLElement, ctx: AppContext): Promise<void> {
  const filters = ctx.drafts.get<Filters>("caseList")
    ?? { state: "", body_site: "", text: "", page: 1 };

  const stateSelect = h("select", {
    onchange: () => { filters.state = stateSelect.value; filters.page = 1; reload(); },
  }) as HTMLSelectElement;
  stateSelect.appendChild(h("option", { value: "" }, "any state"));
  for (const state of CASE_STATES) {
    stateSelect.appendChild(h("option", { value: state }, state));
  }
  stateSelect.value = filters.state;

  const siteInput = h("input", {
    type: "text", value: filters.body_site, placeholder: "exact body site",
  }) as HTMLInputElement;
  const textInput = h("input", {
    type: "text", value: filters.text, placeholder: "ref / site / notes contain",
  }) as HTMLInputElement;

  const tableSlot = h("div", {});
  const pager = h("div", { class: "pager" });

  async function reload(): Promise<void> {
    ctx.drafts.set("caseList", filters);
    clear(tableSlot);
    clear(pager);
    let cases: CaseRecord[];
    try {
      const page = await ctx.client.listCases({
        state: filters.state || undefined,
        body_site: filters.body_site || undefined,
        text: filters.text || undefined,
        page: filters.page,
        page_size: PAGE_SIZE,
      });
      cases = page.cases;
    } catch (err) {
      tableSlot.appendChild(errorBox(err instanceof Error ? err.message : String(err)));
      return;
    }

    if (cases.length === 0) {
      tableSlot.appendChild(h("p", {}, filters.page > 1 ? "no more cases" : "no matching cases"));
    } else {
      const body = h("tbody", {});
      for (const c of cases) {
        body.appendChild(h("tr", {},
          h("td", {}, h("a", { href: `#/cases/${c.case_id}` }, c.case_id)),
          h("td", {}, c.external_ref),
          h("td", {}, c.body_site),
          h("td", {}, c.postmortem_interval_hours === null
            ? "" : String(c.postmortem_interval_hours)),
          h("td", {}, h("span", { class: "state-tag" }, c.state)),
          h("td", {}, c.updated_at)));
      }
      tableSlot.appendChild(h("table", { class: "grid" },
        h("thead", {}, h("tr", {},
          h("th", {}, "case"), h("th", {}, "external ref"),
          h("th", {}, "body site"), h("th", {}, "PMI [h]"),
          h("th", {}, "state"), h("th", {}, "updated"))),
        body));
    }

    pager.appendChild(h("button", {
      class: "quiet", disabled: filters.page <= 1,
      onclick: () => { filters.page -= 1; reload(); },
    }, "previous"));
    pager.appendChild(h("span", {}, `page ${filters.page}`));
    pager.appendChild(h("button", {
      class: "quiet", disabled: cases.length < PAGE_SIZE,
      onclick: () => { filters.page += 1; reload(); },
    }, "next"));
  }

  container.appendChild(h("section", { class: "panel" },
    h("h2", {}, "Cases"),
    h("div", { class: "filters" },
      h("label", {}, "state ", stateSelect),
      h("label", {}, "body site ", siteInput),
      h("label", {}, "search ", textInput),
      h("button", {
        class: "quiet",
        onclick: () => {
          filters.body_site = siteInput.value.trim();
          filters.text = textInput.value.trim();
          filters.page = 1;
          reload();
        },
      }, "apply")),
    tableSlot,
    pager));
  await reload();
}
