/** Landing page: case counts per lifecycle state and the newest cases.
 *
 * Counts come from one filtered query per state.  The list endpoint pages
 * without reporting totals, so a full page reads as "N+".
 */

import type { AppContext } from "../app.js";
import { h } from "../dom.js";
import { CASE_STATES } from "../types.js";

const COUNT_PAGE_SIZE = 500;
const RECENT_LIMIT = 8;

export async function renderDashboard(container: HTMLElement, ctx: AppContext): Promise<void> {
  const [recent, ...perState] = await Promise.all([
    ctx.client.listCases({ page_size: RECENT_LIMIT }),
    ...CASE_STATES.map((state) =>
      ctx.client.listCases({ state, page_size: COUNT_PAGE_SIZE })),
  ]);

  const counts = h("div", { class: "counts" });
  CASE_STATES.forEach((state, i) => {
    const n = perState[i].cases.length;
    counts.appendChild(h("div", { class: "card", "data-state": state },
      h("div", { class: "n" }, n >= COUNT_PAGE_SIZE ? `${n}+` : String(n)),
      h("div", { class: "label" }, state)));
  });

  const activity = h("ul", { class: "activity" });
  if (recent.cases.length === 0) {
    activity.appendChild(h("li", {}, "no cases yet"));
  }
  for (const c of recent.cases) {
    activity.appendChild(h("li", {},
      h("span", { class: "when" }, c.updated_at),
      h("a", { href: `#/cases/${c.case_id}` }, c.case_id),
      ` ${c.external_ref || "(no external ref)"} `,
      h("span", { class: "state-tag" }, c.state)));
  }

  container.appendChild(h("section", { class: "panel" },
    h("h2", {}, "Cases by state"), counts));
  container.appendChild(h("section", { class: "panel" },
    h("h2", {}, "Recent cases"), activity));
}
