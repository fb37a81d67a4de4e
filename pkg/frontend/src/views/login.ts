/** Sign-in form.  The user id survives in a draft; the password never does. */

import type { AppContext } from "../app.js";
import { errorBox, h } from "../dom.js";
import { saveSession } from "../state.js";

interface LoginDraft {
  user_id: string;
}

export function renderLogin(container: HTMLElement, ctx: AppContext): void {
  const draft = ctx.drafts.get<LoginDraft>("login") ?? { user_id: "" };
  const panel = h("section", { class: "panel" });
  panel.appendChild(h("h2", {}, "Sign in"));
  if (ctx.loginNotice) {
    panel.appendChild(h("div", { class: "notice" }, ctx.loginNotice));
    ctx.loginNotice = null;
  }

  const userInput = h("input", {
    type: "text", name: "user_id", value: draft.user_id,
    autocomplete: "username", required: true,
    oninput: () => ctx.drafts.set("login", { user_id: userInput.value }),
  }) as HTMLInputElement;
  const passwordInput = h("input", {
    type: "password", name: "password",
    autocomplete: "current-password", required: true,
  }) as HTMLInputElement;
  const errorSlot = h("div", {});

  const form = h("form", {
    class: "stack",
    onsubmit: async (event: Event) => {
      event.preventDefault();
      errorSlot.replaceChildren();
      try {
        const session = await ctx.client.login(userInput.value.trim(), passwordInput.value);
        ctx.setSession(session);
        saveSession(session);
        ctx.drafts.discard("login");
        ctx.navigate("#/");
      } catch (err) {
        errorSlot.replaceChildren(errorBox(err instanceof Error ? err.message : String(err)));
      }
    },
  },
    h("label", {}, h("span", {}, "User id"), userInput),
    h("label", {}, h("span", {}, "Password"), passwordInput),
    errorSlot,
    h("button", { type: "submit" }, "Sign in"));
  panel.appendChild(form);
  container.appendChild(panel);
}
