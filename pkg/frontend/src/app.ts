/** Hash router and page shell.
 *
 * One App owns the client, the session, and the draft store; views are
 * plain functions handed a container and this context.  Any 401 while a
 * token is held drops the app back to the login screen, keeping every
 * draft the user has typed.
 */

import { ApiClient } from "./api.js";
import { clear, h } from "./dom.js";
import { DraftStore, loadSession, saveSession } from "./state.js";
import type { Session } from "./types.js";
import { renderCaseDetail } from "./views/caseDetail.js";
import { renderCaseForm } from "./views/caseForm.js";
import { renderCaseList } from "./views/caseList.js";
import { renderDashboard } from "./views/dashboard.js";
import { renderLogin } from "./views/login.js";

export interface AppContext {
  client: ApiClient;
  drafts: DraftStore;
  session: Session | null;
  /** One-shot banner shown on the login screen (e.g. after expiry). */
  loginNotice: string | null;
  navigate(hash: string): void;
  refresh(): Promise<void>;
  setSession(session: Session | null): void;
}

export interface AppOptions {
  /** Request prefix for the API client; empty when same-origin. */
  base?: string;
}

export class App implements AppContext {
  client: ApiClient;
  drafts = new DraftStore();
  session: Session | null = null;
  loginNotice: string | null = null;
  private root: HTMLElement;
  private onHashChange = () => {
    this.rendered = this.render();
  };
  /** Resolves when the most recent render settles; tests await this. */
  rendered: Promise<void> = Promise.resolve();

  constructor(root: HTMLElement, options: AppOptions = {}) {
    this.root = root;
    this.client = new ApiClient({
      base: options.base,
      onExpired: () => {
        this.setSession(null);
        this.loginNotice = "Session expired. Sign in to continue; unsaved form entries are kept.";
        this.navigate("#/login");
      },
    });
  }

  start(): void {
    this.session = loadSession();
    if (this.session) this.client.token = this.session.token;
    window.addEventListener("hashchange", this.onHashChange);
    this.rendered = this.render();
  }

  stop(): void {
    window.removeEventListener("hashchange", this.onHashChange);
  }

  navigate(hash: string): void {
    if (window.location.hash === hash) {
      this.rendered = this.render();
    } else {
      window.location.hash = hash;
    }
  }

  refresh(): Promise<void> {
    this.rendered = this.render();
    return this.rendered;
  }

  setSession(session: Session | null): void {
    this.session = session;
    this.client.token = session ? session.token : null;
    saveSession(session);
  }

  private topbar(): HTMLElement {
    const who = this.session
      ? h("span", { class: "who" },
          `${this.session.user_id} (${this.session.role}) `,
          h("a", {
            href: "#/login",
            onclick: (event: Event) => {
              event.preventDefault();
              this.setSession(null);
              this.loginNotice = null;
              this.navigate("#/login");
            },
          }, "sign out"))
      : h("span", { class: "who" }, "not signed in");
    return h("header", { class: "topbar" },
      h("h1", {}, "livorlab"),
      h("nav", {},
        h("a", { href: "#/" }, "Dashboard"),
        h("a", { href: "#/cases" }, "Cases"),
        h("a", { href: "#/cases/new" }, "New case")),
      who);
  }

  private async render(): Promise<void> {
    const hash = window.location.hash || "#/";
    const parts = hash.replace(/^#\//, "").split("/").filter((p) => p !== "");
    clear(this.root);
    this.root.appendChild(this.topbar());
    const page = h("main", {});
    this.root.appendChild(page);

    if (!this.session && parts[0] !== "login") {
      this.navigate("#/login");
      return;
    }
    try {
      if (parts[0] === "login") {
        renderLogin(page, this);
      } else if (parts.length === 0) {
        await renderDashboard(page, this);
      } else if (parts[0] === "cases" && parts.length === 1) {
        await renderCaseList(page, this);
      } else if (parts[0] === "cases" && parts[1] === "new") {
        renderCaseForm(page, this);
      } else if (parts[0] === "cases") {
        await renderCaseDetail(page, this, parts[1]);
      } else {
        await renderDashboard(page, this);
      }
    } catch (err) {
      // expiry mid-render: the onExpired hook has already queued the login
      // view, so only report errors for a still-live session
      if (this.session) {
        page.appendChild(h("div", { class: "error" },
          err instanceof Error ? err.message : String(err)));
      }
    }
  }
}

export function createApp(root: HTMLElement, options: AppOptions = {}): App {
  return new App(root, options);
}
