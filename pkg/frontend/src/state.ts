/** Session persistence and in-memory form drafts.
 *
 * Drafts deliberately live outside the DOM: when a token expires mid-session
 * the app swaps to the login view, and whatever the user had typed must
 * still be there after they sign back in.
 */

import type { Session } from "./types.js";

const SESSION_KEY = "livorlab.session";

export function loadSession(): Session | null {
  try {
    const raw = localStorage.getItem(SESSION_KEY);
    if (!raw) return null;
    const data = JSON.parse(raw) as Session;
    if (typeof data.token !== "string" || typeof data.user_id !== "string") return null;
    return data;
  } catch {
    return null;
  }
}

export function saveSession(session: Session | null): void {
  try {
    if (session === null) localStorage.removeItem(SESSION_KEY);
    else localStorage.setItem(SESSION_KEY, JSON.stringify(session));
  } catch {
    // storage unavailable; the session just won't survive a reload
  }
}

export class DraftStore {
  private drafts = new Map<string, unknown>();

  get<T>(key: string): T | undefined {
    return this.drafts.get(key) as T | undefined;
  }

  set(key: string, value: unknown): void {
    this.drafts.set(key, value);
  }

  discard(key: string): void {
    this.drafts.delete(key);
  }
}
