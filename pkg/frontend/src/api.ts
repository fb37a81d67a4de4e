/** Thin fetch wrapper around the service endpoints.
 *
 * Every method returns the parsed response body unchanged; nothing here
 * rewrites or post-processes server data.  Failures surface as ApiError with
 * the server's own detail string so forms can show it verbatim.
 */

import type {
  AuditEntry,
  CasePage,
  CaseRecord,
  CaseResults,
  Job,
  Measurement,
  Session,
} from "./types.js";

export class ApiError extends Error {
  status: number;

  constructor(status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
    this.status = status;
  }
}

/** A file to upload, already read into text by the caller. */
export interface TextFile {
  name: string;
  text: string;
}

interface MultipartRequest {
  contentType: string;
  body: string;
}

/** Assemble a multipart/form-data body by hand.
 *
 * The uploads are small CSV texts, so a string body is enough; it keeps the
 * client independent of whichever File/FormData classes the host provides,
 * which differ between browsers and embedded DOM runtimes.
 */
function multipartForm(
  fields: Record<string, string>,
  files: Record<string, TextFile>,
): MultipartRequest {
  const boundary = `----livorlab${Date.now().toString(36)}${Math.random().toString(36).slice(2)}`;
  let body = "";
  for (const [name, value] of Object.entries(fields)) {
    body += `--${boundary}\r\nContent-Disposition: form-data; name="${name}"\r\n\r\n${value}\r\n`;
  }
  for (const [name, file] of Object.entries(files)) {
    const filename = file.name.replace(/[\r\n"\\]/g, "_");
    body += `--${boundary}\r\nContent-Disposition: form-data; name="${name}"; filename="${filename}"\r\n`
      + `Content-Type: text/csv\r\n\r\n${file.text}\r\n`;
  }
  return {
    contentType: `multipart/form-data; boundary=${boundary}`,
    body: body + `--${boundary}--\r\n`,
  };
}

interface ClientOptions {
  /** Prefix for request paths; empty when served from the same origin. */
  base?: string;
  /** Called once when a request comes back 401 with a token attached. */
  onExpired?: () => void;
}

export class ApiClient {
  private base: string;
  private onExpired: () => void;
  token: string | null = null;

  constructor(options: ClientOptions = {}) {
    this.base = options.base ?? "";
    this.onExpired = options.onExpired ?? (() => {});
  }

  private async request<T>(
    method: string,
    path: string,
    options: { body?: unknown; form?: MultipartRequest; headers?: Record<string, string> } = {},
  ): Promise<T> {
    const headers: Record<string, string> = { ...options.headers };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    let body: BodyInit | undefined;
    if (options.form !== undefined) {
      headers["Content-Type"] = options.form.contentType;
      body = options.form.body;
    } else if (options.body !== undefined) {
      headers["Content-Type"] = "application/json";
      body = JSON.stringify(options.body);
    }
    const response = await fetch(this.base + path, { method, headers, body });
    if (response.status === 401 && this.token) {
      this.token = null;
      this.onExpired();
    }
    if (!response.ok) {
      let detail = `${response.status} ${response.statusText}`;
      try {
        const data = await response.json();
        if (typeof data.detail === "string") detail = data.detail;
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  async login(userId: string, password: string): Promise<Session> {
    const session = await this.request<Session>("POST", "/api/login", {
      body: { user_id: userId, password },
    });
    this.token = session.token;
    return session;
  }

  listCases(params: { state?: string; body_site?: string; text?: string; page?: number; page_size?: number } = {}): Promise<CasePage> {
    const query = new URLSearchParams();
    for (const [key, value] of Object.entries(params)) {
      if (value !== undefined && value !== "") query.set(key, String(value));
    }
    const suffix = query.toString() ? `?${query}` : "";
    return this.request<CasePage>("GET", `/api/cases${suffix}`);
  }

  getCase(caseId: string): Promise<CaseRecord> {
    return this.request<CaseRecord>("GET", `/api/cases/${caseId}`);
  }

  createCase(draft: {
    external_ref?: string;
    body_site?: string;
    postmortem_interval_hours?: number | null;
    notes?: string;
  }): Promise<CaseRecord> {
    return this.request<CaseRecord>("POST", "/api/cases", { body: draft });
  }

  transitionCase(caseId: string, target: string): Promise<CaseRecord> {
    return this.request<CaseRecord>("POST", `/api/cases/${caseId}/transition`, {
      body: { target },
    });
  }

  uploadMeasurement(
    caseId: string,
    files: { sample: TextFile; white: TextFile; dark: TextFile },
    instrument?: Record<string, unknown>,
  ): Promise<Measurement> {
    const fields: Record<string, string> = {};
    if (instrument) fields["instrument"] = JSON.stringify(instrument);
    const form = multipartForm(fields, files);
    return this.request<Measurement>("POST", `/api/cases/${caseId}/measurements`, { form });
  }

  submitAnalysis(
    measurementId: string,
    config: Record<string, unknown>,
    idempotencyKey: string,
  ): Promise<Job> {
    return this.request<Job>("POST", "/api/analyses", {
      body: { measurement_id: measurementId, config },
      headers: { "Idempotency-Key": idempotencyKey },
    });
  }

  getJob(jobId: string): Promise<Job> {
    return this.request<Job>("GET", `/api/analyses/jobs/${jobId}`);
  }

  getResults(caseId: string): Promise<CaseResults> {
    return this.request<CaseResults>("GET", `/api/cases/${caseId}/results`);
  }

  audit(page = 1, pageSize = 20): Promise<{ entries: AuditEntry[] }> {
    return this.request("GET", `/api/audit?page=${page}&page_size=${pageSize}`);
  }
}
