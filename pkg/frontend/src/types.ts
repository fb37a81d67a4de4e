/** Shapes of the JSON payloads the service returns.
 *
 * These mirror the server responses field for field.  View code treats them
 * as read-only: the only way a value on screen changes is a fresh response.
 */

export interface Session {
  token: string;
  user_id: string;
  role: string;
  expires_at: string;
}

export type CaseState =
  | "Open"
  | "Measured"
  | "Analysed"
  | "Reviewed"
  | "Closed";

export const CASE_STATES: CaseState[] = [
  "Open",
  "Measured",
  "Analysed",
  "Reviewed",
  "Closed",
];

export interface CaseRecord {
  case_id: string;
  external_ref: string;
  body_site: string;
  postmortem_interval_hours: number | null;
  notes: string;
  state: CaseState;
  created_at: string;
  updated_at: string;
}

export interface CasePage {
  cases: CaseRecord[];
  page: number;
}

export interface Measurement {
  measurement_id: string;
  case_id: string;
  sample_ref: string;
  white_ref: string;
  dark_ref: string;
  reflectance_ref: string;
  instrument: string;
  operator_id: string;
  recorded_at: string;
}

export interface SpectrumPayload {
  wavelengths_nm: number[];
  values: number[];
}

export type JobStatus = "Queued" | "Running" | "Done" | "Failed";

export interface Job {
  job_id: string;
  measurement_id: string;
  config: Record<string, unknown>;
  status: JobStatus;
  submitted_by: string;
  submitted_at: string;
  finished_at: string | null;
  result_ref: string | null;
  error: string | null;
}

export interface FitEstimate {
  concentrations: Record<string, number>;
  scatterer: {
    distribution: Record<string, number | string>;
    number_density_per_mm3: number;
    n_particle: number;
    n_medium: number;
  };
  calibration_factor: number;
}

export interface FitResultPayload {
  estimate: FitEstimate;
  residual_norm: number;
  chi2_per_dof: number;
  iterations: number;
  converged: boolean;
  at_bound: Record<string, boolean>;
  predicted: SpectrumPayload;
  objective_trace: number[];
}

export interface AnalysisRecord {
  analysis_id: string;
  measurement_id: string;
  config: Record<string, unknown>;
  result: FitResultPayload;
  engine_version: string;
  created_at: string;
  created_by: string;
  /** Measured reflectance resampled onto the predicted grid; null when the
   * measurement does not cover it, absent when the stored result carries no
   * predicted spectrum at all. */
  measured?: SpectrumPayload | null;
}

export interface MeasurementResults {
  measurement: Measurement;
  reflectance: SpectrumPayload;
  analyses: AnalysisRecord[];
}

export interface CaseResults {
  case: CaseRecord;
  measurements: MeasurementResults[];
}

export interface AuditEntry {
  sequence_number: number;
  actor: string;
  action: string;
  target_id: string;
  at: string;
  detail: string;
}

export interface CaseDraft {
  external_ref: string;
  body_site: string;
  postmortem_interval_hours: number | null;
  notes: string;
}
