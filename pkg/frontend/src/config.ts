/** Starting template for the analysis form.
 *
 * Mirrors the server's default configuration so a freshly opened panel
 * submits the same fit an operator gets from the command line with no
 * overrides.  The form edits a deep copy; the template itself is frozen.
 */

export interface GridSpec {
  start_nm: number;
  stop_nm: number;
  step_nm: number;
}

export interface FitSpec {
  free_parameters: string[];
  bounds: Record<string, [number, number]>;
  initial_guess: Record<string, unknown>;
  regularization_weight: number;
  max_iterations: number;
  convergence_tol: number;
  noise_model: string;
}

export interface AnalysisSpec {
  fit: FitSpec;
  lut: string;
  grid: GridSpec;
  [key: string]: unknown;
}

export const FIT_PARAMETERS = [
  "c_hb",
  "c_o2hb",
  "c_cohb",
  "number_density",
  "radius_um",
  "calibration_factor",
] as const;

export const PARAMETER_LABELS: Record<string, string> = {
  c_hb: "Hb [mmol/L]",
  c_o2hb: "O2Hb [mmol/L]",
  c_cohb: "COHb [mmol/L]",
  number_density: "scatterer density [1/mm^3]",
  radius_um: "median radius [um]",
  calibration_factor: "calibration factor",
};

const DEFAULT_ANALYSIS: AnalysisSpec = {
  fit: {
    free_parameters: [
      "c_hb",
      "c_o2hb",
      "c_cohb",
      "number_density",
      "calibration_factor",
    ],
    bounds: {
      c_hb: [0.0, 0.15],
      c_o2hb: [0.0, 0.15],
      c_cohb: [0.0, 0.15],
      number_density: [2.0e8, 2.4e9],
      radius_um: [0.1, 1.0],
      calibration_factor: [0.5, 2.0],
    },
    initial_guess: {
      concentrations: { hb: 0.02, o2hb: 0.04, cohb: 0.01 },
      scatterer: {
        distribution: {
          kind: "log_normal",
          median_radius_um: 0.4,
          sigma_geom: 1.3,
        },
        number_density_per_mm3: 1.0e9,
        n_particle: 1.42,
        n_medium: 1.37,
      },
      calibration_factor: 1.0,
    },
    regularization_weight: 0.0,
    max_iterations: 200,
    convergence_tol: 1e-10,
    noise_model: "uniform",
  },
  lut: "default",
  grid: { start_nm: 500.0, stop_nm: 600.0, step_nm: 2.0 },
};

export function defaultAnalysisSpec(): AnalysisSpec {
  return structuredClone(DEFAULT_ANALYSIS);
}
