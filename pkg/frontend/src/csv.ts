/** Client-side checks on spectrum CSVs before anything is uploaded.
 *
 * Mirrors the two-column format the service accepts: a
 * `wavelength_nm,value` header, UTF-8, decimal points, `#` comment lines
 * above or between data rows.  The parse here exists only to block a doomed
 * upload early and to draw the preview; the server re-parses from scratch
 * and its verdict is the one of record.
 */

export class CsvError extends Error {
  line: number;

  constructor(message: string, line: number) {
    super(line > 0 ? `line ${line}: ${message}` : message);
    this.name = "CsvError";
    this.line = line;
  }
}

export interface ParsedSpectrum {
  wavelengths: number[];
  values: number[];
}

export function parseSpectrumCsv(text: string): ParsedSpectrum {
  const lines = text.split(/\r\n|\r|\n/);
  let headerIdx = -1;
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "" || line.startsWith("#")) continue;
    headerIdx = i;
    break;
  }
  if (headerIdx < 0) throw new CsvError("file has no header row", 1);
  const header = lines[headerIdx].split(",").map((h) => h.trim());
  if (header.length !== 2 || header[0] !== "wavelength_nm" || header[1] !== "value") {
    throw new CsvError(
      `expected header "wavelength_nm,value", got "${lines[headerIdx]}"`,
      headerIdx + 1,
    );
  }
  const wavelengths: number[] = [];
  const values: number[] = [];
  for (let i = headerIdx + 1; i < lines.length; i++) {
    const line = lines[i].trim();
    if (line === "" || line.startsWith("#")) continue;
    const parts = line.split(",");
    if (parts.length !== 2) {
      throw new CsvError(`expected 2 fields, got ${parts.length}`, i + 1);
    }
    const wl = Number(parts[0]);
    const v = Number(parts[1]);
    // Number("") is 0, so blank fields need their own check
    if (parts.some((p) => p.trim() === "") || Number.isNaN(wl) || Number.isNaN(v)) {
      throw new CsvError(`non-numeric field in "${line}"`, i + 1);
    }
    if (!Number.isFinite(v)) throw new CsvError("values must be finite", i + 1);
    wavelengths.push(wl);
    values.push(v);
  }
  if (wavelengths.length < 2) {
    throw new CsvError("fewer than two data rows", lines.length);
  }
  for (let i = 0; i < wavelengths.length; i++) {
    if (!(wavelengths[i] > 0 && wavelengths[i] < 10000)) {
      throw new CsvError("wavelengths must lie in (0, 10000) nm", 0);
    }
    if (i > 0 && !(wavelengths[i] > wavelengths[i - 1])) {
      throw new CsvError("wavelengths must be strictly increasing", 0);
    }
  }
  return { wavelengths, values };
}

export interface PreflightResult {
  ok: boolean;
  /** Human-readable verdict, one line per file plus the grid check. */
  messages: string[];
  spectra: { sample: ParsedSpectrum; white: ParsedSpectrum; dark: ParsedSpectrum } | null;
}

function gridsEqual(a: number[], b: number[]): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) {
    if (a[i] !== b[i]) return false;
  }
  return true;
}

/** Parse all three files and require an identical wavelength grid. */
export function preflightBundle(texts: {
  sample: string;
  white: string;
  dark: string;
}): PreflightResult {
  const parsed: Partial<Record<"sample" | "white" | "dark", ParsedSpectrum>> = {};
  const messages: string[] = [];
  let ok = true;
  for (const name of ["sample", "white", "dark"] as const) {
    try {
      const spectrum = parseSpectrumCsv(texts[name]);
      parsed[name] = spectrum;
      messages.push(`${name}: ${spectrum.wavelengths.length} rows`);
    } catch (err) {
      ok = false;
      messages.push(`${name}: ${err instanceof Error ? err.message : String(err)}`);
    }
  }
  if (!ok) return { ok, messages, spectra: null };
  const sample = parsed.sample!;
  const white = parsed.white!;
  const dark = parsed.dark!;
  for (const [name, other] of [["white", white], ["dark", dark]] as const) {
    if (!gridsEqual(sample.wavelengths, other.wavelengths)) {
      ok = false;
      messages.push(
        `grid mismatch: sample has ${sample.wavelengths.length} rows, ` +
          `${name} has ${other.wavelengths.length}` +
          (sample.wavelengths.length === other.wavelengths.length
            ? " on a different wavelength grid"
            : ""),
      );
    }
  }
  if (ok) messages.push("grids match");
  return { ok, messages, spectra: ok ? { sample, white, dark } : null };
}
