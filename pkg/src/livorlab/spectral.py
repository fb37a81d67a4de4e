"""Spectrum container, white-standard normalization, resampling, and the
chromophore absorption model.

Units are fixed package-wide: wavelengths in nm, concentrations in
mmol/L, molar extinction in L/(mmol cm), path coefficients in 1/mm.
"""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    CsvFormatError,
    DegenerateReference,
    GridMismatch,
    GridOutOfRange,
    MissingChromophore,
    ZeroTotalHemoglobin,
)

# Canonical chromophore identifiers. The set is extensible: any string id
# works as long as an extinction record exists for it.
HB = "hb"
O2HB = "o2hb"
COHB = "cohb"
HEMOGLOBIN_SPECIES = (HB, O2HB, COHB)

# Normalized reflectance slightly above 1 happens against an imperfect
# white standard; tolerated up to this cap, warned about above 1.0.
REFLECTANCE_MAX = 1.1

LN10 = float(np.log(10.0))


class SpectrumKind(Enum):
    RAW_COUNTS = "raw_counts"
    REFLECTANCE = "reflectance"
    ABSORPTION_PER_MM = "absorption_per_mm"


class SpectralWarning(UserWarning):
    """Non-fatal data-quality finding (e.g. reflectance above unity)."""


@dataclass(frozen=True, eq=False)
class Spectrum:
    """A wavelength grid with per-wavelength values.

    Invariants: at least two samples, strictly increasing wavelengths in
    (0, 10000) nm, finite values; reflectance in [0, REFLECTANCE_MAX],
    absorption coefficients nonnegative.
    """

    wavelengths_nm: np.ndarray
    values: np.ndarray
    kind: SpectrumKind
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        wl = np.asarray(self.wavelengths_nm, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "wavelengths_nm", wl)
        object.__setattr__(self, "values", vals)
        if wl.ndim != 1 or vals.ndim != 1:
            raise ValueError("wavelengths and values must be 1-D")
        if wl.size < 2:
            raise ValueError("spectrum needs at least two samples")
        if wl.size != vals.size:
            raise ValueError(
                f"length mismatch: {wl.size} wavelengths, {vals.size} values"
            )
        if not (np.all(wl > 0.0) and np.all(wl < 10000.0)):
            raise ValueError("wavelengths must lie in (0, 10000) nm")
        if not np.all(np.diff(wl) > 0.0):
            raise ValueError("wavelengths must be strictly increasing")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        if self.kind is SpectrumKind.REFLECTANCE:
            if np.any(vals < 0.0):
                raise ValueError("reflectance values must be >= 0")
            if np.any(vals > REFLECTANCE_MAX):
                raise ValueError(
                    f"reflectance above {REFLECTANCE_MAX} rejected "
                    f"(max found {vals.max():.6g})"
                )
            if np.any(vals > 1.0):
                warnings.warn(
                    "reflectance above 1.0 (imperfect white standard?)",
                    SpectralWarning,
                    stacklevel=2,
                )
        elif self.kind is SpectrumKind.ABSORPTION_PER_MM:
            if np.any(vals < 0.0):
                raise ValueError("absorption coefficients must be >= 0")

    def __len__(self) -> int:
        return int(self.wavelengths_nm.size)

    def same_grid(self, other: "Spectrum") -> bool:
        return bool(
            self.wavelengths_nm.size == other.wavelengths_nm.size
            and np.array_equal(self.wavelengths_nm, other.wavelengths_nm)
        )


@dataclass(frozen=True, eq=False)
class ExtinctionRecord:
    """Molar extinction spectrum of one chromophore, eps(lambda) in
    L/(mmol cm)."""

    chromophore_id: str
    extinction: Spectrum

    def __post_init__(self):
        if np.any(self.extinction.values < 0.0):
            raise ValueError("extinction values must be >= 0")


class ChromophoreConcentrations(Mapping[str, float]):
    """Immutable map chromophore_id -> concentration in mmol/L."""

    def __init__(self, conc: Mapping[str, float]):
        items = {}
        for key, value in conc.items():
            v = float(value)
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"concentration of {key!r} must be >= 0")
            items[str(key)] = v
        self._items = items

    def __getitem__(self, key: str) -> float:
        return self._items[key]

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __repr__(self) -> str:
        return f"ChromophoreConcentrations({self._items!r})"

    def scaled(self, factor: float) -> "ChromophoreConcentrations":
        return ChromophoreConcentrations(
            {k: v * factor for k, v in self._items.items()}
        )


def default_grid(start_nm: float = 380.0, stop_nm: float = 780.0,
                 step_nm: float = 2.0) -> np.ndarray:
    """Default visible-range wavelength grid, 380-780 nm at 2 nm."""
    n = int(round((stop_nm - start_nm) / step_nm)) + 1
    return start_nm + step_nm * np.arange(n, dtype=np.float64)


def normalize_reflectance(sample: Spectrum, white: Spectrum,
                          dark: Spectrum) -> Spectrum:
    """R = (S - D) / (W - D) against the white standard.

    All three spectra must share one wavelength grid and white - dark must
    be strictly positive everywhere. Negative results clamp to 0; the
    per-wavelength clamp flags are kept in the result metadata.
    """
    for name, spec in (("sample", sample), ("white", white), ("dark", dark)):
        if spec.kind is not SpectrumKind.RAW_COUNTS:
            raise ValueError(f"{name} spectrum must be raw counts")
    if not (sample.same_grid(white) and sample.same_grid(dark)):
        raise GridMismatch("sample, white and dark grids differ")
    denom = white.values - dark.values
    if np.any(denom <= 0.0):
        bad = sample.wavelengths_nm[denom <= 0.0]
        raise DegenerateReference(
            f"white - dark <= 0 at {bad.size} wavelength(s), "
            f"first at {bad[0]:g} nm"
        )
    r = (sample.values - dark.values) / denom
    clamped = r < 0.0
    if np.any(clamped):
        r = np.where(clamped, 0.0, r)
    return Spectrum(
        sample.wavelengths_nm.copy(), r, SpectrumKind.REFLECTANCE,
        meta={"clamped": clamped},
    )


def resample(src: Spectrum, grid: Iterable[float]) -> Spectrum:
    """Piecewise-linear interpolation of src onto grid; kind preserved.

    Extrapolation is refused: grid must lie within the source range.
    """
    grid = np.asarray(list(grid) if not isinstance(grid, np.ndarray) else grid,
                      dtype=np.float64)
    lo, hi = src.wavelengths_nm[0], src.wavelengths_nm[-1]
    if grid.size and (grid.min() < lo or grid.max() > hi):
        raise GridOutOfRange(
            f"grid [{grid.min():g}, {grid.max():g}] nm exceeds source range "
            f"[{lo:g}, {hi:g}] nm"
        )
    vals = np.interp(grid, src.wavelengths_nm, src.values)
    return Spectrum(grid, vals, src.kind)


def absorption_spectrum(conc: ChromophoreConcentrations,
                        db: Iterable[ExtinctionRecord],
                        grid: Iterable[float]) -> Spectrum:
    """mu_a(lambda) = ln(10) * sum_i c_i eps_i(lambda), in 1/mm.

    Extinction tables are resampled onto the grid; the cm -> mm unit
    conversion divides by 10.
    """
    grid = np.asarray(list(grid) if not isinstance(grid, np.ndarray) else grid,
                      dtype=np.float64)
    records = {rec.chromophore_id: rec for rec in db}
    mu_a = np.zeros_like(grid)
    for chromo, c in conc.items():
        rec = records.get(chromo)
        if rec is None:
            raise MissingChromophore(f"no extinction record for {chromo!r}")
        eps = resample(rec.extinction, grid)
        mu_a += c * eps.values
    mu_a *= LN10 / 10.0
    return Spectrum(grid, mu_a, SpectrumKind.ABSORPTION_PER_MM)


def cohb_fraction(conc: ChromophoreConcentrations) -> float:
    """CO-Hb fraction of total hemoglobin, in [0, 1]."""
    total = sum(conc.get(k, 0.0) for k in HEMOGLOBIN_SPECIES)
    if total <= 0.0:
        raise ZeroTotalHemoglobin("total hemoglobin concentration is zero")
    return conc.get(COHB, 0.0) / total


# --- CSV interchange ----------------------------------------------------
#
# Two-column format:    wavelength_nm,value
# Raw-bundle format:    wavelength_nm,sample,white,dark
# UTF-8, decimal point, no thousands separators. Lines starting with '#'
# above the header are treated as comments.

def _parse_rows(text: str, columns: tuple[str, ...]):
    lines = text.splitlines()
    header_idx = None
    for i, line in enumerate(lines):
        if line.strip() == "" or line.lstrip().startswith("#"):
            continue
        header_idx = i
        break
    if header_idx is None:
        raise CsvFormatError("file has no header row", line=1)
    header = tuple(h.strip() for h in lines[header_idx].split(","))
    if header != columns:
        raise CsvFormatError(
            f"expected header {','.join(columns)!r}, got "
            f"{lines[header_idx]!r}",
            line=header_idx + 1,
        )
    rows = []
    for i in range(header_idx + 1, len(lines)):
        line = lines[i].strip()
        if line == "" or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != len(columns):
            raise CsvFormatError(
                f"expected {len(columns)} fields, got {len(parts)}",
                line=i + 1,
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise CsvFormatError(f"non-numeric field in {line!r}", line=i + 1)
    if len(rows) < 2:
        raise CsvFormatError("fewer than two data rows", line=len(lines))
    return np.asarray(rows, dtype=np.float64)


def read_spectrum_csv(text: str,
                      kind: SpectrumKind = SpectrumKind.RAW_COUNTS) -> Spectrum:
    """Parse the two-column spectrum format."""
    data = _parse_rows(text, ("wavelength_nm", "value"))
    try:
        return Spectrum(data[:, 0], data[:, 1], kind)
    except ValueError as exc:
        raise CsvFormatError(str(exc)) from exc


def read_bundle_csv(text: str) -> tuple[Spectrum, Spectrum, Spectrum]:
    """Parse the raw-bundle format into (sample, white, dark)."""
    data = _parse_rows(text, ("wavelength_nm", "sample", "white", "dark"))
    try:
        return tuple(
            Spectrum(data[:, 0], data[:, 1 + i], SpectrumKind.RAW_COUNTS)
            for i in range(3)
        )
    except ValueError as exc:
        raise CsvFormatError(str(exc)) from exc


def write_spectrum_csv(spec: Spectrum) -> str:
    """Serialize to the two-column format with shortest round-trip decimals."""
    out = io.StringIO()
    out.write("wavelength_nm,value\n")
    for wl, v in zip(spec.wavelengths_nm, spec.values):
        out.write(f"{float(wl)!r},{float(v)!r}\n")
    return out.getvalue()
