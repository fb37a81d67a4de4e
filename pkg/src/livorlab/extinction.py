"""Loader and integrity checks for the bundled extinction tables."""

from __future__ import annotations

import hashlib
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, CoverageGap, CsvFormatError
from .spectral import ExtinctionRecord, Spectrum, SpectrumKind

REQUIRED_CHROMOPHORES = ("hb", "o2hb", "cohb")
REQUIRED_COVERAGE_NM = (380.0, 780.0)

_DATA_PACKAGE = "livorlab.data"
_DEFAULT_CSV = "hemoglobin_extinction.csv"
_DEFAULT_MANIFEST = "extinction_manifest.json"


def _bundled_text(name: str) -> str:
    return resources.files(_DATA_PACKAGE).joinpath(name).read_text("utf-8")


def _parse_table(text: str) -> dict[str, Spectrum]:
    lines = text.splitlines()
    header = None
    start = 0
    for i, line in enumerate(lines):
        if line.strip() == "" or line.lstrip().startswith("#"):
            continue
        header = [h.strip() for h in line.split(",")]
        start = i + 1
        break
    if header is None or header[0] != "wavelength_nm" or len(header) < 2:
        raise CsvFormatError(
            "extinction table must start with a 'wavelength_nm,...' header"
        )
    chromophores = header[1:]
    rows = []
    for i in range(start, len(lines)):
        line = lines[i].strip()
        if line == "" or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise CsvFormatError(
                f"expected {len(header)} fields, got {len(parts)}", line=i + 1
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise CsvFormatError(f"non-numeric field in {line!r}", line=i + 1)
    if len(rows) < 2:
        raise CsvFormatError("extinction table has fewer than two rows")
    data = np.asarray(rows, dtype=np.float64)
    wl = data[:, 0]
    out = {}
    for j, chromo in enumerate(chromophores):
        eps = data[:, 1 + j]
        if not np.all(np.isfinite(eps)) or np.any(eps < 0.0):
            raise CoverageGap(
                f"extinction of {chromo!r} has negative or non-finite values"
            )
        out[chromo] = Spectrum(wl, eps, SpectrumKind.RAW_COUNTS)
    return out


def load_extinction_db(path: str | Path | None = None) -> list[ExtinctionRecord]:
    """Load an extinction table, verifying checksum and coverage.

    With no path, loads the bundled table and verifies it against the
    bundled manifest. With a path, a sibling ``<name>.manifest.json``
    is checked when present.

    Raises ChecksumMismatch or CoverageGap on integrity failures.
    """
    if path is None:
        text = _bundled_text(_DEFAULT_CSV)
        manifest = json.loads(_bundled_text(_DEFAULT_MANIFEST))
    else:
        path = Path(path)
        text = path.read_text("utf-8")
        manifest_path = path.with_name(path.name + ".manifest.json")
        manifest = (
            json.loads(manifest_path.read_text("utf-8"))
            if manifest_path.exists()
            else None
        )

    if manifest is not None:
        digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
        if digest != manifest.get("sha256"):
            raise ChecksumMismatch(
                f"extinction table hash {digest[:12]}... does not match "
                f"manifest {str(manifest.get('sha256'))[:12]}..."
            )

    table = _parse_table(text)
    for chromo in REQUIRED_CHROMOPHORES:
        if chromo not in table:
            raise CoverageGap(f"extinction table is missing {chromo!r}")
    lo, hi = REQUIRED_COVERAGE_NM
    for chromo, spec in table.items():
        if spec.wavelengths_nm[0] > lo or spec.wavelengths_nm[-1] < hi:
            raise CoverageGap(
                f"{chromo!r} covers [{spec.wavelengths_nm[0]:g}, "
                f"{spec.wavelengths_nm[-1]:g}] nm, need [{lo:g}, {hi:g}]"
            )
    return [
        ExtinctionRecord(chromo, spec) for chromo, spec in table.items()
    ]
