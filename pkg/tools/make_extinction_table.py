#!/usr/bin/env python3
"""Regenerate the bundled hemoglobin extinction table.

Builds smooth molar extinction curves for deoxyhemoglobin (Hb),
oxyhemoglobin (O2-Hb) and carboxyhemoglobin (CO-Hb) on a 2 nm grid from
anchor points at the published band positions (Soret and Q bands, red-end
tails). Anchors follow the shape and approximate magnitude of the widely
used public compilations (OMLC/Prahl for Hb and O2-Hb; Zijlstra and
van Assendelft for CO-Hb), expressed per heme group. Interpolation is
monotone cubic (PCHIP) in log10 space to keep the curves positive across
their decades-wide range.

The output is a representative dataset for model development and testing,
not a verbatim transcription of any single compilation; the CSV header
records this provenance. Swap in a transcribed table via the loader's
``path`` argument for calibrated work.
"""

import hashlib
import json
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

OUT_DIR = Path(__file__).resolve().parents[1] / "src" / "livorlab" / "data"

GRID = np.arange(370.0, 790.0 + 1e-9, 2.0)

# anchors: wavelength_nm -> molar extinction, L/(mmol heme * cm)
HB_ANCHORS = {
    370: 90.0, 380: 97.0, 390: 110.0, 400: 120.0, 410: 125.0, 420: 129.0,
    430: 133.0, 436: 129.0, 440: 60.0, 446: 25.0, 450: 15.7, 456: 11.0,
    460: 9.0, 470: 6.5, 480: 5.0, 490: 4.7, 500: 5.2, 510: 6.5,
    520: 8.5, 530: 10.5, 540: 11.6, 548: 12.8, 555: 13.9, 562: 13.2,
    570: 11.2, 577: 9.2, 585: 6.5, 592: 4.8, 600: 3.67, 610: 2.4,
    620: 1.7, 630: 1.25, 640: 1.05, 650: 0.937, 660: 0.807, 670: 0.70,
    680: 0.62, 690: 0.53, 700: 0.449, 710: 0.37, 720: 0.31, 730: 0.276,
    740: 0.31, 750: 0.375, 758: 0.42, 766: 0.40, 770: 0.36, 780: 0.27,
    790: 0.22,
}

O2HB_ANCHORS = {
    370: 55.0, 380: 66.0, 390: 112.0, 400: 118.0, 407: 125.0, 414: 131.0,
    420: 118.0, 425: 90.0, 430: 60.0, 440: 27.0, 450: 15.6, 460: 10.5,
    470: 8.0, 480: 6.6, 490: 5.4, 500: 5.2, 510: 7.0, 520: 10.0,
    530: 12.6, 536: 13.8, 542: 14.4, 548: 12.6, 554: 8.0, 560: 3.5,
    566: 5.2, 571: 9.5, 577: 15.4, 583: 11.0, 590: 4.5, 600: 0.80,
    610: 0.35, 620: 0.22, 630: 0.15, 640: 0.11, 650: 0.092, 660: 0.080,
    670: 0.072, 680: 0.070, 690: 0.069, 700: 0.0725, 710: 0.079,
    720: 0.088, 730: 0.098, 740: 0.112, 750: 0.130, 760: 0.149,
    770: 0.163, 780: 0.178, 790: 0.19,
}

COHB_ANCHORS = {
    370: 50.0, 380: 60.0, 390: 80.0, 400: 100.0, 410: 122.0, 416: 130.0,
    420: 133.5, 424: 130.0, 430: 105.0, 440: 40.0, 450: 16.5, 460: 11.0,
    470: 8.2, 480: 6.8, 490: 6.0, 500: 5.8, 510: 7.2, 520: 9.8,
    528: 12.0, 534: 13.6, 539: 14.3, 545: 12.4, 550: 10.3, 554: 8.9,
    558: 9.4, 563: 11.8, 568: 14.0, 573: 12.0, 578: 7.5, 584: 4.0,
    590: 2.0, 600: 0.9, 610: 0.35, 620: 0.18, 630: 0.10, 640: 0.07,
    650: 0.053, 660: 0.045, 670: 0.040, 680: 0.037, 690: 0.035,
    700: 0.034, 720: 0.033, 750: 0.032, 780: 0.031, 790: 0.031,
}

HEADER = """\
# Molar extinction of hemoglobin derivatives, per heme group.
# Columns: wavelength_nm, then epsilon in L/(mmol*cm) for deoxyhemoglobin
# (hb), oxyhemoglobin (o2hb) and carboxyhemoglobin (cohb).
#
# Provenance: representative curves built from anchor points at the
# published band positions and approximate magnitudes of the public
# compilations (OMLC/Prahl tabulation for Hb and O2-Hb; Zijlstra and
# van Assendelft for CO-Hb), interpolated with monotone cubics in log
# space on a 2 nm grid. Suitable for model development and testing;
# substitute a transcribed compilation for calibrated work.
#
# Regenerate with tools/make_extinction_table.py (deterministic).
"""


def smooth_curve(anchors: dict) -> np.ndarray:
    wl = np.array(sorted(anchors), dtype=float)
    eps = np.array([anchors[w] for w in sorted(anchors)], dtype=float)
    interp = PchipInterpolator(wl, np.log10(eps))
    return 10.0 ** interp(GRID)


def main() -> None:
    hb = smooth_curve(HB_ANCHORS)
    o2hb = smooth_curve(O2HB_ANCHORS)
    cohb = smooth_curve(COHB_ANCHORS)

    lines = [HEADER + "wavelength_nm,hb,o2hb,cohb"]
    for i, wl in enumerate(GRID):
        lines.append(
            f"{wl:.1f},{hb[i]:.6g},{o2hb[i]:.6g},{cohb[i]:.6g}"
        )
    text = "\n".join(lines) + "\n"

    OUT_DIR.mkdir(parents=True, exist_ok=True)
    csv_path = OUT_DIR / "hemoglobin_extinction.csv"
    csv_path.write_text(text, encoding="utf-8")

    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    manifest = {
        "file": "hemoglobin_extinction.csv",
        "sha256": digest,
        "chromophores": ["hb", "o2hb", "cohb"],
        "coverage_nm": [float(GRID[0]), float(GRID[-1])],
        "units": "L/(mmol heme * cm)",
    }
    (OUT_DIR / "extinction_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {csv_path} ({len(GRID)} rows), sha256={digest[:16]}...")


if __name__ == "__main__":
    main()
