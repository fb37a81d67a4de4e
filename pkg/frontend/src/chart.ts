/** SVG spectrum charts.
 *
 * Everything here is a pure function from data to an element; no playback
 * state, no animation.  Interpolation for drawing is the only arithmetic the
 * client performs on spectra.
 */

import type { SpectrumPayload } from "./types.js";

export const DEFAULT_WINDOW: [number, number] = [380, 780];

const SVG_NS = "http://www.w3.org/2000/svg";

export interface XY {
  x: number;
  y: number;
}

export interface Series {
  label: string;
  points: XY[];
  /** "line" draws a polyline, "dots" discrete markers. */
  kind: "line" | "dots";
  color: string;
}

export interface ChartOptions {
  width?: number;
  height?: number;
  /** Wavelength window; points outside are not drawn. */
  window?: [number, number];
  yLabel?: string;
  /** Force a y-extent; otherwise taken from the visible points. */
  yDomain?: [number, number];
  /** Draw a dashed horizontal rule at this y (used by residual strips). */
  zeroLine?: boolean;
}

export function linearScale(
  d0: number,
  d1: number,
  r0: number,
  r1: number,
): (v: number) => number {
  const span = d1 - d0;
  return (v: number) => r0 + ((v - d0) / span) * (r1 - r0);
}

/** Round tick positions covering [lo, hi] with a 1/2/5 step. */
export function ticks(lo: number, hi: number, count = 6): number[] {
  if (!(hi > lo) || count < 1) return [lo];
  const raw = (hi - lo) / count;
  const power = Math.pow(10, Math.floor(Math.log10(raw)));
  const err = raw / power;
  // thresholds at sqrt(50), sqrt(10), sqrt(2) keep the tick count near
  // the request instead of rounding the step up aggressively
  const step = (err >= 7.07 ? 10 : err >= 3.16 ? 5 : err >= 1.41 ? 2 : 1) * power;
  const out: number[] = [];
  for (let v = Math.ceil(lo / step) * step; v <= hi + step * 1e-9; v += step) {
    out.push(Number(v.toPrecision(12)));
  }
  return out;
}

export function pathData(points: XY[], sx: (v: number) => number, sy: (v: number) => number): string {
  return points
    .map((p, i) => `${i === 0 ? "M" : "L"}${sx(p.x).toFixed(2)},${sy(p.y).toFixed(2)}`)
    .join("");
}

function el<K extends keyof SVGElementTagNameMap>(
  name: K,
  attrs: Record<string, string | number>,
): SVGElementTagNameMap[K] {
  const node = document.createElementNS(SVG_NS, name);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, String(value));
  }
  return node;
}

function formatTick(v: number): string {
  const a = Math.abs(v);
  if (a !== 0 && (a >= 1e4 || a < 1e-2)) return v.toExponential(1);
  return String(Number(v.toPrecision(6)));
}

export function renderChart(series: Series[], options: ChartOptions = {}): SVGSVGElement {
  const width = options.width ?? 640;
  const height = options.height ?? 280;
  const [wlo, whi] = options.window ?? DEFAULT_WINDOW;
  const margin = { left: 64, right: 14, top: 10, bottom: 36 };

  const visible = series.map((s) => ({
    ...s,
    points: s.points.filter((p) => p.x >= wlo && p.x <= whi),
  }));
  let ylo: number;
  let yhi: number;
  if (options.yDomain) {
    [ylo, yhi] = options.yDomain;
  } else {
    const ys = visible.flatMap((s) => s.points.map((p) => p.y));
    if (options.zeroLine) ys.push(0);
    ylo = ys.length ? Math.min(...ys) : 0;
    yhi = ys.length ? Math.max(...ys) : 1;
    if (ylo === yhi) {
      ylo -= 0.5;
      yhi += 0.5;
    }
    const pad = (yhi - ylo) * 0.06;
    ylo -= pad;
    yhi += pad;
  }

  const sx = linearScale(wlo, whi, margin.left, width - margin.right);
  const sy = linearScale(ylo, yhi, height - margin.bottom, margin.top);

  const svg = el("svg", {
    viewBox: `0 0 ${width} ${height}`,
    width,
    height,
    role: "img",
  });

  for (const tx of ticks(wlo, whi)) {
    svg.appendChild(el("line", {
      x1: sx(tx), x2: sx(tx),
      y1: height - margin.bottom, y2: height - margin.bottom + 4,
      stroke: "#68707e", "stroke-width": 1,
    }));
    const label = el("text", {
      x: sx(tx), y: height - margin.bottom + 16,
      "text-anchor": "middle", "font-size": 11, fill: "#68707e",
    });
    label.textContent = formatTick(tx);
    svg.appendChild(label);
  }
  for (const ty of ticks(ylo, yhi, 5)) {
    svg.appendChild(el("line", {
      x1: margin.left, x2: width - margin.right,
      y1: sy(ty), y2: sy(ty),
      stroke: "#eceef2", "stroke-width": 1,
    }));
    const label = el("text", {
      x: margin.left - 6, y: sy(ty) + 3.5,
      "text-anchor": "end", "font-size": 11, fill: "#68707e",
    });
    label.textContent = formatTick(ty);
    svg.appendChild(label);
  }
  svg.appendChild(el("line", {
    x1: margin.left, x2: width - margin.right,
    y1: height - margin.bottom, y2: height - margin.bottom,
    stroke: "#1d2129", "stroke-width": 1,
  }));
  svg.appendChild(el("line", {
    x1: margin.left, x2: margin.left,
    y1: margin.top, y2: height - margin.bottom,
    stroke: "#1d2129", "stroke-width": 1,
  }));

  const xTitle = el("text", {
    x: (margin.left + width - margin.right) / 2, y: height - 4,
    "text-anchor": "middle", "font-size": 12, fill: "#1d2129",
  });
  xTitle.textContent = "wavelength / nm";
  svg.appendChild(xTitle);
  if (options.yLabel) {
    const yTitle = el("text", {
      x: 14, y: (margin.top + height - margin.bottom) / 2,
      "text-anchor": "middle", "font-size": 12, fill: "#1d2129",
      transform: `rotate(-90 14 ${(margin.top + height - margin.bottom) / 2})`,
    });
    yTitle.textContent = options.yLabel;
    svg.appendChild(yTitle);
  }

  if (options.zeroLine && ylo < 0 && yhi > 0) {
    svg.appendChild(el("line", {
      x1: margin.left, x2: width - margin.right,
      y1: sy(0), y2: sy(0),
      stroke: "#68707e", "stroke-width": 1, "stroke-dasharray": "4 3",
    }));
  }

  for (const s of visible) {
    if (s.points.length === 0) continue;
    if (s.kind === "line") {
      svg.appendChild(el("path", {
        d: pathData(s.points, sx, sy),
        fill: "none", stroke: s.color, "stroke-width": 1.6,
        "data-series": s.label,
      }));
    } else {
      for (const p of s.points) {
        svg.appendChild(el("circle", {
          cx: sx(p.x), cy: sy(p.y), r: 2.4,
          fill: s.color, "data-series": s.label,
        }));
      }
    }
  }
  return svg;
}

export function toPoints(spectrum: SpectrumPayload): XY[] {
  return spectrum.wavelengths_nm.map((wl, i) => ({ x: wl, y: spectrum.values[i] }));
}

/** Measured dots over the predicted line, residual strip underneath. */
export function renderOverlay(
  measured: SpectrumPayload | null,
  predicted: SpectrumPayload,
  options: ChartOptions = {},
): HTMLElement {
  const figure = document.createElement("figure");
  figure.className = "chart";
  const series: Series[] = [
    { label: "predicted", points: toPoints(predicted), kind: "line", color: "#2a5d8f" },
  ];
  if (measured) {
    series.unshift({ label: "measured", points: toPoints(measured), kind: "dots", color: "#1d2129" });
  }
  figure.appendChild(renderChart(series, { yLabel: "reflectance", ...options }));

  if (measured) {
    const residual: XY[] = measured.wavelengths_nm.map((wl, i) => ({
      x: wl,
      y: measured.values[i] - predicted.values[i],
    }));
    figure.appendChild(renderChart(
      [{ label: "residual", points: residual, kind: "dots", color: "#a4343a" }],
      {
        height: 110,
        window: options.window,
        yLabel: "residual",
        zeroLine: true,
      },
    ));
  }
  const caption = document.createElement("figcaption");
  caption.textContent = measured
    ? "measured (dots) vs predicted (line); residuals beneath"
    : "predicted reflectance";
  figure.appendChild(caption);
  return figure;
}
