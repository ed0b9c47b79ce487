/**
 * Hand-rolled SVG output: line charts and heatmaps small enough to audit.
 * Every rendered datum carries full-precision data-* attributes so tests can
 * read back exactly what was drawn.
 */

export interface Series {
  name: string;
  x: number[];
  y: number[];
}

export interface Cell {
  x: number;
  y: number;
  value: number;
}

export const WIDTH = 640;
export const HEIGHT = 420;
const MARGIN = { left: 64, right: 24, top: 36, bottom: 52 };

export const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];

export function escapeXml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export interface Scale {
  (value: number): number;
  min: number;
  max: number;
}

export function linearScale(min: number, max: number, outMin: number, outMax: number): Scale {
  const span = max - min || 1;
  const fn = ((value: number) => outMin + ((value - min) / span) * (outMax - outMin)) as Scale;
  fn.min = min;
  fn.max = max;
  return fn;
}

function ticks(min: number, max: number, count = 5): number[] {
  const span = max - min || 1;
  const out: number[] = [];
  for (let i = 0; i <= count; i++) {
    out.push(min + (span * i) / count);
  }
  return out;
}

function fmt(value: number): string {
  if (Number.isInteger(value)) return String(value);
  return value.toPrecision(3).replace(/\.?0+$/, "");
}

export function plotArea(): { x0: number; x1: number; y0: number; y1: number } {
  return { x0: MARGIN.left, x1: WIDTH - MARGIN.right, y0: HEIGHT - MARGIN.bottom, y1: MARGIN.top };
}

export function axes(xScale: Scale, yScale: Scale, xLabel: string, yLabel: string, title: string): string {
  const { x0, x1, y0, y1 } = plotArea();
  const parts: string[] = [];
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x1}" y2="${y0}" stroke="#333"/>`);
  parts.push(`<line x1="${x0}" y1="${y0}" x2="${x0}" y2="${y1}" stroke="#333"/>`);
  for (const t of ticks(xScale.min, xScale.max)) {
    const px = xScale(t);
    parts.push(`<line x1="${px}" y1="${y0}" x2="${px}" y2="${y0 + 5}" stroke="#333"/>`);
    parts.push(`<text x="${px}" y="${y0 + 20}" text-anchor="middle" font-size="11">${fmt(t)}</text>`);
  }
  for (const t of ticks(yScale.min, yScale.max)) {
    const py = yScale(t);
    parts.push(`<line x1="${x0 - 5}" y1="${py}" x2="${x0}" y2="${py}" stroke="#333"/>`);
    parts.push(`<text x="${x0 - 8}" y="${py + 4}" text-anchor="end" font-size="11">${fmt(t)}</text>`);
  }
  parts.push(
    `<text x="${(x0 + x1) / 2}" y="${HEIGHT - 12}" text-anchor="middle" font-size="13">${escapeXml(xLabel)}</text>`,
  );
  parts.push(
    `<text x="16" y="${(y0 + y1) / 2}" text-anchor="middle" font-size="13" transform="rotate(-90 16 ${(y0 + y1) / 2})">${escapeXml(yLabel)}</text>`,
  );
  parts.push(`<text x="${(x0 + x1) / 2}" y="20" text-anchor="middle" font-size="14">${escapeXml(title)}</text>`);
  return parts.join("\n");
}

export function seriesPaths(series: Series[], xScale: Scale, yScale: Scale): string {
  const parts: string[] = [];
  series.forEach((s, index) => {
    const color = PALETTE[index % PALETTE.length];
    const coords = s.x.map((x, i) => `${xScale(x)},${yScale(s.y[i])}`).join(" ");
    parts.push(`<polyline fill="none" stroke="${color}" stroke-width="1.5" points="${coords}"/>`);
    s.x.forEach((x, i) => {
      parts.push(
        `<circle cx="${xScale(x)}" cy="${yScale(s.y[i])}" r="2.5" fill="${color}" ` +
          `data-series="${escapeXml(s.name)}" data-x="${x}" data-y="${s.y[i]}"/>`,
      );
    });
  });
  return parts.join("\n");
}

export function chanceLine(level: number, xScale: Scale, yScale: Scale): string {
  const y = yScale(level);
  return (
    `<line x1="${xScale(xScale.min)}" y1="${y}" x2="${xScale(xScale.max)}" y2="${y}" ` +
    `stroke="#777" stroke-dasharray="6 4" data-chance="${level}"/>` +
    `<text x="${xScale(xScale.max)}" y="${y - 5}" text-anchor="end" font-size="11" fill="#777">chance ${level}</text>`
  );
}

export function legend(series: Series[], extra: string[] = []): string {
  const { x1, y1 } = plotArea();
  const entries = series.map((s, i) => ({ label: s.name, color: PALETTE[i % PALETTE.length] }));
  for (const label of extra) {
    entries.push({ label, color: "#777" });
  }
  return entries
    .map(
      (entry, i) =>
        `<rect x="${x1 - 170}" y="${y1 + 6 + i * 18}" width="12" height="12" fill="${entry.color}"/>` +
        `<text x="${x1 - 152}" y="${y1 + 16 + i * 18}" font-size="12">${escapeXml(entry.label)}</text>`,
    )
    .join("\n");
}

export function document(content: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${WIDTH}" height="${HEIGHT}" ` +
    `viewBox="0 0 ${WIDTH} ${HEIGHT}" font-family="sans-serif">\n` +
    `<rect width="${WIDTH}" height="${HEIGHT}" fill="white"/>\n${content}\n</svg>\n`
  );
}
