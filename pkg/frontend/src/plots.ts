/**
 * Strip-chart rendering for the rolling windows.
 *
 * Each chart draws one or two traces over the window span with an
 * auto-scaled y-axis; the y-range logic is exported separately so it is
 * testable without a canvas.
 */
import { RollingWindow } from "./ring.js";

export interface Trace {
  label: string;
  color: string;
  window: RollingWindow;
  dashed?: boolean;
}

export interface YRange {
  lo: number;
  hi: number;
}

/** Padded y-range covering every visible sample (10% margin, never empty). */
export function yRange(traces: Trace[], floorAtZero: boolean): YRange {
  let lo = Infinity;
  let hi = -Infinity;
  for (const trace of traces) {
    for (const v of trace.window.vs) {
      if (v < lo) lo = v;
      if (v > hi) hi = v;
    }
  }
  if (lo === Infinity) return { lo: 0, hi: 1 };
  if (floorAtZero && lo > 0) lo = 0;
  const span = hi - lo;
  const pad = span > 1e-9 ? 0.1 * span : Math.max(0.1 * Math.abs(hi), 0.05);
  return { lo: lo - pad, hi: hi + pad };
}

function formatTick(v: number): string {
  const a = Math.abs(v);
  if (a >= 100) return v.toFixed(0);
  if (a >= 1) return v.toFixed(1);
  return v.toFixed(2);
}

const MARGIN_LEFT = 42;
const MARGIN_BOTTOM = 16;
const MARGIN_TOP = 18;

export function renderChart(
  ctx: CanvasRenderingContext2D,
  width: number,
  height: number,
  title: string,
  traces: Trace[],
  opts: { floorAtZero?: boolean } = {},
): void {
  ctx.clearRect(0, 0, width, height);
  const plotW = width - MARGIN_LEFT - 6;
  const plotH = height - MARGIN_TOP - MARGIN_BOTTOM;

  const span = traces[0].window.spanS;
  let tEnd = -Infinity;
  for (const trace of traces) {
    const ts = trace.window.ts;
    if (ts.length > 0) tEnd = Math.max(tEnd, ts[ts.length - 1]);
  }
  if (tEnd === -Infinity) tEnd = span;
  const tStart = tEnd - span;
  const range = yRange(traces, opts.floorAtZero ?? false);

  const xPx = (t: number): number =>
    MARGIN_LEFT + ((t - tStart) / span) * plotW;
  const yPx = (v: number): number =>
    MARGIN_TOP + plotH - ((v - range.lo) / (range.hi - range.lo)) * plotH;

  // frame + horizontal gridlines with tick labels
  ctx.strokeStyle = "#30363d";
  ctx.lineWidth = 1;
  ctx.strokeRect(MARGIN_LEFT, MARGIN_TOP, plotW, plotH);
  ctx.fillStyle = "#8b949e";
  ctx.font = "10px system-ui, sans-serif";
  ctx.textAlign = "right";
  for (let i = 0; i <= 2; i += 1) {
    const v = range.lo + ((range.hi - range.lo) * i) / 2;
    const y = yPx(v);
    if (i > 0 && i < 2) {
      ctx.beginPath();
      ctx.moveTo(MARGIN_LEFT, y);
      ctx.lineTo(MARGIN_LEFT + plotW, y);
      ctx.stroke();
    }
    ctx.fillText(formatTick(v), MARGIN_LEFT - 4, y + 3);
  }

  for (const trace of traces) {
    const { ts, vs } = trace.window;
    if (ts.length === 0) continue;
    ctx.strokeStyle = trace.color;
    ctx.lineWidth = 1.5;
    ctx.setLineDash(trace.dashed ? [5, 3] : []);
    ctx.beginPath();
    for (let i = 0; i < ts.length; i += 1) {
      const x = xPx(ts[i]);
      const y = yPx(vs[i]);
      if (i === 0) ctx.moveTo(x, y);
      else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
  ctx.setLineDash([]);

  // title and per-trace latest values
  ctx.textAlign = "left";
  ctx.fillStyle = "#c9d1d9";
  ctx.font = "11px system-ui, sans-serif";
  ctx.fillText(title, MARGIN_LEFT, 12);
  let xLegend = MARGIN_LEFT + ctx.measureText(title).width + 14;
  for (const trace of traces) {
    const latest = trace.window.latest();
    const text = `${trace.label} ${latest === null ? "—" : formatTick(latest)}`;
    ctx.fillStyle = trace.color;
    ctx.fillText(text, xLegend, 12);
    xLegend += ctx.measureText(text).width + 14;
  }
}
