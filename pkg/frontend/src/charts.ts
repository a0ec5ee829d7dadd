/** Minimal canvas line charts; no dependencies. */

export interface Series {
  label: string;
  color: string;
  points: { x: number; y: number }[];
  dashed?: boolean;
}

export interface BandMark {
  from: number;
  to: number;
  color: string;
}

const FONT = "11px system-ui, sans-serif";

export function drawChart(canvas: HTMLCanvasElement, series: Series[],
                          bands: BandMark[] = []): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const w = canvas.width;
  const h = canvas.height;
  const pad = { left: 44, right: 10, top: 10, bottom: 22 };
  ctx.clearRect(0, 0, w, h);

  const pts = series.flatMap((s) => s.points);
  if (!pts.length) {
    ctx.fillStyle = "#667";
    ctx.font = FONT;
    ctx.fillText("waiting for data…", w / 2 - 40, h / 2);
    return;
  }
  let xMin = Infinity, xMax = -Infinity, yMin = Infinity, yMax = -Infinity;
  for (const p of pts) {
    if (p.x < xMin) xMin = p.x;
    if (p.x > xMax) xMax = p.x;
    if (p.y < yMin) yMin = p.y;
    if (p.y > yMax) yMax = p.y;
  }
  for (const b of bands) {
    yMin = Math.min(yMin, b.from);
    yMax = Math.max(yMax, b.to);
  }
  if (xMax === xMin) xMax = xMin + 1;
  const ySpan = Math.max(yMax - yMin, 0.5);
  yMin -= ySpan * 0.08;
  yMax += ySpan * 0.08;

  const sx = (x: number) =>
    pad.left + ((x - xMin) / (xMax - xMin)) * (w - pad.left - pad.right);
  const sy = (y: number) =>
    h - pad.bottom - ((y - yMin) / (yMax - yMin)) * (h - pad.top - pad.bottom);

  for (const band of bands) {
    ctx.fillStyle = band.color;
    ctx.fillRect(pad.left, sy(band.to), w - pad.left - pad.right,
                 sy(band.from) - sy(band.to));
  }

  ctx.strokeStyle = "#2a2f3a";
  ctx.fillStyle = "#99a";
  ctx.font = FONT;
  ctx.lineWidth = 1;
  const ticks = 5;
  for (let i = 0; i <= ticks; i++) {
    const y = yMin + ((yMax - yMin) * i) / ticks;
    ctx.beginPath();
    ctx.moveTo(pad.left, sy(y));
    ctx.lineTo(w - pad.right, sy(y));
    ctx.stroke();
    ctx.fillText(y.toFixed(1), 4, sy(y) + 4);
  }
  for (let i = 0; i <= 4; i++) {
    const x = xMin + ((xMax - xMin) * i) / 4;
    ctx.fillText(formatTime(x), sx(x) - 14, h - 6);
  }

  for (const s of series) {
    if (!s.points.length) continue;
    ctx.strokeStyle = s.color;
    ctx.lineWidth = 1.5;
    ctx.setLineDash(s.dashed ? [5, 4] : []);
    ctx.beginPath();
    s.points.forEach((p, i) => {
      if (i === 0) ctx.moveTo(sx(p.x), sy(p.y));
      else ctx.lineTo(sx(p.x), sy(p.y));
    });
    ctx.stroke();
    ctx.setLineDash([]);
  }
}

export function drawHeaterStrip(canvas: HTMLCanvasElement,
                                points: { x: number; on: boolean }[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const w = canvas.width;
  const h = canvas.height;
  const pad = { left: 44, right: 10 };
  ctx.clearRect(0, 0, w, h);
  if (points.length < 2) return;
  const xMin = points[0].x;
  const xMax = points[points.length - 1].x;
  const sx = (x: number) =>
    pad.left + ((x - xMin) / Math.max(xMax - xMin, 1)) * (w - pad.left - pad.right);
  for (let i = 0; i < points.length - 1; i++) {
    ctx.fillStyle = points[i].on ? "#ff8c42" : "#1d2230";
    ctx.fillRect(sx(points[i].x), 2, Math.max(sx(points[i + 1].x) - sx(points[i].x), 1), h - 4);
  }
  ctx.fillStyle = "#99a";
  ctx.font = FONT;
  ctx.fillText("heater", 4, h / 2 + 4);
}

function formatTime(t: number): string {
  if (Math.abs(t) >= 3600) return (t / 3600).toFixed(2) + "h";
  if (Math.abs(t) >= 60) return (t / 60).toFixed(1) + "m";
  return t.toFixed(0) + "s";
}
