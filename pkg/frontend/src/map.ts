/** Canvas map: slippy tiles when reachable, an offline grid otherwise; a
 * fixed TX diamond and the RX trail colored by the selected metric. */

import type { TrailPoint } from "./types.js";

export interface Viewport {
  centerLat: number;
  centerLon: number;
  zoom: number; // slippy zoom level
  width: number;
  height: number;
}

const TILE_SIZE = 256;

/** Web-Mercator projection to global pixel coordinates at a zoom level. */
export function lonLatToPixel(lon: number, lat: number, zoom: number): { x: number; y: number } {
  const scale = TILE_SIZE * 2 ** zoom;
  const x = ((lon + 180) / 360) * scale;
  const rad = (lat * Math.PI) / 180;
  const y = ((1 - Math.log(Math.tan(rad) + 1 / Math.cos(rad)) / Math.PI) / 2) * scale;
  return { x, y };
}

/** Screen position of a lon/lat within the viewport. */
export function project(lon: number, lat: number, vp: Viewport): { x: number; y: number } {
  const p = lonLatToPixel(lon, lat, vp.zoom);
  const c = lonLatToPixel(vp.centerLon, vp.centerLat, vp.zoom);
  return { x: vp.width / 2 + (p.x - c.x), y: vp.height / 2 + (p.y - c.y) };
}

/** Map a metric value onto a blue→red heat color; null renders grey. */
export function heatColor(value: number | null, lo: number, hi: number): string {
  if (value === null || !Number.isFinite(value)) return "#888888";
  const t = Math.min(1, Math.max(0, (value - lo) / (hi - lo)));
  const r = Math.round(255 * t);
  const b = Math.round(255 * (1 - t));
  return `rgb(${r},64,${b})`;
}

/** Choose a viewport that contains every point with some margin. */
export function fitViewport(
  points: Array<{ lat: number; lon: number }>,
  width: number,
  height: number,
): Viewport {
  if (points.length === 0) {
    return { centerLat: 0, centerLon: 0, zoom: 2, width, height };
  }
  const lats = points.map((p) => p.lat);
  const lons = points.map((p) => p.lon);
  const centerLat = (Math.min(...lats) + Math.max(...lats)) / 2;
  const centerLon = (Math.min(...lons) + Math.max(...lons)) / 2;
  for (let zoom = 19; zoom >= 2; zoom--) {
    const vp = { centerLat, centerLon, zoom, width, height };
    const inside = points.every((p) => {
      const s = project(p.lon, p.lat, vp);
      return s.x > 20 && s.x < width - 20 && s.y > 20 && s.y < height - 20;
    });
    if (inside) return vp;
  }
  return { centerLat, centerLon, zoom: 2, width, height };
}

export class MapView {
  private tileCache = new Map<string, HTMLImageElement>();
  private tilesBroken = false;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly tileUrl = "https://tile.openstreetmap.org/{z}/{x}/{y}.png",
  ) {}

  render(trail: TrailPoint[], txFix: { lat: number; lon: number } | null, metricRange: [number, number]): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const pts: Array<{ lat: number; lon: number }> = [...trail];
    if (txFix) pts.push(txFix);
    const vp = fitViewport(pts, this.canvas.width, this.canvas.height);
    this.drawBase(ctx, vp);
    ctx.lineWidth = 0;
    for (const p of trail) {
      const s = project(p.lon, p.lat, vp);
      ctx.fillStyle = heatColor(p.metric, metricRange[0], metricRange[1]);
      ctx.beginPath();
      ctx.arc(s.x, s.y, 3, 0, 2 * Math.PI);
      ctx.fill();
    }
    if (txFix) this.drawDiamond(ctx, project(txFix.lon, txFix.lat, vp));
  }

  private drawBase(ctx: CanvasRenderingContext2D, vp: Viewport): void {
    ctx.fillStyle = "#1c2330";
    ctx.fillRect(0, 0, vp.width, vp.height);
    if (!this.tilesBroken) this.drawTiles(ctx, vp);
    // offline fallback grid (also drawn under sparse tiles)
    ctx.strokeStyle = "rgba(255,255,255,0.08)";
    ctx.lineWidth = 1;
    for (let x = 0; x < vp.width; x += 64) {
      ctx.beginPath();
      ctx.moveTo(x, 0);
      ctx.lineTo(x, vp.height);
      ctx.stroke();
    }
    for (let y = 0; y < vp.height; y += 64) {
      ctx.beginPath();
      ctx.moveTo(0, y);
      ctx.lineTo(vp.width, y);
      ctx.stroke();
    }
  }

  private drawTiles(ctx: CanvasRenderingContext2D, vp: Viewport): void {
    const c = lonLatToPixel(vp.centerLon, vp.centerLat, vp.zoom);
    const x0 = Math.floor((c.x - vp.width / 2) / TILE_SIZE);
    const y0 = Math.floor((c.y - vp.height / 2) / TILE_SIZE);
    const x1 = Math.ceil((c.x + vp.width / 2) / TILE_SIZE);
    const y1 = Math.ceil((c.y + vp.height / 2) / TILE_SIZE);
    for (let tx = x0; tx < x1; tx++) {
      for (let ty = y0; ty < y1; ty++) {
        const img = this.tile(vp.zoom, tx, ty);
        if (img?.complete && img.naturalWidth > 0) {
          ctx.drawImage(
            img,
            vp.width / 2 + tx * TILE_SIZE - c.x,
            vp.height / 2 + ty * TILE_SIZE - c.y,
          );
        }
      }
    }
  }

  private tile(z: number, x: number, y: number): HTMLImageElement | null {
    const key = `${z}/${x}/${y}`;
    let img = this.tileCache.get(key) ?? null;
    if (!img && typeof Image !== "undefined") {
      img = new Image();
      img.crossOrigin = "anonymous";
      img.onerror = () => {
        this.tilesBroken = true; // offline: grid fallback only from here on
      };
      img.src = this.tileUrl.replace("{z}", String(z)).replace("{x}", String(x)).replace("{y}", String(y));
      this.tileCache.set(key, img);
    }
    return img;
  }

  private drawDiamond(ctx: CanvasRenderingContext2D, s: { x: number; y: number }): void {
    ctx.fillStyle = "#b44bd6"; // the fixed transmitter marker
    ctx.beginPath();
    ctx.moveTo(s.x, s.y - 8);
    ctx.lineTo(s.x + 8, s.y);
    ctx.lineTo(s.x, s.y + 8);
    ctx.lineTo(s.x - 8, s.y);
    ctx.closePath();
    ctx.fill();
    ctx.strokeStyle = "#ffffff";
    ctx.lineWidth = 1.5;
    ctx.stroke();
  }
}
