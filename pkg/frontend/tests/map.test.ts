import { describe, expect, it } from "vitest";

import { fitViewport, heatColor, lonLatToPixel, project } from "../src/map.js";

describe("web-mercator projection", () => {
  it("maps the origin to the center of the world plane", () => {
    const p = lonLatToPixel(0, 0, 1);
    expect(p.x).toBeCloseTo(256);
    expect(p.y).toBeCloseTo(256);
  });

  it("doubles pixel coordinates per zoom level", () => {
    const a = lonLatToPixel(-111.846, 40.766, 10);
    const b = lonLatToPixel(-111.846, 40.766, 11);
    expect(b.x).toBeCloseTo(2 * a.x);
    expect(b.y).toBeCloseTo(2 * a.y);
  });

  it("centers the viewport anchor on screen", () => {
    const vp = { centerLat: 40.766, centerLon: -111.846, zoom: 15, width: 800, height: 600 };
    const s = project(-111.846, 40.766, vp);
    expect(s.x).toBeCloseTo(400);
    expect(s.y).toBeCloseTo(300);
  });

  it("puts east to the right and north up", () => {
    const vp = { centerLat: 40.766, centerLon: -111.846, zoom: 15, width: 800, height: 600 };
    expect(project(-111.845, 40.766, vp).x).toBeGreaterThan(400);
    expect(project(-111.846, 40.767, vp).y).toBeLessThan(300);
  });
});

describe("fitViewport", () => {
  it("keeps every point inside the margin", () => {
    const points = [
      { lat: 40.766, lon: -111.846 },
      { lat: 40.769, lon: -111.842 },
      { lat: 40.763, lon: -111.849 },
    ];
    const vp = fitViewport(points, 800, 600);
    for (const p of points) {
      const s = project(p.lon, p.lat, vp);
      expect(s.x).toBeGreaterThan(20);
      expect(s.x).toBeLessThan(780);
      expect(s.y).toBeGreaterThan(20);
      expect(s.y).toBeLessThan(580);
    }
  });

  it("picks the largest zoom that still fits", () => {
    const tight = fitViewport(
      [
        { lat: 40.766, lon: -111.846 },
        { lat: 40.7661, lon: -111.8459 },
      ],
      800,
      600,
    );
    const wide = fitViewport(
      [
        { lat: 40.7, lon: -111.9 },
        { lat: 40.9, lon: -111.7 },
      ],
      800,
      600,
    );
    expect(tight.zoom).toBeGreaterThan(wide.zoom);
  });

  it("falls back to a world view with no points", () => {
    expect(fitViewport([], 800, 600).zoom).toBe(2);
  });
});

describe("heatColor", () => {
  it("spans blue to red across the range", () => {
    expect(heatColor(-90, -90, -50)).toBe("rgb(0,64,255)");
    expect(heatColor(-50, -90, -50)).toBe("rgb(255,64,0)");
  });

  it("clamps out-of-range values", () => {
    expect(heatColor(-200, -90, -50)).toBe("rgb(0,64,255)");
    expect(heatColor(0, -90, -50)).toBe("rgb(255,64,0)");
  });

  it("renders unknown values grey", () => {
    expect(heatColor(null, -90, -50)).toBe("#888888");
    expect(heatColor(Number.NaN, -90, -50)).toBe("#888888");
  });
});
