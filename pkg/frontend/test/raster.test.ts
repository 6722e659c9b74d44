import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";

import { rasterize } from "../src/raster";
import { emptyStrokeSet } from "../src/strokes";
import { StrokeSet } from "../src/types";

const here = new URL(".", import.meta.url).pathname;
const strokeLog = JSON.parse(
  readFileSync(`${here}/fixtures/stroke-log.json`, "utf8"),
) as StrokeSet;
const golden = JSON.parse(
  readFileSync(`${here}/fixtures/golden-raster.json`, "utf8"),
) as { resolution: number; pixels_b64: string };

describe("rasterization", () => {
  it("replaying the recorded stroke log reproduces the golden raster exactly", () => {
    const pixels = rasterize(strokeLog, golden.resolution);
    const want = Uint8ClampedArray.from(
      Buffer.from(golden.pixels_b64, "base64"),
    );
    expect(pixels.length).toBe(want.length);
    expect(Buffer.from(pixels).equals(Buffer.from(want))).toBe(true);
  });

  it("is deterministic", () => {
    const a = rasterize(strokeLog, 48);
    const b = rasterize(strokeLog, 48);
    expect(Buffer.from(a).equals(Buffer.from(b))).toBe(true);
  });

  it("renders an empty set as an all-white raster", () => {
    const pixels = rasterize(emptyStrokeSet(), 16);
    expect(pixels.every((v) => v === 255)).toBe(true);
  });

  it("uses white background and pure black ink only", () => {
    const pixels = rasterize(strokeLog, golden.resolution);
    const values = new Set(pixels);
    expect(values).toEqual(new Set([0, 255]));
    expect(pixels.some((v) => v === 0)).toBe(true);
  });

  it("a single tap inks a dot at the scaled location", () => {
    const set: StrokeSet = {
      canvasSize: 256,
      penWidth: 16,
      strokes: [{ points: [{ x: 128, y: 128, t: 0 }] }],
    };
    const res = 32;
    const pixels = rasterize(set, res);
    expect(pixels[16 * res + 16]).toBe(0);
    expect(pixels[0]).toBe(255);
  });
});
