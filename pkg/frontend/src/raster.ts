import { StrokeSet } from "./types";

/**
 * Rasterizes a stroke set to the retrieval service's preprocessing
 * contract: square grayscale raster, white (255) background, black (0)
 * strokes, drawn as round-capped thick polylines.
 *
 * This happens client-side at the service's configured resolution so the
 * wire payload is small and the boundary contract is explicit. The output
 * is deterministic for a given stroke set, which is what the golden-image
 * test pins down.
 */
export function rasterize(set: StrokeSet, resolution: number): Uint8ClampedArray {
  const pixels = new Uint8ClampedArray(resolution * resolution).fill(255);
  const scale = resolution / set.canvasSize;
  const radius = (set.penWidth * scale) / 2;

  for (const stroke of set.strokes) {
    const pts = stroke.points;
    if (pts.length === 0) continue;
    for (let i = 0; i < Math.max(1, pts.length - 1); i++) {
      const a = pts[i];
      const b = pts[Math.min(i + 1, pts.length - 1)];
      inkSegment(
        pixels,
        resolution,
        a.x * scale,
        a.y * scale,
        b.x * scale,
        b.y * scale,
        radius,
      );
    }
  }
  return pixels;
}

/** Inks every pixel whose center lies within `radius` of segment AB. */
function inkSegment(
  pixels: Uint8ClampedArray,
  resolution: number,
  ax: number,
  ay: number,
  bx: number,
  by: number,
  radius: number,
): void {
  const x0 = Math.max(0, Math.floor(Math.min(ax, bx) - radius - 1));
  const x1 = Math.min(resolution - 1, Math.ceil(Math.max(ax, bx) + radius + 1));
  const y0 = Math.max(0, Math.floor(Math.min(ay, by) - radius - 1));
  const y1 = Math.min(resolution - 1, Math.ceil(Math.max(ay, by) + radius + 1));
  const dx = bx - ax;
  const dy = by - ay;
  const lenSq = dx * dx + dy * dy;
  const r2 = radius * radius;

  for (let y = y0; y <= y1; y++) {
    for (let x = x0; x <= x1; x++) {
      const px = x + 0.5;
      const py = y + 0.5;
      let t = 0;
      if (lenSq > 0) {
        t = Math.min(1, Math.max(0, ((px - ax) * dx + (py - ay) * dy) / lenSq));
      }
      const cx = ax + t * dx - px;
      const cy = ay + t * dy - py;
      if (cx * cx + cy * cy <= r2) {
        pixels[y * resolution + x] = 0;
      }
    }
  }
}
