import { Stroke, StrokePoint, StrokeSet } from "./types";

export const DEFAULT_CANVAS_SIZE = 256;
export const DEFAULT_PEN_WIDTH = 4;

/** Creates an empty stroke set for a square canvas. */
export function emptyStrokeSet(
  canvasSize: number = DEFAULT_CANVAS_SIZE,
  penWidth: number = DEFAULT_PEN_WIDTH,
): StrokeSet {
  return { strokes: [], canvasSize, penWidth };
}

function clampPoint(p: StrokePoint, size: number): StrokePoint {
  return {
    x: Math.min(Math.max(p.x, 0), size - 1),
    y: Math.min(Math.max(p.y, 0), size - 1),
    t: p.t,
  };
}

/** Begins a new stroke at the given point. */
export function beginStroke(set: StrokeSet, p: StrokePoint): StrokeSet {
  const stroke: Stroke = { points: [clampPoint(p, set.canvasSize)] };
  return { ...set, strokes: [...set.strokes, stroke] };
}

/** Extends the stroke currently being drawn. No-op if none is active. */
export function extendStroke(set: StrokeSet, p: StrokePoint): StrokeSet {
  if (set.strokes.length === 0) return set;
  const strokes = set.strokes.slice();
  const last = strokes[strokes.length - 1];
  strokes[strokes.length - 1] = {
    points: [...last.points, clampPoint(p, set.canvasSize)],
  };
  return { ...set, strokes };
}

/** Removes exactly the last stroke. */
export function undo(set: StrokeSet): StrokeSet {
  return { ...set, strokes: set.strokes.slice(0, -1) };
}

/** Empties the canvas. */
export function clear(set: StrokeSet): StrokeSet {
  return { ...set, strokes: [] };
}

export function isEmpty(set: StrokeSet): boolean {
  return set.strokes.every((s) => s.points.length === 0);
}
