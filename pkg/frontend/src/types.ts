/** A single pen stroke: points in canvas coordinates with timestamps. */
export interface StrokePoint {
  x: number;
  y: number;
  t: number;
}

export interface Stroke {
  points: StrokePoint[];
}

/** All strokes on the canvas plus the geometry they were drawn in. */
export interface StrokeSet {
  strokes: Stroke[];
  canvasSize: number;
  penWidth: number;
}

/** One ranked retrieval result as reported by the service. */
export interface ResultCard {
  shape_id: string;
  category: string;
  score: number;
  thumbnail_url: string | null;
  view_urls: string[];
}

export interface RetrieveResponse {
  query_token: string;
  entries: ResultCard[];
  timing_ms: { embed: number; rank: number; serialize: number };
}
