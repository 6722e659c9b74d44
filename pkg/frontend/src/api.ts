import { encodeGrayPng } from "./png";
import { rasterize } from "./raster";
import { RetrieveResponse, StrokeSet } from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export interface ClientOptions {
  baseUrl?: string;
  /** Resolution the service embeds at; the canvas is rasterized to this. */
  resolution?: number;
  fetchFn?: FetchLike;
}

export const DEFAULT_RESOLUTION = 64;

/**
 * Retrieval client with single-in-flight semantics: every submit gets a
 * monotonically increasing token, and responses that come back after a
 * newer submit has been issued are discarded.
 */
export class RetrievalClient {
  private readonly baseUrl: string;
  private readonly resolution: number;
  private readonly fetchFn: FetchLike;
  private latestToken = 0;

  constructor(options: ClientOptions = {}) {
    this.baseUrl = (options.baseUrl ?? "").replace(/\/$/, "");
    this.resolution = options.resolution ?? DEFAULT_RESOLUTION;
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
  }

  /**
   * Rasterizes the strokes, posts them, and resolves with the ranked cards
   * — or null if this submit was superseded by a newer one while in flight.
   */
  async submit(set: StrokeSet, k: number): Promise<RetrieveResponse | null> {
    const token = ++this.latestToken;
    const pixels = rasterize(set, this.resolution);
    const png = encodeGrayPng(pixels, this.resolution);

    const response = await this.fetchFn(
      `${this.baseUrl}/api/retrieve?k=${k}`,
      {
        method: "POST",
        headers: { "content-type": "application/octet-stream" },
        body: png.buffer as ArrayBuffer,
      },
    );
    if (token !== this.latestToken) {
      return null; // a newer sketch was submitted while we waited
    }
    if (!response.ok) {
      const detail = await response.text().catch(() => "");
      throw new Error(`retrieve failed (${response.status}): ${detail}`);
    }
    return (await response.json()) as RetrieveResponse;
  }

  async health(): Promise<{ status: string; gallery_size: number }> {
    const response = await this.fetchFn(`${this.baseUrl}/api/health`);
    if (!response.ok) {
      throw new Error(`health check failed (${response.status})`);
    }
    return response.json();
  }

  /** Absolute URL for a service-relative thumbnail/view path. */
  resolveUrl(path: string): string {
    return `${this.baseUrl}${path}`;
  }
}
