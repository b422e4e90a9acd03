/** Typed client over the slideqa HTTP endpoints. */

export interface SlideInfo {
  slide_id: string;
  thumbnail_url: string;
  n_patches: number;
}

export interface AskResponse {
  qa_id: string;
  answer: string;
  log_prob: number;
  truncated: boolean;
}

export interface HeatmapResponse {
  weights: number[];
  grid: { rows: number; cols: number };
  coords: [number, number][];
  slide_id: string;
  source: Record<string, unknown>;
}

export interface HistoryEntry {
  qa_id: string;
  slide_id: string;
  question: string;
  answer: string;
  timestamp: number;
}

export class ApiRequestError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    readonly detail: string,
  ) {
    super(`${code}: ${detail}`);
  }
}

async function parseError(resp: Response): Promise<never> {
  let code = "http_error";
  let detail = resp.statusText;
  try {
    const body = (await resp.json()) as { error?: string; detail?: string };
    if (body.error) code = body.error;
    if (body.detail) detail = body.detail;
  } catch {
    /* non-JSON error body; keep the status text */
  }
  throw new ApiRequestError(resp.status, code, detail);
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private async get<T>(path: string, signal?: AbortSignal): Promise<T> {
    const resp = await fetch(this.baseUrl + path, { signal });
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  listSlides(): Promise<SlideInfo[]> {
    return this.get("/slides");
  }

  async ask(slideId: string, question: string, beam?: number): Promise<AskResponse> {
    const resp = await fetch(this.baseUrl + "/ask", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ slide_id: slideId, question, beam: beam ?? null }),
    });
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as AskResponse;
  }

  heatmap(qaId: string, keyword: string, signal?: AbortSignal): Promise<HeatmapResponse> {
    const q = encodeURIComponent(keyword);
    return this.get(`/heatmap/${qaId}?keyword=${q}`, signal);
  }

  history(): Promise<HistoryEntry[]> {
    return this.get("/history");
  }

  thumbnailUrl(slideId: string): string {
    return `${this.baseUrl}/thumbnail/${slideId}`;
  }
}
