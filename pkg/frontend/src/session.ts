/** UI session state: slide selection, ask flow, overlay, history.
 *
 * History is append-only within the session; the overlay always refers to
 * an exchange already in the history. At most one /ask is in flight, and
 * a pending heatmap fetch is cancelled when a newer one starts.
 */

import { ApiClient, type SlideInfo } from "./api.js";
import { buildCellGrid, type CellGrid } from "./heatmap.js";

export interface Exchange {
  qaId: string;
  slideId: string;
  question: string;
  answer: string;
  logProb: number;
  truncated: boolean;
  heatmapKeyword?: string;
}

export interface Overlay {
  qaId: string;
  keyword: string;
  grid: CellGrid;
}

export class UiSession {
  readonly history: Exchange[] = [];
  slides: SlideInfo[] = [];
  slideId: string | null = null;
  overlay: Overlay | null = null;
  opacity = 0.4;

  private asking = false;
  private heatmapAbort: AbortController | null = null;

  constructor(private readonly api: ApiClient) {}

  async loadSlides(): Promise<SlideInfo[]> {
    this.slides = await this.api.listSlides();
    return this.slides;
  }

  selectSlide(slideId: string): void {
    if (!this.slides.some((s) => s.slide_id === slideId)) {
      throw new Error(`unknown slide ${slideId}`);
    }
    this.slideId = slideId;
    this.overlay = null; // re-selection clears any overlay
  }

  get busy(): boolean {
    return this.asking;
  }

  async ask(question: string, beam?: number): Promise<Exchange> {
    if (!this.slideId) throw new Error("select a slide first");
    if (this.asking) throw new Error("a question is already in flight");
    this.asking = true;
    try {
      const resp = await this.api.ask(this.slideId, question, beam);
      const exchange: Exchange = {
        qaId: resp.qa_id,
        slideId: this.slideId,
        question,
        answer: resp.answer,
        logProb: resp.log_prob,
        truncated: resp.truncated,
      };
      this.history.push(exchange);
      return exchange;
    } finally {
      this.asking = false;
    }
  }

  /** Fetch and attach the keyword heatmap for an exchange (default: latest). */
  async showHeatmap(keyword: string, qaId?: string): Promise<Overlay> {
    const target = qaId
      ? this.history.find((e) => e.qaId === qaId)
      : this.history[this.history.length - 1];
    if (!target) throw new Error("nothing asked yet");
    this.heatmapAbort?.abort();
    const abort = new AbortController();
    this.heatmapAbort = abort;
    const hm = await this.api.heatmap(target.qaId, keyword, abort.signal);
    const overlay: Overlay = {
      qaId: target.qaId,
      keyword,
      grid: buildCellGrid(hm),
    };
    target.heatmapKeyword = keyword;
    this.overlay = overlay;
    return overlay;
  }

  hideHeatmap(): void {
    this.heatmapAbort?.abort();
    this.heatmapAbort = null;
    this.overlay = null;
  }

  setOpacity(value: number): void {
    this.opacity = Math.min(1, Math.max(0, value));
  }
}
