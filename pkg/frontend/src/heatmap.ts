/** Client-side rasterization of keyword attention weights.
 *
 * The server sends one weight per kept patch plus its (row, col) grid
 * position; the client never resamples. Cells without a patch stay null
 * (background that the tiler dropped).
 */

import type { HeatmapResponse } from "./api.js";
import { blueRed, cssColor, type RGB } from "./ramp.js";

export interface CellGrid {
  rows: number;
  cols: number;
  cells: (RGB | null)[]; // row-major, rows * cols entries
}

export function buildCellGrid(hm: HeatmapResponse): CellGrid {
  const { rows, cols } = hm.grid;
  if (hm.weights.length !== hm.coords.length) {
    throw new Error("heatmap weights and coords differ in length");
  }
  const lo = Math.min(...hm.weights);
  const hi = Math.max(...hm.weights);
  const span = hi - lo;
  const cells: (RGB | null)[] = new Array(rows * cols).fill(null);
  hm.weights.forEach((w, i) => {
    const [r, c] = hm.coords[i];
    if (r < 0 || r >= rows || c < 0 || c >= cols) {
      throw new Error(`coord (${r}, ${c}) outside ${rows}x${cols} grid`);
    }
    const t = span === 0 ? 0.5 : (w - lo) / span;
    cells[r * cols + c] = blueRed(t);
  });
  return { rows, cols, cells };
}

/** Minimal 2D-context surface so tests can run without a real canvas. */
export interface CellPainter {
  clearRect(x: number, y: number, w: number, h: number): void;
  fillRect(x: number, y: number, w: number, h: number): void;
  fillStyle: string | CanvasGradient | CanvasPattern;
}

export function paintOverlay(
  ctx: CellPainter,
  grid: CellGrid,
  width: number,
  height: number,
  opacity: number,
): number {
  ctx.clearRect(0, 0, width, height);
  if (opacity <= 0) return 0; // thumbnail stays untouched
  const cellW = width / grid.cols;
  const cellH = height / grid.rows;
  let painted = 0;
  grid.cells.forEach((cell, idx) => {
    if (!cell) return;
    const r = Math.floor(idx / grid.cols);
    const c = idx % grid.cols;
    ctx.fillStyle = cssColor(cell, opacity);
    ctx.fillRect(c * cellW, r * cellH, cellW, cellH);
    painted += 1;
  });
  return painted;
}
