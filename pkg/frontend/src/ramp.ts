/** Blue-to-red color ramp, matching the server-side renderer. */

export type RGB = [number, number, number];

const BLUE: RGB = [0, 0, 255];
const RED: RGB = [255, 0, 0];

export function blueRed(t: number): RGB {
  const x = Math.min(1, Math.max(0, t));
  return [
    Math.round(BLUE[0] * (1 - x) + RED[0] * x),
    Math.round(BLUE[1] * (1 - x) + RED[1] * x),
    Math.round(BLUE[2] * (1 - x) + RED[2] * x),
  ];
}

export function cssColor(rgb: RGB, alpha: number): string {
  return `rgba(${rgb[0]}, ${rgb[1]}, ${rgb[2]}, ${alpha})`;
}
