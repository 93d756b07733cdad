// Temperature slice rendering: a fixed 18..45 degC linear color scale into
// RGBA pixels, solid cells gray. DOM-free so it is unit-testable; main.ts
// blits the buffer onto a canvas.

export const SCALE_MIN_C = 18;
export const SCALE_MAX_C = 45;

const SOLID_RGBA: [number, number, number, number] = [70, 70, 78, 255];

// blue -> cyan -> yellow -> red
const STOPS: [number, [number, number, number]][] = [
  [0.0, [28, 60, 190]],
  [0.35, [40, 190, 220]],
  [0.65, [235, 220, 70]],
  [1.0, [205, 35, 35]],
];

export function colorFor(tempC: number): [number, number, number, number] {
  const u = Math.min(1, Math.max(0, (tempC - SCALE_MIN_C) / (SCALE_MAX_C - SCALE_MIN_C)));
  for (let i = 1; i < STOPS.length; i++) {
    const [u1, c1] = STOPS[i];
    const [u0, c0] = STOPS[i - 1];
    if (u <= u1) {
      const w = (u - u0) / (u1 - u0);
      return [
        Math.round(c0[0] + w * (c1[0] - c0[0])),
        Math.round(c0[1] + w * (c1[1] - c0[1])),
        Math.round(c0[2] + w * (c1[2] - c0[2])),
        255,
      ];
    }
  }
  return [...STOPS[STOPS.length - 1][1], 255] as [number, number, number, number];
}

export interface HeatmapImage {
  width: number;   // cells along the slice's fast axis
  height: number;
  rgba: Uint8ClampedArray<ArrayBuffer>;  // width*height*4, row 0 at the TOP
  cellCount: number;
}

export function renderHeatmap(temps: (number | null)[][]): HeatmapImage {
  const height = temps.length;
  const width = height ? temps[0].length : 0;
  const rgba = new Uint8ClampedArray(new ArrayBuffer(width * height * 4));
  let cells = 0;
  for (let r = 0; r < height; r++) {
    const row = temps[r];
    // slice rows come y-ascending; render with y up
    const outRow = height - 1 - r;
    for (let c = 0; c < width; c++) {
      const v = row[c];
      const px = (outRow * width + c) * 4;
      const color = v === null ? SOLID_RGBA : colorFor(v);
      rgba[px] = color[0];
      rgba[px + 1] = color[1];
      rgba[px + 2] = color[2];
      rgba[px + 3] = color[3];
      cells += 1;
    }
  }
  return { width, height, rgba, cellCount: cells };
}
