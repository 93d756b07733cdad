import { describe, expect, it } from "vitest";

import { colorFor, renderHeatmap, SCALE_MAX_C, SCALE_MIN_C } from "../src/heatmap.js";

describe("color scale", () => {
  it("is fixed to 18..45 degC", () => {
    expect(SCALE_MIN_C).toBe(18);
    expect(SCALE_MAX_C).toBe(45);
  });

  it("clamps outside the range", () => {
    expect(colorFor(-100)).toEqual(colorFor(SCALE_MIN_C));
    expect(colorFor(500)).toEqual(colorFor(SCALE_MAX_C));
  });

  it("cold is blue-ish, hot is red-ish", () => {
    const cold = colorFor(SCALE_MIN_C);
    const hot = colorFor(SCALE_MAX_C);
    expect(cold[2]).toBeGreaterThan(cold[0]);
    expect(hot[0]).toBeGreaterThan(hot[2]);
  });
});

describe("heatmap rendering", () => {
  it("cell count matches the slice dims", () => {
    const temps: (number | null)[][] = [
      [20, 21, 22],
      [23, null, 25],
    ];
    const img = renderHeatmap(temps);
    expect(img.width).toBe(3);
    expect(img.height).toBe(2);
    expect(img.cellCount).toBe(6);
    expect(img.rgba.length).toBe(6 * 4);
  });

  it("solid cells render gray, fluid cells render scale colors", () => {
    const img = renderHeatmap([[null, 20]]);
    const solid = Array.from(img.rgba.slice(0, 4));
    const fluid = Array.from(img.rgba.slice(4, 8));
    expect(solid[0]).toBe(solid[1]); // gray has r == g
    expect(fluid).toEqual([...colorFor(20)]);
  });

  it("flips rows so y points up", () => {
    const img = renderHeatmap([[18], [45]]);
    // input row 0 (18 C) must land at the bottom = last output row
    const top = Array.from(img.rgba.slice(0, 4));
    expect(top).toEqual([...colorFor(45)]);
  });
});
