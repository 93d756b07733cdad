import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import type { Scene, WhatIfResponse } from "../src/api.js";
import {
  applyResponse,
  buildRequest,
  clamp,
  DEBOUNCE_MS,
  hotspotRows,
  initialState,
  RequestScheduler,
  setRackMultiplier,
  setSupply,
} from "../src/state.js";

function fakeScene(nAcus = 2, nRacks = 2): Scene {
  return {
    format_version: 1,
    hall_dims: [30, 20, 4],
    racks: Array.from({ length: nRacks }, (_, i) => ({
      id: `R${i}`, lo: [0, 0, 0], hi: [1, 1, 2],
    })),
    servers: [],
    acus: Array.from({ length: nAcus }, (_, i) => ({
      id: `ACU${i}`, supply_temp_c: 21, flow_m3s: 4,
      supply_face: { lo: [0, 0, 0], hi: [0, 1, 1], normal: [1, 0, 0] },
      return_face: { lo: [0, 0, 4], hi: [1, 1, 4], normal: [0, 0, -1] },
    })),
  };
}

function fakeResponse(): WhatIfResponse {
  return {
    engine: "surrogate", latency_ms: 10, warning: null,
    slice: { axis: "z", index: 3, temps_c: [[20]], speed_ms: [[0.1]] },
    server_inlet_temps_c: [21], stats: { median_inlet_c: 21, p95_inlet_c: 21, max_inlet_c: 21 },
  };
}

describe("debounce", () => {
  beforeEach(() => vi.useFakeTimers());
  afterEach(() => vi.useRealTimers());

  it("collapses a burst of slider moves into exactly one request", () => {
    const sent: number[] = [];
    const sched = new RequestScheduler((serial) => sent.push(serial));
    for (let i = 0; i < 5; i++) {
      sched.poke();
      vi.advanceTimersByTime(20); // 5 moves within 100 ms
    }
    expect(sent).toHaveLength(0);
    vi.advanceTimersByTime(DEBOUNCE_MS + 1);
    expect(sent).toHaveLength(1);
  });

  it("separate bursts yield separate requests", () => {
    const sent: number[] = [];
    const sched = new RequestScheduler((serial) => sent.push(serial));
    sched.poke();
    vi.advanceTimersByTime(DEBOUNCE_MS + 1);
    sched.poke();
    vi.advanceTimersByTime(DEBOUNCE_MS + 1);
    expect(sent).toEqual([1, 2]);
  });
});

describe("supersession", () => {
  it("stale responses are discarded", () => {
    const scene = fakeScene();
    const state = initialState(scene, 3);
    const sched = new RequestScheduler(() => undefined, 0);
    sched.issued = 2; // a newer request is already in flight
    expect(applyResponse(state, 1, sched, fakeResponse())).toBe(false);
    expect(state.lastResponse).toBeNull();
    expect(applyResponse(state, 2, sched, fakeResponse())).toBe(true);
    expect(state.lastResponse).not.toBeNull();
  });
});

describe("clamping", () => {
  it("slider values clamp to the service envelope", () => {
    const scene = fakeScene();
    const state = initialState(scene, 3);
    setSupply(state, 0, 31);
    expect(state.supplyTempC[0]).toBe(24);
    setSupply(state, 1, 2);
    expect(state.supplyTempC[1]).toBe(18);
    setRackMultiplier(state, "R0", 99);
    expect(state.rackPowerMult.get("R0")).toBe(2.0);
    expect(clamp(21, 18, 24)).toBe(21);
  });

  it("requests never contain out-of-bounds values", () => {
    const scene = fakeScene();
    const state = initialState(scene, 3);
    setSupply(state, 0, 100);
    setRackMultiplier(state, "R1", -5);
    const req = buildRequest(state, scene);
    expect(req.acu_overrides!["0"].supply_temp_c).toBe(24);
    // multipliers below 1.0 would leave the trained power envelope, so the
    // value clamps back to 1.0 and no rack override is sent at all
    expect(req.rack_power_overrides).toBeUndefined();
    expect(state.rackPowerMult.get("R1")).toBe(1.0);
  });
});

describe("request building", () => {
  it("only changed controls are sent as overrides", () => {
    const scene = fakeScene();
    const state = initialState(scene, 3);
    let req = buildRequest(state, scene);
    expect(req.acu_overrides).toBeUndefined();
    expect(req.rack_power_overrides).toBeUndefined();
    expect(req.slice).toEqual({ axis: "z", index: 3 });

    setSupply(state, 1, 22.5);
    req = buildRequest(state, scene);
    expect(req.acu_overrides).toEqual({ "1": { supply_temp_c: 22.5 } });
  });
});

describe("hotspots", () => {
  it("rows above 27 degC are flagged", () => {
    expect(hotspotRows([26.9, 27.0, 28.1])).toEqual([false, false, true]);
  });

  it("threshold is configurable", () => {
    expect(hotspotRows([26.9, 28.1], 29)).toEqual([false, false]);
  });
});
