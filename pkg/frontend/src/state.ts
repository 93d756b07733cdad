// Panel state and the debounced single-in-flight request policy.
//
// The view is a pure function of (scene, slider values, last response):
// every control change lands in PanelState, a 150 ms debounce collapses
// bursts into one request, and responses that were superseded by a newer
// request are discarded.

import type { Scene, WhatIfRequest, WhatIfResponse } from "./api.js";

export const SUPPLY_RANGE: [number, number] = [18, 24];
// nominal rack power sits at the bottom of the trained 1000..2000 W envelope,
// so only up-multipliers stay inside it
export const POWER_MULT_RANGE: [number, number] = [1.0, 2.0];
export const DEBOUNCE_MS = 150;
export const DEFAULT_HOTSPOT_C = 27;

export interface PanelState {
  supplyTempC: number[];           // per ACU
  rackPowerMult: Map<string, number>;
  sliceAxis: string;
  sliceIndex: number;
  engine: "surrogate" | "oracle";
  lastResponse: WhatIfResponse | null;
  pending: boolean;
  requestSerial: number;           // id of the newest issued request
  error: string | null;
}

export function initialState(scene: Scene, sliceIndex: number): PanelState {
  return {
    supplyTempC: scene.acus.map((a) => a.supply_temp_c),
    rackPowerMult: new Map(scene.racks.map((r) => [r.id, 1.0])),
    sliceAxis: "z",
    sliceIndex,
    engine: "surrogate",
    lastResponse: null,
    pending: false,
    requestSerial: 0,
    error: null,
  };
}

export function clamp(value: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, value));
}

export function setSupply(state: PanelState, acu: number, value: number): void {
  state.supplyTempC[acu] = clamp(value, SUPPLY_RANGE[0], SUPPLY_RANGE[1]);
}

export function setRackMultiplier(state: PanelState, rackId: string, value: number): void {
  state.rackPowerMult.set(rackId, clamp(value, POWER_MULT_RANGE[0], POWER_MULT_RANGE[1]));
}

export function buildRequest(state: PanelState, scene: Scene): WhatIfRequest {
  const acu: Record<string, { supply_temp_c: number }> = {};
  state.supplyTempC.forEach((t, i) => {
    if (t !== scene.acus[i].supply_temp_c) acu[String(i)] = { supply_temp_c: t };
  });
  const racks: Record<string, number> = {};
  for (const [id, mult] of state.rackPowerMult) {
    if (mult !== 1.0) racks[id] = mult;
  }
  const req: WhatIfRequest = {
    engine: state.engine,
    slice: { axis: state.sliceAxis, index: state.sliceIndex },
  };
  if (Object.keys(acu).length) req.acu_overrides = acu;
  if (Object.keys(racks).length) req.rack_power_overrides = racks;
  return req;
}

/** Collapses change bursts into one request and discards stale responses. */
export class RequestScheduler {
  private timer: ReturnType<typeof setTimeout> | null = null;
  issued = 0;

  constructor(
    private send: (serial: number) => void,
    private debounceMs: number = DEBOUNCE_MS,
  ) {}

  /** Call on every control change; the trailing edge fires one request. */
  poke(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.issued += 1;
      this.send(this.issued);
    }, this.debounceMs);
  }

  /** True when a response for `serial` is still the newest one. */
  isCurrent(serial: number): boolean {
    return serial === this.issued;
  }
}

export function applyResponse(
  state: PanelState,
  serial: number,
  scheduler: RequestScheduler,
  response: WhatIfResponse,
): boolean {
  if (!scheduler.isCurrent(serial)) return false; // superseded, discard
  state.lastResponse = response;
  state.pending = false;
  state.error = null;
  return true;
}

export function hotspotRows(
  inletTemps: number[],
  thresholdC: number = DEFAULT_HOTSPOT_C,
): boolean[] {
  return inletTemps.map((t) => t > thresholdC);
}
