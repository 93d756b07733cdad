// Entry point: fetch the scene, build the panel, wire the debounced
// what-if loop, render heatmap + inlet table on every response.

import { ServiceClient } from "./api.js";
import { buildControls, renderInletTable } from "./controls.js";
import { renderHeatmap } from "./heatmap.js";
import {
  applyResponse,
  buildRequest,
  hotspotRows,
  initialState,
  RequestScheduler,
  setRackMultiplier,
  setSupply,
} from "./state.js";

const client = new ServiceClient("");

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing #${id}`);
  return found as T;
}

function showBanner(message: string | null): void {
  const banner = el<HTMLDivElement>("banner");
  banner.textContent = message ?? "";
  banner.style.display = message ? "block" : "none";
}

async function boot(): Promise<void> {
  let scene;
  let gridMeta;
  try {
    [scene, gridMeta] = await Promise.all([client.scene(), client.grid()]);
  } catch (err) {
    showBanner("service unreachable - is `dcpa serve` running?");
    el<HTMLButtonElement>("retry").style.display = "inline-block";
    return;
  }
  showBanner(null);
  el<HTMLButtonElement>("retry").style.display = "none";

  const state = initialState(scene, gridMeta.default_slice.index);
  const canvas = el<HTMLCanvasElement>("heatmap");
  const latency = el<HTMLSpanElement>("latency");
  const stats = el<HTMLSpanElement>("stats");
  const tableRoot = el<HTMLDivElement>("inlet-table");

  const render = () => {
    const res = state.lastResponse;
    if (!res) return;
    const t0 = performance.now();
    const img = renderHeatmap(res.slice.temps_c);
    canvas.width = img.width;
    canvas.height = img.height;
    const ctx = canvas.getContext("2d");
    if (ctx) {
      ctx.putImageData(new ImageData(img.rgba, img.width, img.height), 0, 0);
    }
    renderInletTable(tableRoot, scene, res.server_inlet_temps_c,
                     hotspotRows(res.server_inlet_temps_c));
    latency.textContent = `${res.latency_ms.toFixed(0)} ms`;
    stats.textContent =
      `inlets: median ${res.stats.median_inlet_c.toFixed(2)} degC, ` +
      `p95 ${res.stats.p95_inlet_c.toFixed(2)}, max ${res.stats.max_inlet_c.toFixed(2)}`;
    const renderMs = performance.now() - t0;
    el<HTMLSpanElement>("render-ms").textContent = `${renderMs.toFixed(0)} ms`;
  };

  const scheduler = new RequestScheduler(async (serial) => {
    state.pending = true;
    try {
      const res = await client.whatif(buildRequest(state, scene));
      if (applyResponse(state, serial, scheduler, res)) render();
    } catch (err) {
      if (scheduler.isCurrent(serial)) {
        state.pending = false;
        const e = err as { code?: string; message?: string };
        showBanner(`request failed: ${e.code ?? "error"} ${e.message ?? ""}`);
      }
    }
  });

  buildControls(
    el<HTMLDivElement>("controls"),
    scene,
    (i, v) => {
      setSupply(state, i, v);
      scheduler.poke();
    },
    (rackId, v) => {
      setRackMultiplier(state, rackId, v);
      scheduler.poke();
    },
  );

  // first paint
  scheduler.poke();
}

el<HTMLButtonElement>("retry").addEventListener("click", () => void boot());
void boot();
