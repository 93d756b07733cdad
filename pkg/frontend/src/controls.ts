// DOM construction for the control panel: one slider group per ACU and one
// power-multiplier slider per rack, grouped by rack row.

import type { Scene } from "./api.js";
import { POWER_MULT_RANGE, SUPPLY_RANGE } from "./state.js";

export interface ControlRefs {
  acuSliders: HTMLInputElement[];
  rackSliders: Map<string, HTMLInputElement>;
}

function slider(min: number, max: number, step: number, value: number): HTMLInputElement {
  const el = document.createElement("input");
  el.type = "range";
  el.min = String(min);
  el.max = String(max);
  el.step = String(step);
  el.value = String(value);
  return el;
}

function labelled(text: string, el: HTMLElement): HTMLElement {
  const wrap = document.createElement("label");
  wrap.className = "control";
  const span = document.createElement("span");
  span.textContent = text;
  wrap.append(span, el);
  return wrap;
}

/** Racks grouped by their row (y extent), preserving scene order. */
export function rackRows(scene: Scene): Map<string, string[]> {
  const rows = new Map<string, string[]>();
  for (const rack of scene.racks) {
    const key = `y ${rack.lo[1]}-${rack.hi[1]} m`;
    if (!rows.has(key)) rows.set(key, []);
    rows.get(key)!.push(rack.id);
  }
  return rows;
}

export function buildControls(
  root: HTMLElement,
  scene: Scene,
  onAcuChange: (idx: number, value: number) => void,
  onRackChange: (rackId: string, value: number) => void,
): ControlRefs {
  const refs: ControlRefs = { acuSliders: [], rackSliders: new Map() };

  const acuSection = document.createElement("section");
  acuSection.className = "acu-controls";
  const acuTitle = document.createElement("h2");
  acuTitle.textContent = "ACU supply temperature (degC)";
  acuSection.append(acuTitle);
  scene.acus.forEach((acu, i) => {
    const group = document.createElement("div");
    group.className = "acu-group";
    const s = slider(SUPPLY_RANGE[0], SUPPLY_RANGE[1], 0.1, acu.supply_temp_c);
    s.dataset.acu = String(i);
    const value = document.createElement("output");
    value.value = acu.supply_temp_c.toFixed(1);
    s.addEventListener("input", () => {
      value.value = Number(s.value).toFixed(1);
      onAcuChange(i, Number(s.value));
    });
    group.append(labelled(`${acu.id}`, s), value);
    acuSection.append(group);
    refs.acuSliders.push(s);
  });
  root.append(acuSection);

  const rackSection = document.createElement("section");
  rackSection.className = "rack-controls";
  const rackTitle = document.createElement("h2");
  rackTitle.textContent = "Rack power (x nominal)";
  rackSection.append(rackTitle);
  for (const [row, rackIds] of rackRows(scene)) {
    const rowDiv = document.createElement("div");
    rowDiv.className = "rack-row";
    const rowLabel = document.createElement("h3");
    rowLabel.textContent = `Row ${row}`;
    rowDiv.append(rowLabel);
    for (const id of rackIds) {
      const s = slider(POWER_MULT_RANGE[0], POWER_MULT_RANGE[1], 0.05, 1.0);
      s.dataset.rack = id;
      s.addEventListener("input", () => onRackChange(id, Number(s.value)));
      rowDiv.append(labelled(id, s));
      refs.rackSliders.set(id, s);
    }
    rackSection.append(rowDiv);
  }
  root.append(rackSection);
  return refs;
}

export function renderInletTable(
  root: HTMLElement,
  scene: Scene,
  temps: number[],
  hot: boolean[],
): void {
  root.textContent = "";
  const table = document.createElement("table");
  table.className = "inlet-table";
  const head = document.createElement("tr");
  for (const h of ["server", "rack", "inlet degC"]) {
    const th = document.createElement("th");
    th.textContent = h;
    head.append(th);
  }
  table.append(head);
  temps.forEach((t, i) => {
    const tr = document.createElement("tr");
    if (hot[i]) tr.className = "hotspot";
    const cells = [scene.servers[i].id, scene.servers[i].rack_id, t.toFixed(2)];
    for (const c of cells) {
      const td = document.createElement("td");
      td.textContent = c;
      tr.append(td);
    }
    table.append(tr);
  });
  root.append(table);
}
