// Typed client for the what-if HTTP API.

export interface SceneFace {
  lo: number[];
  hi: number[];
  normal: number[];
}

export interface SceneAcu {
  id: string;
  supply_temp_c: number;
  flow_m3s: number;
  supply_face: SceneFace;
  return_face: SceneFace;
}

export interface SceneRack {
  id: string;
  lo: number[];
  hi: number[];
}

export interface SceneServer {
  id: string;
  rack_id: string;
  power_w: number;
  flow_m3s: number;
}

export interface Scene {
  format_version: number;
  hall_dims: number[];
  racks: SceneRack[];
  servers: SceneServer[];
  acus: SceneAcu[];
}

export interface GridMeta {
  dims: number[];
  resolution: number;
  hall_dims: number[];
  default_slice: { axis: string; index: number };
}

export interface WhatIfRequest {
  engine: "surrogate" | "oracle";
  acu_overrides?: Record<string, { supply_temp_c?: number; flow_m3s?: number }>;
  rack_power_overrides?: Record<string, number>;
  slice?: { axis: string; index: number };
}

export interface WhatIfResponse {
  engine: string;
  latency_ms: number;
  warning: string | null;
  slice: {
    axis: string;
    index: number;
    temps_c: (number | null)[][];
    speed_ms: (number | null)[][];
  };
  server_inlet_temps_c: number[];
  stats: { median_inlet_c: number; p95_inlet_c: number; max_inlet_c: number };
}

export interface ApiError {
  code: string;
  message: string;
}

export class ServiceClient {
  constructor(private base: string = "") {}

  private async get<T>(path: string): Promise<T> {
    const res = await fetch(this.base + path);
    if (!res.ok) throw await this.toError(res);
    return (await res.json()) as T;
  }

  private async toError(res: Response): Promise<ApiError> {
    try {
      const body = await res.json();
      return { code: body.code ?? `HTTP_${res.status}`, message: body.message ?? "" };
    } catch {
      return { code: `HTTP_${res.status}`, message: res.statusText };
    }
  }

  scene(): Promise<Scene> {
    return this.get<Scene>("/api/scene");
  }

  grid(): Promise<GridMeta> {
    return this.get<GridMeta>("/api/grid");
  }

  health(): Promise<{ status: string }> {
    return this.get<{ status: string }>("/api/health");
  }

  async whatif(req: WhatIfRequest): Promise<WhatIfResponse> {
    const res = await fetch(this.base + "/api/whatif", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(req),
    });
    if (!res.ok) throw await this.toError(res);
    return (await res.json()) as WhatIfResponse;
  }
}
