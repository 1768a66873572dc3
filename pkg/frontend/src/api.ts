import type {
  ApiErrorBody,
  DrEvent,
  Farm,
  FarmDetail,
  Instance,
  LoginResponse,
  Site,
  Template,
  UserRow,
  UtilizationReport,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    public baseUrl: string,
    private token: string | null = null,
    private fetcher: FetchLike = (input, init) => fetch(input, init),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  setToken(token: string | null): void {
    this.token = token;
  }

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    const response = await this.fetcher(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!response.ok) {
      let parsed: Partial<ApiErrorBody> = {};
      try {
        parsed = (await response.json()) as ApiErrorBody;
      } catch {
        // non-JSON error body; keep defaults
      }
      throw new ApiError(
        response.status,
        parsed.error ?? "http_error",
        parsed.message ?? response.statusText,
      );
    }
    return (await response.json()) as T;
  }

  login(username: string, credential: string): Promise<LoginResponse> {
    return this.request("POST", "/v1/login", { username, credential });
  }

  templates(projectId?: string): Promise<{ templates: Template[] }> {
    const query = projectId ? `?project_id=${encodeURIComponent(projectId)}` : "";
    return this.request("GET", `/v1/templates${query}`);
  }

  farms(): Promise<{ farms: Farm[] }> {
    return this.request("GET", "/v1/farms");
  }

  farm(farmId: string): Promise<FarmDetail> {
    return this.request("GET", `/v1/farms/${farmId}`);
  }

  instances(farmId?: string): Promise<{ instances: Instance[] }> {
    const query = farmId ? `?farm_id=${encodeURIComponent(farmId)}` : "";
    return this.request("GET", `/v1/instances${query}`);
  }

  provision(
    farmId: string,
    templateId: string,
    count: number,
    overrides?: { vcpu?: number; memory_gib?: number },
  ): Promise<{ instances: Instance[] }> {
    const body: Record<string, unknown> = { template_id: templateId, count };
    if (overrides && Object.keys(overrides).length > 0) body.overrides = overrides;
    return this.request("POST", `/v1/farms/${farmId}/instances`, body);
  }

  instanceAction(
    instanceId: string,
    action: "start" | "stop" | "destroy",
  ): Promise<{ instance: Instance }> {
    return this.request("POST", `/v1/instances/${instanceId}/actions/${action}`, {});
  }

  sites(): Promise<{ sites: Site[] }> {
    return this.request("GET", "/v1/sites");
  }

  failover(siteId: string): Promise<DrEvent> {
    return this.request("POST", `/v1/sites/${siteId}/failover`, {});
  }

  drEvents(): Promise<{ events: DrEvent[] }> {
    return this.request("GET", "/v1/dr-events");
  }

  users(): Promise<{ users: UserRow[] }> {
    return this.request("GET", "/v1/users");
  }

  utilization(start = 0, end?: number): Promise<UtilizationReport> {
    const params = new URLSearchParams({ start: String(start) });
    if (end !== undefined) params.set("end", String(end));
    return this.request("GET", `/v1/reports/utilization?${params.toString()}`);
  }
}
