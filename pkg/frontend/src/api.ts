/**
 * Typed client for the /api/v1 control plane.
 *
 * The bearer token lives only in this object (never in cookies or browser
 * storage); every state-changing call carries it in the Authorization
 * header, which is the platform's CSRF control.
 */

export interface Session {
  token: string;
  username: string;
  role: "ADMIN" | "INSTRUCTOR" | "LEARNER";
  expires_at: number;
}

export interface Finding {
  severity: "ERROR" | "WARNING";
  code: string;
  message: string;
  location: string;
}

export interface CatalogItem {
  scenario_id: string;
  name: string;
  description: string;
  latest_version: number;
  visibility: "DRAFT" | "PUBLISHED";
}

export interface VerificationCheck {
  kind: "ICMP_REACHABILITY" | "ARP_RESOLUTION" | "THROUGHPUT_PROBE";
  subject: [string, string];
  pass: boolean;
  detail: string;
}

export interface VerificationReport {
  overall: boolean;
  checks: VerificationCheck[];
}

export type InstanceState =
  | "PENDING"
  | "DEPLOYING"
  | "VERIFYING"
  | "RUNNING"
  | "TEARING_DOWN"
  | "TERMINATED"
  | "FAILED";

export interface InstanceCard {
  instance_id: string;
  scenario_id: string;
  version: number;
  owner: string;
  state: InstanceState;
  verification: VerificationReport | null;
  created_at: number;
  expires_at: number;
}

export interface BlueprintParams {
  sta_count: number;
  ssid: string;
  passphrase?: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
    public findings: Finding[] = [],
  ) {
    super(message);
  }
}

/** Structural subset of Response the client needs; keeps test doubles trivial. */
export interface FetchResponse {
  ok: boolean;
  status: number;
  text(): Promise<string>;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<FetchResponse>;

export class RangeApi {
  private token: string | null = null;

  constructor(
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
    private base: string = "",
  ) {}

  setToken(token: string | null): void {
    this.token = token;
  }

  hasToken(): boolean {
    return this.token !== null;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (this.token !== null) headers["Authorization"] = `Bearer ${this.token}`;
    const response = await this.fetchFn(this.base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await response.text();
    let parsed: unknown = null;
    try {
      parsed = text ? JSON.parse(text) : null;
    } catch {
      parsed = null;
    }
    if (!response.ok) {
      const err = (parsed ?? {}) as { code?: string; message?: string; findings?: Finding[] };
      throw new ApiError(
        response.status,
        err.code ?? "HTTP_ERROR",
        err.message ?? `request failed with ${response.status}`,
        err.findings ?? [],
      );
    }
    return parsed as T;
  }

  async login(username: string, password: string): Promise<Session> {
    const session = await this.request<Session>("POST", "/api/v1/login", { username, password });
    this.token = session.token;
    return session;
  }

  listScenarios(): Promise<{ scenarios: CatalogItem[] }> {
    return this.request("GET", "/api/v1/scenarios");
  }

  createBlueprintScenario(
    blueprintId: string,
    params: BlueprintParams,
  ): Promise<{ scenario_id: string; version: number }> {
    return this.request("POST", "/api/v1/scenarios", {
      blueprint_id: blueprintId,
      params,
    });
  }

  publishScenario(scenarioId: string): Promise<{ scenario_id: string; visibility: string }> {
    return this.request("POST", `/api/v1/scenarios/${encodeURIComponent(scenarioId)}/publish`);
  }

  launchScenario(scenarioId: string): Promise<{ instance_id: string }> {
    return this.request("POST", `/api/v1/scenarios/${encodeURIComponent(scenarioId)}/launch`);
  }

  listInstances(): Promise<{ instances: InstanceCard[] }> {
    return this.request("GET", "/api/v1/instances");
  }

  instanceStatus(instanceId: string): Promise<InstanceCard> {
    return this.request("GET", `/api/v1/instances/${encodeURIComponent(instanceId)}`);
  }

  terminateInstance(instanceId: string): Promise<{ instance_id: string; state: InstanceState }> {
    return this.request("POST", `/api/v1/instances/${encodeURIComponent(instanceId)}/terminate`);
  }
}
