import type { SessionView } from "../src/session.js";
import type { Instance } from "../src/types.js";

export const NOW = 1_000_000;

export function makeSession(overrides: Partial<SessionView> = {}): SessionView {
  return {
    token: "t".repeat(64),
    userId: "u1",
    username: "alice",
    role: "admin",
    surfaces: ["framework", "image", "storage", "network_remote"],
    expiresAt: NOW + 3600,
    projectIds: ["proj-a"],
    ...overrides,
  };
}

export function makeInstance(overrides: Partial<Instance> = {}): Instance {
  return {
    id: "i1",
    template_id: "tpl1",
    farm_id: "farm1",
    spec: { vcpu: 2, memory_gib: 4, disk_gib: 20, network_count: 1 },
    workload_class: "development",
    created_at: NOW - 100,
    owner_user_id: "u1",
    host_id: "h1",
    state: "running",
    remote_access: {},
    backup_enabled: false,
    ...overrides,
  };
}

export function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
