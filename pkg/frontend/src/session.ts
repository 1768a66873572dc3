import type { LoginResponse, UserRow } from "./types.js";

export interface SessionView {
  token: string;
  userId: string;
  username: string;
  role: "admin" | "user";
  surfaces: string[];
  expiresAt: number;
  projectIds: string[];
}

export function buildSession(login: LoginResponse, user: UserRow): SessionView {
  return {
    token: login.token,
    userId: login.user_id,
    username: user.username,
    role: user.role === "admin" ? "admin" : "user",
    surfaces: login.surfaces,
    expiresAt: login.expires_at,
    projectIds: user.project_ids,
  };
}

// Expiry is enforced server-side too; the client check only avoids firing
// requests that are guaranteed to 401. The boundary matches the server:
// a token is dead at exactly now >= expires_at.
export function isExpired(session: SessionView, now: number): boolean {
  return now >= session.expiresAt;
}

const STORAGE_KEY = "minicloud-session";

export function saveSession(storage: Storage, session: SessionView): void {
  storage.setItem(STORAGE_KEY, JSON.stringify(session));
}

export function loadSession(storage: Storage): SessionView | null {
  const raw = storage.getItem(STORAGE_KEY);
  if (!raw) return null;
  try {
    return JSON.parse(raw) as SessionView;
  } catch {
    return null;
  }
}

export function clearSession(storage: Storage): void {
  storage.removeItem(STORAGE_KEY);
}
