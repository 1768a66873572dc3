// UI action gating. The rule set mirrors the server's access decisions so
// that actions hidden for the user role are exactly those the API would
// reject with 403 — never more, never less. The server remains the
// authority; this only controls what is rendered.

import type { SessionView } from "./session.js";
import { isExpired } from "./session.js";
import type { Instance } from "./types.js";

function live(session: SessionView, surface: string, now: number): boolean {
  return !isExpired(session, now) && session.surfaces.includes(surface);
}

// Admin-only operations (failover drills, fault injection, clock control,
// inventory management).
export function canRunAdminActions(session: SessionView, now: number): boolean {
  return session.role === "admin" && live(session, "framework", now);
}

export function canViewDashboards(session: SessionView, now: number): boolean {
  return live(session, "framework", now);
}

// Provisioning creates resources owned by the actor inside the farm's
// project; users need membership, admins always pass.
export function canProvision(
  session: SessionView,
  farmProjectId: string,
  now: number,
): boolean {
  if (!live(session, "framework", now)) return false;
  if (session.role === "admin") return true;
  return session.projectIds.includes(farmProjectId);
}

// Lifecycle buttons on an instance row: users only on their own instances
// in their own projects.
export function canControlInstance(
  session: SessionView,
  instance: Instance,
  farmProjectId: string,
  now: number,
): boolean {
  if (!live(session, "framework", now)) return false;
  if (session.role === "admin") return true;
  return (
    session.projectIds.includes(farmProjectId) &&
    instance.owner_user_id === session.userId
  );
}

export function canCreateTemplate(
  session: SessionView,
  projectId: string,
  now: number,
): boolean {
  if (!live(session, "image", now)) return false;
  if (session.role === "admin") return true;
  return session.projectIds.includes(projectId);
}

export function canTriggerFailover(session: SessionView, now: number): boolean {
  return canRunAdminActions(session, now);
}
