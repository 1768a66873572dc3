// Entry point: wires the API client, session storage, and views together.
// Everything the console knows comes from the HTTP API.

import { ApiClient, ApiError } from "./api.js";
import { startPolling, type Poller } from "./poll.js";
import {
  buildSession,
  clearSession,
  isExpired,
  loadSession,
  saveSession,
  type SessionView,
} from "./session.js";
import type { Farm, UtilizationReport } from "./types.js";
import {
  csvDownloadPayload,
  renderDrPanel,
  renderError,
  renderInstanceTable,
  renderProvisionForm,
  renderTemplateCatalog,
  renderUtilizationDashboard,
} from "./views.js";

const nowSeconds = (): number => Date.now() / 1000;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

function showError(target: HTMLElement, err: unknown): void {
  if (err instanceof ApiError) {
    target.innerHTML = renderError(err.code, err.message);
  } else {
    target.innerHTML = renderError("network_error", String(err));
  }
}

async function login(api: ApiClient, username: string, credential: string): Promise<SessionView> {
  const response = await api.login(username, credential);
  api.setToken(response.token);
  const { users } = await api.users();
  const me = users.find((u) => u.id === response.user_id);
  if (!me) throw new Error("authenticated user missing from user list");
  return buildSession(response, me);
}

function farmProjectMap(farms: Farm[]): Record<string, string> {
  const map: Record<string, string> = {};
  for (const farm of farms) map[farm.id] = farm.project_id;
  return map;
}

async function refreshInstances(
  api: ApiClient,
  session: SessionView,
): Promise<void> {
  const [{ instances }, { farms }] = await Promise.all([api.instances(), api.farms()]);
  el("instances").innerHTML = renderInstanceTable(
    session,
    instances,
    farmProjectMap(farms),
    nowSeconds(),
  );
}

function wireDashboard(api: ApiClient): Poller {
  let latest: UtilizationReport | null = null;
  el("dashboard").addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.id === "download-csv" && latest) {
      const blob = new Blob([csvDownloadPayload(latest)], { type: "text/csv" });
      const link = document.createElement("a");
      link.href = URL.createObjectURL(blob);
      link.download = "utilization.csv";
      link.click();
      URL.revokeObjectURL(link.href);
    }
  });
  return startPolling(async () => {
    latest = await api.utilization(0);
    el("dashboard").innerHTML = renderUtilizationDashboard(latest);
    return true;
  });
}

async function mountConsole(api: ApiClient, session: SessionView): Promise<void> {
  el("login-panel").hidden = true;
  el("console-panel").hidden = false;
  el("whoami").textContent = `${session.username} (${session.role})`;

  const [{ templates }, { farms }] = await Promise.all([api.templates(), api.farms()]);
  el("catalog").innerHTML = renderTemplateCatalog(templates);
  el("provision").innerHTML = renderProvisionForm(session, farms, templates, nowSeconds());
  await refreshInstances(api, session);

  const drTick = async (): Promise<boolean> => {
    const [{ sites }, { events }] = await Promise.all([api.sites(), api.drEvents()]);
    el("dr-panel").innerHTML = renderDrPanel(session, sites, events, nowSeconds());
    return true;
  };
  startPolling(drTick);
  wireDashboard(api);

  el("provision").addEventListener("submit", (ev) => {
    ev.preventDefault();
    const form = ev.target as HTMLFormElement;
    const data = new FormData(form);
    const overrides: { vcpu?: number; memory_gib?: number } = {};
    const vcpu = data.get("vcpu");
    const mem = data.get("memory_gib");
    if (vcpu) overrides.vcpu = Number(vcpu);
    if (mem) overrides.memory_gib = Number(mem);
    void (async () => {
      const status = el("provision-status");
      try {
        const result = await api.provision(
          String(data.get("farm_id")),
          String(data.get("template_id")),
          Number(data.get("count")),
          overrides,
        );
        status.textContent = `Requested ${result.instances.length} instance(s); waiting for placement…`;
        const ids = new Set(result.instances.map((i) => i.id));
        const poller = startPolling(async () => {
          const { instances } = await api.instances();
          const mine = instances.filter((i) => ids.has(i.id));
          const running = mine.filter((i) => i.state === "running").length;
          status.textContent = `${running}/${ids.size} running`;
          await refreshInstances(api, session);
          return running < ids.size;
        });
        void poller;
      } catch (err) {
        showError(status, err);
      }
    })();
  });

  el("instances").addEventListener("click", (ev) => {
    const target = ev.target as HTMLElement;
    const action = target.dataset.action as "start" | "stop" | "destroy" | undefined;
    const instanceId = target.dataset.instanceId;
    if (!action || !instanceId) return;
    void (async () => {
      try {
        await api.instanceAction(instanceId, action);
        await refreshInstances(api, session);
      } catch (err) {
        showError(el("instance-errors"), err);
      }
    })();
  });

  el("dr-panel").addEventListener("click", (ev) => {
    const siteId = (ev.target as HTMLElement).dataset.failoverSite;
    if (!siteId) return;
    void (async () => {
      try {
        await api.failover(siteId);
        await drTick();
      } catch (err) {
        showError(el("dr-errors"), err);
      }
    })();
  });
}

export function boot(): void {
  const api = new ApiClient(window.location.origin.replace(/:\d+$/, ":8070"));
  const stored = loadSession(window.localStorage);
  if (stored && !isExpired(stored, nowSeconds())) {
    api.setToken(stored.token);
    void mountConsole(api, stored);
  }

  el("login-form").addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(ev.target as HTMLFormElement);
    void (async () => {
      try {
        const session = await login(
          api,
          String(data.get("username")),
          String(data.get("credential")),
        );
        saveSession(window.localStorage, session);
        await mountConsole(api, session);
      } catch (err) {
        showError(el("login-errors"), err);
      }
    })();
  });

  el("logout").addEventListener("click", () => {
    clearSession(window.localStorage);
    window.location.reload();
  });
}

if (typeof document !== "undefined" && document.getElementById("login-form")) {
  boot();
}
