// String-rendering views. Each function returns an HTML fragment built from
// API data; main.ts mounts them into the page. Keeping views as pure
// functions of their inputs lets the test suite check fidelity without a
// browser DOM.

import { escapeHtml, formatSpec, formatTimestamp, verbatim } from "./format.js";
import { canControlInstance, canProvision, canTriggerFailover } from "./permissions.js";
import type { SessionView } from "./session.js";
import type {
  DrEvent,
  Farm,
  Instance,
  Site,
  Template,
  UtilizationReport,
} from "./types.js";

export function renderError(code: string, message: string): string {
  const cls = code === "quota_exceeded" ? "banner banner-quota" : "banner banner-error";
  return `<div class="${cls}" role="alert">` +
    `<strong>${escapeHtml(code)}</strong>: ${escapeHtml(message)}</div>`;
}

export function renderTemplateCatalog(templates: Template[]): string {
  if (templates.length === 0) {
    return `<p class="empty">No templates registered.</p>`;
  }
  const rows = templates
    .map(
      (t) =>
        `<tr data-template-id="${escapeHtml(t.id)}">` +
        `<td>${escapeHtml(t.name)}</td>` +
        `<td>${escapeHtml(t.os_label)}</td>` +
        `<td>${escapeHtml(t.default_workload_class)}</td>` +
        `<td>${escapeHtml(formatSpec(t.default_spec))}</td>` +
        `<td>${escapeHtml(t.software_stack.join(", "))}</td>` +
        `</tr>`,
    )
    .join("");
  return (
    `<table class="catalog"><thead><tr>` +
    `<th>Name</th><th>OS</th><th>Class</th><th>Default spec</th><th>Stack</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderProvisionForm(
  session: SessionView,
  farms: Farm[],
  templates: Template[],
  now: number,
): string {
  const allowedFarms = farms.filter((f) => canProvision(session, f.project_id, now));
  if (allowedFarms.length === 0) {
    return `<p class="empty">No farms available for provisioning.</p>`;
  }
  const farmOptions = allowedFarms
    .map((f) => `<option value="${escapeHtml(f.id)}">${escapeHtml(f.name)}</option>`)
    .join("");
  const templateOptions = templates
    .map((t) => `<option value="${escapeHtml(t.id)}">${escapeHtml(t.name)}</option>`)
    .join("");
  return (
    `<form id="provision-form">` +
    `<label>Farm <select name="farm_id">${farmOptions}</select></label>` +
    `<label>Template <select name="template_id">${templateOptions}</select></label>` +
    `<label>Count <input name="count" type="number" min="1" value="1"></label>` +
    `<label>vCPU override <input name="vcpu" type="number" min="1" placeholder="template default"></label>` +
    `<label>Memory override (GiB) <input name="memory_gib" type="number" min="1" placeholder="template default"></label>` +
    `<button type="submit">Provision</button>` +
    `</form><div id="provision-status"></div>`
  );
}

export function renderInstanceTable(
  session: SessionView,
  instances: Instance[],
  farmProjects: Record<string, string>,
  now: number,
): string {
  if (instances.length === 0) {
    return `<p class="empty">No instances.</p>`;
  }
  const rows = instances
    .map((inst) => {
      const projectId = farmProjects[inst.farm_id] ?? "";
      const controllable = canControlInstance(session, inst, projectId, now);
      const buttons = controllable
        ? ["start", "stop", "destroy"]
            .map(
              (action) =>
                `<button data-action="${action}" data-instance-id="${escapeHtml(inst.id)}">${action}</button>`,
            )
            .join("")
        : "";
      return (
        `<tr data-instance-id="${escapeHtml(inst.id)}">` +
        `<td>${escapeHtml(inst.id)}</td>` +
        `<td class="state state-${escapeHtml(inst.state)}">${escapeHtml(inst.state)}</td>` +
        `<td>${escapeHtml(inst.host_id ?? "-")}</td>` +
        `<td>${escapeHtml(formatSpec(inst.spec))}</td>` +
        `<td>${escapeHtml(inst.owner_user_id ?? "-")}</td>` +
        `<td class="controls">${buttons}</td>` +
        `</tr>`
      );
    })
    .join("");
  return (
    `<table class="instances"><thead><tr>` +
    `<th>Instance</th><th>State</th><th>Host</th><th>Spec</th><th>Owner</th><th>Actions</th>` +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderUtilizationDashboard(report: UtilizationReport): string {
  const classRows = Object.entries(report.per_class)
    .map(
      ([cls, stats]) =>
        `<tr><td>${escapeHtml(cls)}</td>` +
        `<td>${verbatim(stats.mean_pct)}</td>` +
        `<td>${verbatim(stats.p95_pct)}</td>` +
        `<td>${verbatim(stats.sample_count)}</td></tr>`,
    )
    .join("");
  const instanceRows = report.per_instance
    .map(
      (row) =>
        `<tr><td>${escapeHtml(row.instance_id)}</td>` +
        `<td>${escapeHtml(row.workload_class)}</td>` +
        `<td>${verbatim(row.mean_pct)}</td>` +
        `<td>${verbatim(row.p95_pct)}</td>` +
        `<td>${verbatim(row.samples)}</td></tr>`,
    )
    .join("");
  return (
    `<section class="dashboard">` +
    `<p class="window">Window: ${verbatim(report.window.start)} – ${verbatim(report.window.end)}</p>` +
    `<h3>Per class</h3>` +
    `<table class="per-class"><thead><tr>` +
    `<th>Class</th><th>Mean %</th><th>P95 %</th><th>Samples</th>` +
    `</tr></thead><tbody>${classRows}</tbody></table>` +
    `<h3>Per instance</h3>` +
    `<table class="per-instance"><thead><tr>` +
    `<th>Instance</th><th>Class</th><th>Mean %</th><th>P95 %</th><th>Samples</th>` +
    `</tr></thead><tbody>${instanceRows}</tbody></table>` +
    `<button id="download-csv">Download CSV</button>` +
    `</section>`
  );
}

// The CSV offered for download is the report's csv field byte-for-byte.
export function csvDownloadPayload(report: UtilizationReport): string {
  return report.csv;
}

export function renderDrPanel(
  session: SessionView,
  sites: Site[],
  events: DrEvent[],
  now: number,
): string {
  const failoverAllowed = canTriggerFailover(session, now);
  const siteRows = sites
    .map((site) => {
      const badge = site.alive
        ? `<span class="badge badge-up">up</span>`
        : `<span class="badge badge-down">down</span>`;
      const button =
        failoverAllowed && site.role === "secondary"
          ? `<button data-failover-site="${escapeHtml(site.id)}">Fail over</button>`
          : "";
      return (
        `<tr data-site-id="${escapeHtml(site.id)}">` +
        `<td>${escapeHtml(site.name)}</td>` +
        `<td>${escapeHtml(site.role)}</td>` +
        `<td>${badge}</td>` +
        `<td>${escapeHtml(site.replication_mode)}</td>` +
        `<td>${button}</td>` +
        `</tr>`
      );
    })
    .join("");
  const eventItems = events
    .map(
      (ev) =>
        `<li>` +
        `<code>${escapeHtml(ev.farm_id)}</code> ${escapeHtml(ev.trigger)} failover ` +
        `at ${escapeHtml(formatTimestamp(ev.activated_at))} → ${escapeHtml(ev.active_site)}; ` +
        `relocated ${ev.relocated.length}, volumes lost ${ev.volumes_lost.length}` +
        `</li>`,
    )
    .join("");
  return (
    `<section class="dr-panel">` +
    `<table class="sites"><thead><tr>` +
    `<th>Site</th><th>Role</th><th>Status</th><th>Replication</th><th></th>` +
    `</tr></thead><tbody>${siteRows}</tbody></table>` +
    `<h3>Failover events</h3>` +
    (events.length === 0 ? `<p class="empty">No failover events.</p>` : `<ul class="dr-events">${eventItems}</ul>`) +
    `</section>`
  );
}
