// Display formatting only. Report numbers are passed through exactly as the
// API returned them — the console never recomputes or rounds metrics.

export function escapeHtml(value: string): string {
  return value
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

// Renders an API-provided number verbatim: no rounding, no padding.
export function verbatim(value: number): string {
  return String(value);
}

export function formatSpec(spec: {
  vcpu: number;
  memory_gib: number;
  disk_gib: number;
  network_count: number;
}): string {
  return `${spec.vcpu} vCPU / ${spec.memory_gib} GiB RAM / ${spec.disk_gib} GiB disk / ${spec.network_count} NIC`;
}

export function formatTimestamp(epochSeconds: number): string {
  return new Date(epochSeconds * 1000).toISOString();
}
