// Shapes of the control API's JSON responses. Field names match the wire
// format exactly; the console never reshapes domain data.

export interface LoginResponse {
  token: string;
  user_id: string;
  surfaces: string[];
  issued_at: number;
  expires_at: number;
}

export interface ResourceSpec {
  vcpu: number;
  memory_gib: number;
  disk_gib: number;
  network_count: number;
}

export interface Template {
  id: string;
  name: string;
  owner_user_id: string;
  project_id: string;
  origin: string;
  os_label: string;
  software_stack: string[];
  default_spec: ResourceSpec;
  default_workload_class: string;
}

export interface Instance {
  id: string;
  template_id: string;
  farm_id: string;
  spec: ResourceSpec;
  workload_class: string;
  created_at: number;
  owner_user_id: string | null;
  host_id: string | null;
  state: string;
  remote_access: Record<string, string>;
  backup_enabled: boolean;
}

export interface FarmQuota {
  max_hosts: number;
  max_instances: number;
  object_quota_gib: number;
  block_quota_gib: number;
}

export interface Farm {
  id: string;
  name: string;
  project_id: string;
  site_id: string;
  pool_id: string;
  quota: FarmQuota;
  secondary_site_id: string | null;
  secondary_pool_id: string | null;
  replication_lag: number;
  degraded: boolean;
}

export interface FarmDetail {
  farm: Farm;
  instance_count: number;
  storage_ledger: Record<string, number>;
}

export interface Site {
  id: string;
  name: string;
  role: string;
  status: string;
  replication_mode: string;
  peer_site: string | null;
  alive: boolean;
}

export interface DrEvent {
  farm_id: string;
  trigger: string;
  activated_at: number;
  active_site: string;
  relocated: string[];
  capacity_exhausted: string[];
  volumes_promoted: string[];
  volumes_lost: string[];
}

export interface PerInstanceRow {
  instance_id: string;
  workload_class: string;
  mean_pct: number;
  p95_pct: number;
  samples: number;
}

export interface ClassStats {
  mean_pct: number;
  p95_pct: number;
  sample_count: number;
}

export interface UtilizationReport {
  window: { start: number; end: number };
  per_class: Record<string, ClassStats>;
  per_instance: PerInstanceRow[];
  csv: string;
}

export interface UserRow {
  id: string;
  username: string;
  role: string;
  project_ids: string[];
}

export interface ApiErrorBody {
  error: string;
  message: string;
  details?: Record<string, unknown>;
}
