"""Serialized control plane: the single state owner that validates,
authorizes, applies, and journals every mutating command, runs the
reconciliation step between commands, and persists snapshots."""

from __future__ import annotations

import hashlib
import json
import random
import struct
from pathlib import Path

from . import errors
from .config import Config
from .core import (
    HOSTED_STATES,
    IdGenerator,
    Instance,
    LifecycleState,
    ResourceSpec,
    SimClock,
    WorkloadClass,
    transition,
)
from .errors import (
    CapacityExhausted,
    CorruptSnapshot,
    Forbidden,
    MalformedCommand,
    MiniCloudError,
    NotFound,
    StandbyNotReady,
    Unauthorized,
)
from .farm import Farm, FarmManager, FarmQuota, Site, SiteRole, SiteStatus
from .metering import MeterSample, MeteringService, synthetic_load
from .network import FirewallRule, LbRule, NetworkManager, NetworkPool, evaluate_firewall
from .pool import Host, HostRole, Liveness, PoolManager, ServerPool
from .rbac import AuthService, Role
from .scheduler import HostView, PlacementRequest, place, plan_drain
from .storage import ObjectStoreCluster, StorageManager, StorageNode
from .templates import Template, TemplateStore

# command name -> (surface, action)
COMMAND_SURFACES = {
    "create_user": ("framework", "admin"),
    "create_site": ("framework", "admin"),
    "create_pool": ("framework", "admin"),
    "add_host": ("framework", "admin"),
    "create_farm": ("framework", "admin"),
    "add_storage_node": ("storage", "admin"),
    "inject_fault": ("framework", "admin"),
    "drain_host": ("framework", "admin"),
    "advance_time": ("framework", "admin"),
    "generate_load": ("framework", "admin"),
    "create_template": ("image", "modify"),
    "provision": ("framework", "modify"),
    "instance_action": ("framework", "modify"),
    "migrate_instance": ("framework", "admin"),
    "assign_remote_access": ("network_remote", "modify"),
    "create_network_pool": ("network_remote", "admin"),
    "add_firewall_rule": ("network_remote", "modify"),
    "add_lb_rule": ("network_remote", "modify"),
    "create_volume": ("storage", "modify"),
    "block_write": ("storage", "modify"),
    "object_put": ("storage", "modify"),
    "object_delete": ("storage", "modify"),
    "ingest_sample": ("framework", "modify"),
    "failover": ("framework", "admin"),
}

SNAPSHOT_MAGIC = "minicloud-snapshot-v1"


def canonical_json(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def digest_of(value) -> str:
    return hashlib.sha256(canonical_json(value).encode()).hexdigest()


class ControlPlane:
    """Owns every registry; all mutations funnel through submit()."""

    def __init__(self, config: Config | None = None, journal_path: str | None = None):
        self.config = config or Config()
        self.journal_path = journal_path
        self.journal: list[dict] = []
        self.mutation_sequence = 0
        self._replaying = False
        self._build_fresh()

    def _build_fresh(self) -> None:
        cfg = self.config
        self.clock = SimClock()
        self.ids = IdGenerator(seed=cfg.seed)
        self.load_rng = random.Random(cfg.seed + 1)
        self.pools = PoolManager(default_overcommit=cfg.vcpu_overcommit_ratio)
        self.templates = TemplateStore()
        self.network = NetworkManager()
        self.storage = StorageManager(ObjectStoreCluster(
            replication_factor=cfg.replication_factor,
            write_quorum=cfg.write_quorum,
            read_quorum=cfg.read_quorum,
            vnodes=cfg.vnodes_per_node,
        ))
        self.auth = AuthService(token_ttl_s=cfg.token_ttl_s)
        self.farms = FarmManager()
        self.metering = MeteringService(
            retention=cfg.meter_retention,
            min_samples=cfg.meter_min_samples,
            dev_threshold=cfg.dev_vcpu_threshold,
        )
        self.instances: dict[str, Instance] = {}
        self.dr_events: list[dict] = []
        # bootstrap admin so the first commands can be authorized
        self.auth.add_user(self.ids.new_id(), "admin", "admin", Role.ADMIN)

    # ------------------------------------------------------------------
    # Authentication entry point (journaled like any mutation)
    # ------------------------------------------------------------------

    def login(self, username: str, credential: str, surfaces: list[str]) -> dict:
        token_value = hashlib.sha256(
            f"token:{self.config.seed}:{self.ids.new_id()}".encode()
        ).hexdigest()
        token = self.auth.authenticate(
            username, credential, surfaces, self.clock.now(), token_value
        )
        self._journal_append(
            {"name": "login", "payload": {"username": username, "credential": credential,
                                          "surfaces": list(surfaces)}, "token": None},
            {"token": token.token},
        )
        return token.to_dict()

    # ------------------------------------------------------------------
    # Command submission
    # ------------------------------------------------------------------

    def submit(self, name: str, payload: dict, token_value: str | None) -> dict:
        if name not in COMMAND_SURFACES:
            raise MalformedCommand(f"unknown command {name!r}")
        surface, action = COMMAND_SURFACES[name]
        token = self._authorize(name, surface, action, payload, token_value)
        handler = getattr(self, f"_cmd_{name}")
        backup = None if self._replaying else self.state_dict()
        try:
            result = handler(payload, token)
        except MiniCloudError:
            if backup is not None:
                self.load_state(backup)
            raise
        except (KeyError, TypeError, ValueError) as exc:
            if backup is not None:
                self.load_state(backup)
            raise MalformedCommand(str(exc))
        self._journal_append(
            {"name": name, "payload": payload, "token": token_value}, result
        )
        self._reconcile()
        return result

    def query(self, name: str, payload: dict, token_value: str | None) -> dict:
        token = self._resolve_token(token_value)
        decision = self.auth.check_access(
            token, "framework", "view", self.clock.now()
        )
        if decision != "allow":
            raise Forbidden("view denied")
        handler = getattr(self, f"_query_{name}", None)
        if handler is None:
            raise MalformedCommand(f"unknown query {name!r}")
        return handler(payload)

    def _resolve_token(self, token_value: str | None):
        if token_value is None:
            raise Unauthorized("missing token")
        token = self.auth.resolve(token_value)
        if token is None:
            raise Unauthorized("unknown token")
        return token

    def _authorize(self, name: str, surface: str, action: str, payload: dict,
                   token_value: str | None):
        token = self._resolve_token(token_value)
        now = self.clock.now()
        if action == "admin":
            user = self.auth.users.get(token.user_id)
            if (
                self.auth.check_access(token, surface, "modify", now) != "allow"
                or user is None
                or user.role != Role.ADMIN
            ):
                raise Forbidden(f"{name} requires admin")
            return token
        project, owner = self._resource_scope(name, payload, token)
        decision = self.auth.check_access(
            token, surface, action, now,
            resource_project=project, resource_owner_user=owner,
        )
        if decision != "allow":
            raise Forbidden(f"{name} denied")
        return token

    def _resource_scope(self, name: str, payload: dict, token) -> tuple[str | None, str | None]:
        """Project and owning user of the resource a command touches.

        Creation commands target the actor's own new resource inside the
        named project; mutation commands resolve the existing owner."""
        if name in ("instance_action", "assign_remote_access", "ingest_sample"):
            inst = self.instances.get(payload.get("instance_id", ""))
            if inst is None:
                return (None, None)
            farm = self.farms.farms.get(inst.farm_id)
            return (farm.project_id if farm else None, inst.owner_user_id)
        if name in ("create_volume",):
            inst = self.instances.get(payload.get("instance_id", ""))
            if inst is None:
                return (None, None)
            farm = self.farms.farms.get(inst.farm_id)
            return (farm.project_id if farm else None, inst.owner_user_id)
        if name in ("block_write",):
            volume = self.storage.volumes.get(payload.get("volume_id", ""))
            if volume is None:
                return (None, None)
            farm = self.farms.farms.get(volume.farm_id)
            inst = self.instances.get(volume.attached_instance or "")
            return (farm.project_id if farm else None,
                    inst.owner_user_id if inst else token.user_id)
        if name in ("object_put", "object_delete"):
            farm_id = payload.get("farm_id")
            if name == "object_delete":
                obj = self.storage.cluster.objects.get(payload.get("key", ""))
                farm_id = obj.farm_id if obj else None
            farm = self.farms.farms.get(farm_id or "")
            return (farm.project_id if farm else None, token.user_id)
        if name in ("provision", "add_firewall_rule", "add_lb_rule"):
            farm = self.farms.farms.get(payload.get("farm_id", ""))
            return (farm.project_id if farm else None, token.user_id)
        if name == "create_template":
            return (payload.get("project_id"), token.user_id)
        return (None, None)

    # ------------------------------------------------------------------
    # Journal and snapshots
    # ------------------------------------------------------------------

    def _journal_append(self, command: dict, result) -> None:
        if self._replaying:
            self.mutation_sequence += 1
            return
        self.mutation_sequence += 1
        entry = {
            "sequence": self.mutation_sequence,
            "command": command,
            "result_digest": digest_of(result),
        }
        self.journal.append(entry)
        if self.journal_path:
            with open(self.journal_path, "ab") as fh:
                record = canonical_json(entry).encode()
                fh.write(struct.pack(">I", len(record)))
                fh.write(record)

    @staticmethod
    def read_journal(path: str) -> tuple[list[dict], int]:
        """Length-prefixed JSON records; returns (entries, dropped_bytes)
        where dropped_bytes counts a truncated trailing record."""
        data = Path(path).read_bytes()
        entries = []
        offset = 0
        while offset + 4 <= len(data):
            (length,) = struct.unpack(">I", data[offset:offset + 4])
            if offset + 4 + length > len(data):
                break
            try:
                entries.append(json.loads(data[offset + 4:offset + 4 + length]))
            except json.JSONDecodeError:
                break
            offset += 4 + length
        return entries, len(data) - offset

    def state_dict(self) -> dict:
        return {
            "clock": self.clock.state_dict(),
            "ids": self.ids.state_dict(),
            "load_rng": _rng_state_to_json(self.load_rng.getstate()),
            "pools": self.pools.state_dict(),
            "templates": self.templates.state_dict(),
            "network": self.network.state_dict(),
            "storage": self.storage.state_dict(),
            "auth": self.auth.state_dict(),
            "farms": self.farms.state_dict(),
            "metering": self.metering.state_dict(),
            "instances": {k: v.to_dict() for k, v in sorted(self.instances.items())},
            "dr_events": [dict(e) for e in self.dr_events],
        }

    def load_state(self, state: dict) -> None:
        self.clock.load_state(state["clock"])
        self.ids.load_state(state["ids"])
        self.load_rng.setstate(_rng_state_from_json(state["load_rng"]))
        self.pools.load_state(state["pools"])
        self.templates.load_state(state["templates"])
        self.network.load_state(state["network"])
        self.storage.load_state(state["storage"])
        self.auth.load_state(state["auth"])
        self.farms.load_state(state["farms"])
        self.metering.load_state(state["metering"])
        self.instances = {
            k: Instance.from_dict(v) for k, v in state["instances"].items()
        }
        self.dr_events = [dict(e) for e in state.get("dr_events", [])]

    def state_digest(self) -> str:
        return digest_of(self.state_dict())

    def snapshot(self, path: str) -> str:
        state = self.state_dict()
        body = {
            "magic": SNAPSHOT_MAGIC,
            "sequence": self.mutation_sequence,
            "state": state,
            "digest": digest_of(state),
        }
        Path(path).write_text(canonical_json(body))
        return body["digest"]

    def restore(self, path: str) -> int:
        try:
            body = json.loads(Path(path).read_text())
        except (json.JSONDecodeError, OSError) as exc:
            raise CorruptSnapshot(str(exc))
        if body.get("magic") != SNAPSHOT_MAGIC:
            raise CorruptSnapshot("bad snapshot header")
        if digest_of(body["state"]) != body["digest"]:
            raise CorruptSnapshot("snapshot digest mismatch")
        self.load_state(body["state"])
        self.mutation_sequence = body["sequence"]
        return self.mutation_sequence

    def replay(self, entries: list[dict]) -> None:
        """Re-execute journaled commands (those after the current
        sequence) against the current state."""
        self._replaying = True
        try:
            for entry in entries:
                if entry["sequence"] <= self.mutation_sequence:
                    continue
                cmd = entry["command"]
                if cmd["name"] == "login":
                    p = cmd["payload"]
                    self.login(p["username"], p["credential"], p["surfaces"])
                else:
                    self.submit(cmd["name"], cmd["payload"], cmd["token"])
        finally:
            self._replaying = False

    # ------------------------------------------------------------------
    # Reconciliation
    # ------------------------------------------------------------------

    def _reconcile(self) -> None:
        now = self.clock.now()
        cfg = self.config
        self.pools.record_heartbeats(now)
        self.farms.record_site_heartbeats(now)
        for pool_id in list(self.pools.pools):
            self.pools.heartbeat_sweep(
                pool_id, now, cfg.heartbeat_miss_limit, cfg.heartbeat_interval_s
            )
        self._fail_instances_on_down_hosts()
        newly_failed = self.farms.sweep_sites(
            now, cfg.heartbeat_miss_limit, cfg.heartbeat_interval_s
        )
        for site_id in newly_failed:
            for farm in list(self.farms.farms.values()):
                if farm.site_id == site_id and farm.secondary_site_id:
                    try:
                        self.dr_events.append(self._do_failover(farm, trigger="auto"))
                    except MiniCloudError:
                        pass
        self.storage.cluster.repair()
        for farm in self.farms.farms.values():
            if farm.secondary_site_id is None:
                continue
            secondary = self.farms.sites.get(farm.secondary_site_id)
            secondary_up = bool(secondary and secondary.alive)
            self.farms.replicate_tick(farm, self.mutation_sequence, secondary_up)
            if secondary_up:
                for volume in self.storage.volumes.values():
                    if volume.replicated and volume.pending and volume.farm_id == farm.id:
                        self.storage.drain_pending(volume.id)

    def _fail_instances_on_down_hosts(self) -> None:
        # Instances on a dead host of a site that still has DR pending are
        # handled by failover; plain host deaths fail the instance.
        for inst in list(self.instances.values()):
            if inst.state not in HOSTED_STATES or inst.host_id is None:
                continue
            host = self.pools.hosts.get(inst.host_id)
            if host is None or host.liveness == Liveness.DOWN:
                site = self.farms.sites.get(host.site_id) if host else None
                farm = self.farms.farms.get(inst.farm_id)
                site_level = site is not None and not site.alive
                if site_level and farm is not None and farm.secondary_site_id:
                    continue  # failover will re-place it
                self.pools.release_everywhere(inst.id)
                self.instances[inst.id] = transition(inst, "fail")

    # ------------------------------------------------------------------
    # Failover
    # ------------------------------------------------------------------

    def _do_failover(self, farm: Farm, trigger: str) -> dict:
        secondary_pool = farm.secondary_pool_id
        if secondary_pool is None or secondary_pool not in self.pools.pools:
            raise StandbyNotReady(f"farm {farm.id} has no standby pool")
        secondary_site = self.farms.get_site(farm.secondary_site_id)
        if not secondary_site.alive:
            raise StandbyNotReady(f"standby site {secondary_site.id} is down")
        self.farms.promote_secondary(farm)
        old_site, old_pool = farm.site_id, farm.pool_id
        farm.site_id, farm.pool_id = farm.secondary_site_id, secondary_pool
        farm.secondary_site_id, farm.secondary_pool_id = old_site, old_pool

        relocated, exhausted = [], []
        for inst in sorted(self.instances.values(), key=lambda i: i.id):
            if inst.farm_id != farm.id or inst.state not in HOSTED_STATES:
                continue
            self.pools.release_everywhere(inst.id)
            try:
                decision = place(
                    PlacementRequest(inst.id, inst.spec, farm.id, farm.pool_id),
                    self._pool_snapshot(farm.pool_id),
                )
            except CapacityExhausted:
                self.instances[inst.id] = transition(inst, "fail")
                exhausted.append(inst.id)
                continue
            self.pools.charge(decision.host_id, inst.id, inst.spec)
            inst.host_id = decision.host_id
            relocated.append(inst.id)

        lost, promoted = [], []
        for volume in self.storage.volumes.values():
            if volume.farm_id != farm.id:
                continue
            if volume.replicated:
                volume.journal = [list(e) for e in volume.secondary_journal]
                volume.pending = []
                volume.site_id, volume.secondary_site_id = (
                    farm.site_id, volume.site_id,
                )
                promoted.append(volume.id)
            elif volume.site_id == old_site:
                volume.lost = True
                lost.append(volume.id)
        return {
            "farm_id": farm.id,
            "trigger": trigger,
            "activated_at": self.clock.now(),
            "active_site": farm.site_id,
            "relocated": relocated,
            "capacity_exhausted": exhausted,
            "volumes_promoted": promoted,
            "volumes_lost": lost,
        }

    # ------------------------------------------------------------------
    # Scheduling helpers
    # ------------------------------------------------------------------

    def _pool_snapshot(self, pool_id: str) -> list[HostView]:
        views = []
        for host in self.pools.pool_hosts(pool_id):
            fv, fm, fd = self.pools.free(host.id)
            views.append(HostView(
                host_id=host.id,
                up=host.liveness == Liveness.UP,
                draining=host.liveness == Liveness.DRAINING,
                free_vcpu=fv,
                free_memory_gib=fm,
                free_disk_gib=fd,
            ))
        return views

    def _farm_instance_count(self, farm_id: str) -> int:
        return sum(
            1 for i in self.instances.values()
            if i.farm_id == farm_id and i.state != LifecycleState.DESTROYED
        )

    # ------------------------------------------------------------------
    # Command handlers
    # ------------------------------------------------------------------

    def _cmd_create_user(self, payload: dict, token) -> dict:
        user = self.auth.add_user(
            self.ids.new_id(),
            payload["username"],
            payload["credential"],
            Role(payload.get("role", "user")),
            set(payload.get("project_ids", [])),
        )
        return {"user_id": user.id}

    def _cmd_create_site(self, payload: dict, token) -> dict:
        role = SiteRole(payload.get("role", "primary"))
        site = Site(
            id=self.ids.new_id(),
            name=payload["name"],
            role=role,
            status=SiteStatus.ACTIVE if role == SiteRole.PRIMARY else SiteStatus.STANDBY,
            replication_mode=payload.get("replication_mode", "sync"),
            peer_site=payload.get("peer_site"),
            last_heartbeat=self.clock.now(),
        )
        self.farms.add_site(site)
        if site.peer_site and site.peer_site in self.farms.sites:
            self.farms.sites[site.peer_site].peer_site = site.id
        return {"site_id": site.id}

    def _cmd_create_pool(self, payload: dict, token) -> dict:
        pool = ServerPool(
            id=self.ids.new_id(),
            site_id=payload["site_id"],
            overcommit_ratio=float(payload.get("overcommit_ratio",
                                               self.config.vcpu_overcommit_ratio)),
        )
        self.pools.add_pool(pool)
        return {"pool_id": pool.id}

    def _cmd_add_host(self, payload: dict, token) -> dict:
        host = Host(
            id=self.ids.new_id(),
            site_id=payload["site_id"],
            pool_id=payload["pool_id"],
            vcpu_capacity=int(payload["vcpu_capacity"]),
            memory_capacity_gib=int(payload["memory_capacity_gib"]),
            disk_capacity_gib=int(payload["disk_capacity_gib"]),
            last_heartbeat=self.clock.now(),
        )
        self.pools.add_host(host)
        return {"host_id": host.id}

    def _cmd_create_farm(self, payload: dict, token) -> dict:
        quota = FarmQuota.from_dict(payload["quota"])
        pool = self.pools.get_pool(payload["pool_id"])
        if len(pool.host_ids) < 1:
            raise CapacityExhausted("pool has no hosts")
        if quota.max_hosts and len(pool.host_ids) > quota.max_hosts:
            raise CapacityExhausted(
                f"pool has {len(pool.host_ids)} hosts, farm allows {quota.max_hosts}"
            )
        farm = Farm(
            id=self.ids.new_id(),
            name=payload["name"],
            project_id=payload["project_id"],
            site_id=payload["site_id"],
            pool_id=payload["pool_id"],
            quota=quota,
            secondary_site_id=payload.get("secondary_site_id"),
            secondary_pool_id=payload.get("secondary_pool_id"),
            vlan_ids=self.farms.allocate_vlans(int(payload.get("vlan_count", 4))),
            standby_sequence=self.mutation_sequence,
        )
        self.farms.add_farm(farm)
        self.storage.set_farm_budget(farm.id, quota.block_quota_gib, quota.object_quota_gib)
        self.storage.create_share(farm.id, f"/farms/{farm.name}", int(quota.block_quota_gib))
        return {"farm_id": farm.id}

    def _cmd_add_storage_node(self, payload: dict, token) -> dict:
        node = StorageNode(
            id=self.ids.new_id(),
            capacity_gib=float(payload["capacity_gib"]),
        )
        self.storage.cluster.add_node(node)
        return {"node_id": node.id}

    def _cmd_inject_fault(self, payload: dict, token) -> dict:
        kind, target = payload["kind"], payload["target"]
        if kind in ("kill_host", "revive_host"):
            host = self.pools.get_host(target)
            host.alive = kind == "revive_host"
            if host.alive:
                host.last_heartbeat = self.clock.now()
        elif kind in ("kill_site", "revive_site"):
            site = self.farms.get_site(target)
            site.alive = kind == "revive_site"
            if site.alive:
                site.last_heartbeat = self.clock.now()
                if site.status == SiteStatus.FAILED:
                    site.status = SiteStatus.STANDBY
            for host in self.pools.hosts.values():
                if host.site_id == target:
                    host.alive = site.alive
                    if host.alive:
                        host.last_heartbeat = self.clock.now()
        elif kind in ("kill_node", "revive_node"):
            node = self.storage.cluster.nodes.get(target)
            if node is None:
                raise NotFound(f"unknown storage node {target}")
            node.live = kind == "revive_node"
        else:
            raise MalformedCommand(f"unknown fault kind {kind!r}")
        return {"kind": kind, "target": target}

    def _cmd_drain_host(self, payload: dict, token) -> dict:
        host_id = payload["host_id"]
        self.pools.set_draining(host_id, True)
        on_host = [
            (i.id, i.spec) for i in self.instances.values()
            if i.host_id == host_id and i.state == LifecycleState.RUNNING
        ]
        plan = plan_drain(host_id, on_host, self._pool_snapshot(self.pools.get_host(host_id).pool_id))
        moved = []
        for decision in plan:
            inst = self.instances[decision.instance_id]
            self.instances[inst.id] = self.pools.migrate(inst, decision.host_id)
            moved.append({"instance_id": inst.id, "host_id": decision.host_id})
        return {"host_id": host_id, "migrations": moved}

    def _cmd_advance_time(self, payload: dict, token) -> dict:
        now = self.clock.advance(float(payload["seconds"]))
        return {"now": now}

    def _cmd_generate_load(self, payload: dict, token) -> dict:
        farm_id = payload["farm_id"]
        interval = float(payload.get("interval", 30.0))
        count = int(payload.get("count", 120))
        start = self.clock.now()
        generated = 0
        for inst in sorted(self.instances.values(), key=lambda i: i.id):
            if inst.farm_id != farm_id or inst.state != LifecycleState.RUNNING:
                continue
            for sample in synthetic_load(inst.id, inst.workload_class,
                                         self.load_rng, start, interval, count):
                self.metering.ingest(sample)
                generated += 1
        return {"samples": generated, "from": start, "interval": interval}

    def _cmd_create_template(self, payload: dict, token) -> dict:
        user = self.auth.get_user(token.user_id)
        origin = payload.get("origin", "user_built")
        if user.role != Role.ADMIN:
            origin = "user_built"
        template = Template(
            id=self.ids.new_id(),
            name=payload["name"],
            owner_user_id=token.user_id,
            project_id=payload["project_id"],
            origin=origin,
            os_label=payload.get("os_label", "linux-centos6"),
            software_stack=list(payload.get("software_stack", [])),
            default_spec=ResourceSpec.from_dict(payload["spec"]),
            default_workload_class=WorkloadClass(payload.get("workload_class", "development")),
        )
        self.templates.register(template)
        return {"template_id": template.id}

    def _cmd_provision(self, payload: dict, token) -> dict:
        farm = self.farms.get_farm(payload["farm_id"])
        count = int(payload["count"])
        if count < 0:
            raise MalformedCommand("count must be >= 0")
        self.farms.check_instance_quota(
            farm.id, self._farm_instance_count(farm.id), count
        )
        created = self.templates.instantiate(
            payload["template_id"], count, farm.id, token.user_id,
            self.ids, self.clock.now(), payload.get("overrides"),
        )
        pool_ids = payload.get("network_pool_ids")
        if pool_ids is None:
            eligible = [
                p.id for p in sorted(self.network.pools.values(), key=lambda p: p.id)
                if p.farm_id == farm.id or (p.farm_id is None and p.site_id == farm.site_id)
            ]
            if created and len(eligible) < created[0].spec.network_count:
                raise errors.PoolExhausted(
                    f"farm {farm.id} needs {created[0].spec.network_count} network pools"
                )
        results = []
        for inst in created:
            chosen = pool_ids if pool_ids is not None else eligible[: inst.spec.network_count]
            self.network.attribute_networks(inst, chosen)
            self.storage.assign_block(
                inst,
                int(payload.get("volume_size_gib", inst.spec.disk_gib)),
                self.ids.new_id(),
                farm.site_id,
                replicated=bool(payload.get("replicated_volume", False))
                and farm.secondary_site_id is not None,
                secondary_site_id=farm.secondary_site_id,
            )
            inst = transition(inst, "attribute")
            decision = place(
                PlacementRequest(inst.id, inst.spec, farm.id, farm.pool_id,
                                 payload.get("anti_affinity_group")),
                self._pool_snapshot(farm.pool_id),
            )
            self.pools.charge(decision.host_id, inst.id, inst.spec)
            inst = transition(inst, "start")
            inst.host_id = decision.host_id
            services = payload.get("remote_services")
            if services:
                self.farms.assign_remote_access(inst, services)
            inst.backup_enabled = bool(payload.get("backup", False))
            self.instances[inst.id] = inst
            results.append(inst.to_dict())
        return {"instances": results}

    def _cmd_instance_action(self, payload: dict, token) -> dict:
        inst = self.instances.get(payload["instance_id"])
        if inst is None:
            raise errors.UnknownInstance(payload["instance_id"])
        action = payload["action"]
        if action == "start":
            farm = self.farms.get_farm(inst.farm_id)
            inst = transition(inst, "start")
            decision = place(
                PlacementRequest(inst.id, inst.spec, farm.id, farm.pool_id),
                self._pool_snapshot(farm.pool_id),
            )
            self.pools.charge(decision.host_id, inst.id, inst.spec)
            inst.host_id = decision.host_id
        elif action == "stop":
            inst = transition(inst, "stop")
            self.pools.release_everywhere(inst.id)
        elif action == "destroy":
            if inst.state == LifecycleState.RUNNING:
                inst = transition(inst, "stop")
                self.pools.release_everywhere(inst.id)
            inst = transition(inst, "destroy")
            self.network.release_instance(inst.id)
            self.storage.release_volumes(inst.id)
            inst.remote_access = {}
        else:
            raise MalformedCommand(f"unknown action {action!r}")
        self.instances[inst.id] = inst
        return {"instance": inst.to_dict()}

    def _cmd_migrate_instance(self, payload: dict, token) -> dict:
        inst = self.instances.get(payload["instance_id"])
        if inst is None:
            raise errors.UnknownInstance(payload["instance_id"])
        inst = self.pools.migrate(inst, payload["target_host_id"])
        self.instances[inst.id] = inst
        return {"instance": inst.to_dict()}

    def _cmd_assign_remote_access(self, payload: dict, token) -> dict:
        inst = self.instances.get(payload["instance_id"])
        if inst is None:
            raise errors.UnknownInstance(payload["instance_id"])
        self.farms.assign_remote_access(inst, payload["services"])
        return {"instance": inst.to_dict()}

    def _cmd_create_network_pool(self, payload: dict, token) -> dict:
        pool = NetworkPool(
            id=self.ids.new_id(),
            site_id=payload["site_id"],
            cidr=payload["cidr"],
            vlan_id=int(payload["vlan_id"]),
            farm_id=payload.get("farm_id"),
        )
        self.network.add_pool(pool)
        return {"network_pool_id": pool.id}

    def _cmd_add_firewall_rule(self, payload: dict, token) -> dict:
        rule = FirewallRule(
            id=self.ids.new_id(),
            scope=payload["scope"],
            protocol=payload["protocol"],
            port_low=int(payload["port_low"]),
            port_high=int(payload["port_high"]),
            remote_cidr=payload["remote_cidr"],
            action=payload["action"],
            priority=int(payload["priority"]),
        )
        self.network.add_firewall_rule(rule)
        return {"rule_id": rule.id}

    def _cmd_add_lb_rule(self, payload: dict, token) -> dict:
        backends = list(payload["backend_instance_ids"])
        farms = {self.instances[b].farm_id for b in backends if b in self.instances}
        if len(farms) != 1 or farms != {payload["farm_id"]}:
            raise errors.Conflict("lb backends must all belong to the named farm")
        rule = LbRule(
            id=self.ids.new_id(),
            farm_id=payload["farm_id"],
            vip=payload["vip"],
            port=int(payload["port"]),
            backend_instance_ids=backends,
            algorithm=payload.get("algorithm", "round_robin"),
        )
        self.network.add_lb_rule(rule)
        return {"rule_id": rule.id}

    def _cmd_create_volume(self, payload: dict, token) -> dict:
        inst = self.instances.get(payload["instance_id"])
        if inst is None:
            raise errors.UnknownInstance(payload["instance_id"])
        farm = self.farms.get_farm(inst.farm_id)
        volume = self.storage.assign_block(
            inst,
            int(payload["size_gib"]),
            self.ids.new_id(),
            farm.site_id,
            replicated=bool(payload.get("replicated", False)) and farm.secondary_site_id is not None,
            secondary_site_id=farm.secondary_site_id,
        )
        return {"volume_id": volume.id}

    def _cmd_block_write(self, payload: dict, token) -> dict:
        volume = self.storage.volumes.get(payload["volume_id"])
        if volume is None:
            raise NotFound(f"unknown volume {payload['volume_id']}")
        secondary_up = True
        if volume.secondary_site_id:
            site = self.farms.sites.get(volume.secondary_site_id)
            secondary_up = bool(site and site.alive)
        mode = payload.get("mode")
        if mode is None and volume.secondary_site_id:
            site = self.farms.sites.get(volume.secondary_site_id)
            mode = site.replication_mode if site else "sync"
        sequence = self.storage.block_replicate(
            volume.id, int(payload["block_index"]), payload["content_hash"],
            mode=mode or "sync", secondary_up=secondary_up,
        )
        return {"volume_id": volume.id, "sequence": sequence}

    def _cmd_object_put(self, payload: dict, token) -> dict:
        obj = self.storage.object_put(
            payload["key"], payload["farm_id"],
            float(payload["size_gib"]), payload["content_hash"],
        )
        return {"key": obj.key, "replica_nodes": list(obj.replica_nodes)}

    def _cmd_object_delete(self, payload: dict, token) -> dict:
        self.storage.object_delete(payload["key"])
        return {"key": payload["key"], "deleted": True}

    def _cmd_ingest_sample(self, payload: dict, token) -> dict:
        instance_id = payload["instance_id"]
        self.metering.ingest(
            MeterSample(instance_id, float(payload["at"]), float(payload["cpu_pct"])),
            known_instance=instance_id in self.instances,
        )
        return {"ok": True}

    def _cmd_failover(self, payload: dict, token) -> dict:
        farm = self.farms.get_farm(payload["farm_id"])
        report = self._do_failover(farm, trigger="manual")
        self.dr_events.append(report)
        return report

    def _query_dr_events(self, payload: dict) -> dict:
        return {"events": [dict(e) for e in self.dr_events]}

    # ------------------------------------------------------------------
    # Queries
    # ------------------------------------------------------------------

    def _query_templates(self, payload: dict) -> dict:
        return {"templates": [t.to_dict() for t in self.templates.list(payload.get("project_id"))]}

    def _query_farms(self, payload: dict) -> dict:
        return {"farms": [f.to_dict() for f in sorted(self.farms.farms.values(), key=lambda f: f.id)]}

    def _query_farm(self, payload: dict) -> dict:
        farm = self.farms.get_farm(payload["farm_id"])
        ledger = self.storage.farm_ledgers.get(farm.id, {})
        return {
            "farm": farm.to_dict(),
            "instance_count": self._farm_instance_count(farm.id),
            "storage_ledger": dict(ledger),
        }

    def _query_instances(self, payload: dict) -> dict:
        items = sorted(self.instances.values(), key=lambda i: i.id)
        farm_id = payload.get("farm_id")
        if farm_id:
            items = [i for i in items if i.farm_id == farm_id]
        return {"instances": [i.to_dict() for i in items]}

    def _query_instance(self, payload: dict) -> dict:
        inst = self.instances.get(payload["instance_id"])
        if inst is None:
            raise errors.UnknownInstance(payload["instance_id"])
        return {
            "instance": inst.to_dict(),
            "networks": [a.to_dict() for a in self.network.assignments_for(inst.id)],
            "volumes": [
                v.to_dict() for v in sorted(self.storage.volumes.values(), key=lambda v: v.id)
                if v.attached_instance == inst.id
            ],
        }

    def _query_hosts(self, payload: dict) -> dict:
        out = []
        for host in sorted(self.pools.hosts.values(), key=lambda h: h.id):
            uv, um, ud = self.pools.used(host.id)
            d = host.to_dict()
            d.update({"vcpu_used": uv, "memory_used_gib": um, "disk_used_gib": ud})
            out.append(d)
        return {"hosts": out}

    def _query_pools(self, payload: dict) -> dict:
        return {"pools": [p.to_dict() for p in sorted(self.pools.pools.values(), key=lambda p: p.id)]}

    def _query_sites(self, payload: dict) -> dict:
        return {"sites": [s.to_dict() for s in sorted(self.farms.sites.values(), key=lambda s: s.id)]}

    def _query_networks(self, payload: dict) -> dict:
        return {
            "pools": [p.to_dict() for p in sorted(self.network.pools.values(), key=lambda p: p.id)],
            "assignments": [a.to_dict() for a in self.network.assignments],
        }

    def _query_firewall_rules(self, payload: dict) -> dict:
        return {"rules": [r.to_dict() for r in sorted(self.network.firewall_rules.values(), key=lambda r: r.id)]}

    def _query_lb_rules(self, payload: dict) -> dict:
        return {"rules": [r.to_dict() for r in sorted(self.network.lb_rules.values(), key=lambda r: r.id)]}

    def _query_volumes(self, payload: dict) -> dict:
        return {"volumes": [v.to_dict() for v in sorted(self.storage.volumes.values(), key=lambda v: v.id)]}

    def _query_object(self, payload: dict) -> dict:
        return {"key": payload["key"], "content_hash": self.storage.object_get(payload["key"])}

    def _query_objects(self, payload: dict) -> dict:
        return {"objects": [o.to_dict() for o in sorted(self.storage.cluster.objects.values(), key=lambda o: o.key)]}

    def _query_report(self, payload: dict) -> dict:
        start = float(payload.get("start", 0.0))
        end = float(payload.get("end", self.clock.now()))
        classes = {i.id: i.workload_class for i in self.instances.values()}
        report = self.metering.report(start, end, classes)
        report["csv"] = self.metering.export_csv(report)
        report["plot"] = self.metering.plot_series(report)
        return report

    def _query_users(self, payload: dict) -> dict:
        return {"users": [
            {"id": u.id, "username": u.username, "role": u.role.value,
             "project_ids": sorted(u.project_ids)}
            for u in sorted(self.auth.users.values(), key=lambda u: u.id)
        ]}

    # ------------------------------------------------------------------
    # Invariant suite
    # ------------------------------------------------------------------

    def check_invariants(self) -> list[str]:
        violations: list[str] = []
        # exactly one master per pool with >= 1 up host
        for pool in self.pools.pools.values():
            up = [h for h in self.pools.pool_hosts(pool.id) if h.liveness == Liveness.UP]
            masters = [h for h in self.pools.pool_hosts(pool.id) if h.role == HostRole.MASTER]
            if up and len(masters) != 1:
                violations.append(f"pool {pool.id}: {len(masters)} masters with up hosts")
            if not up and masters:
                violations.append(f"pool {pool.id}: master with no up host")
        # capacity conservation
        for host in self.pools.hosts.values():
            uv, um, ud = self.pools.used(host.id)
            ratio = self.pools.pools[host.pool_id].overcommit_ratio
            if uv > host.vcpu_capacity * ratio + 1e-9:
                violations.append(f"host {host.id}: vcpu overcommitted beyond ratio")
            if um > host.memory_capacity_gib:
                violations.append(f"host {host.id}: memory overcommitted")
            if ud > host.disk_capacity_gib:
                violations.append(f"host {host.id}: disk overcommitted")
        # lifecycle / host linkage
        for inst in self.instances.values():
            if inst.state in HOSTED_STATES and inst.host_id is None:
                violations.append(f"instance {inst.id}: hosted state without host")
            if inst.state not in HOSTED_STATES and inst.host_id is not None:
                violations.append(f"instance {inst.id}: host set in {inst.state.value}")
        # network isolation and uniqueness
        seen_ips: set[tuple[str, str]] = set()
        seen_macs: set[str] = set()
        for a in self.network.assignments:
            if (a.pool_id, a.ip) in seen_ips:
                violations.append(f"duplicate ip {a.ip} in pool {a.pool_id}")
            seen_ips.add((a.pool_id, a.ip))
            if a.mac in seen_macs:
                violations.append(f"duplicate mac {a.mac}")
            seen_macs.add(a.mac)
            pool = self.network.pools.get(a.pool_id)
            inst = self.instances.get(a.instance_id)
            if pool and pool.farm_id and inst and inst.farm_id != pool.farm_id:
                violations.append(
                    f"instance {a.instance_id} on isolated pool of farm {pool.farm_id}"
                )
        # storage quota ledgers
        for farm_id, ledger in self.storage.farm_ledgers.items():
            if ledger["block_used"] < -1e-9 or ledger["object_used"] < -1e-9:
                violations.append(f"farm {farm_id}: negative storage ledger")
            if ledger["block_used"] > ledger.get("block_quota", 0) + 1e-9:
                violations.append(f"farm {farm_id}: block quota exceeded")
            if ledger["object_used"] > ledger.get("object_quota", 0) + 1e-9:
                violations.append(f"farm {farm_id}: object quota exceeded")
        # farm instance quota
        for farm in self.farms.farms.values():
            if self._farm_instance_count(farm.id) > farm.quota.max_instances:
                violations.append(f"farm {farm.id}: instance quota exceeded")
        # sync DR safety: acknowledged writes are a subset of the standby journal
        for volume in self.storage.volumes.values():
            if not volume.replicated or volume.secondary_site_id is None:
                continue
            site = self.farms.sites.get(volume.secondary_site_id)
            mode = site.replication_mode if site else "sync"
            if mode == "sync":
                acked = [tuple(e) for e in volume.journal]
                standby = {tuple(e) for e in volume.secondary_journal}
                missing = [e for e in acked if e not in standby]
                if missing:
                    violations.append(
                        f"volume {volume.id}: {len(missing)} acked writes missing on standby"
                    )
        # object replicas on distinct nodes
        for obj in self.storage.cluster.objects.values():
            if len(set(obj.replica_nodes)) != len(obj.replica_nodes):
                violations.append(f"object {obj.key}: duplicate replica node")
        # single active site per DR pair
        for farm in self.farms.farms.values():
            if farm.secondary_site_id is None:
                continue
            a = self.farms.sites.get(farm.site_id)
            b = self.farms.sites.get(farm.secondary_site_id)
            active = [s for s in (a, b) if s and s.status == SiteStatus.ACTIVE]
            if len(active) > 1:
                violations.append(f"farm {farm.id}: both sites active")
        return violations


def _rng_state_to_json(state) -> list:
    version, internal, gauss_next = state
    return [version, list(internal), gauss_next]


def _rng_state_from_json(state) -> tuple:
    version, internal, gauss_next = state
    return (version, tuple(internal), gauss_next)
