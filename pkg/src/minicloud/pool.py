"""Simulated hypervisor hosts grouped into server pools: liveness via
heartbeats, master election, capacity accounting, and live migration."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .core import HOSTED_STATES, Instance, LifecycleState, ResourceSpec, transition
from .errors import (
    CapacityExceeded,
    CrossPoolMigration,
    HostDown,
    NoLiveHost,
    NotFound,
    WrongState,
)


class HostRole(str, Enum):
    MASTER = "master"
    SLAVE = "slave"


class Liveness(str, Enum):
    UP = "up"
    DOWN = "down"
    DRAINING = "draining"


@dataclass
class Host:
    id: str
    site_id: str
    pool_id: str
    vcpu_capacity: int
    memory_capacity_gib: int
    disk_capacity_gib: int
    role: HostRole = HostRole.SLAVE
    liveness: Liveness = Liveness.UP
    last_heartbeat: float = 0.0
    alive: bool = True  # simulation ground truth; kill/revive toggles this

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "site_id": self.site_id,
            "pool_id": self.pool_id,
            "vcpu_capacity": self.vcpu_capacity,
            "memory_capacity_gib": self.memory_capacity_gib,
            "disk_capacity_gib": self.disk_capacity_gib,
            "role": self.role.value,
            "liveness": self.liveness.value,
            "last_heartbeat": self.last_heartbeat,
            "alive": self.alive,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Host":
        d = dict(d)
        d["role"] = HostRole(d["role"])
        d["liveness"] = Liveness(d["liveness"])
        return cls(**d)


@dataclass
class ServerPool:
    id: str
    site_id: str
    host_ids: list[str] = field(default_factory=list)
    overcommit_ratio: float = 4.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "site_id": self.site_id,
            "host_ids": list(self.host_ids),
            "overcommit_ratio": self.overcommit_ratio,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ServerPool":
        return cls(**d)


class PoolManager:
    """Owns hosts, pools, and the per-host capacity ledger.

    The ledger maps host_id -> {instance_id: ResourceSpec} for every
    instance currently charged to that host (Running or Migrating).
    """

    def __init__(self, default_overcommit: float = 4.0):
        self.default_overcommit = default_overcommit
        self.hosts: dict[str, Host] = {}
        self.pools: dict[str, ServerPool] = {}
        self.charges: dict[str, dict[str, ResourceSpec]] = {}

    # -- registry ---------------------------------------------------------

    def add_pool(self, pool: ServerPool) -> ServerPool:
        self.pools[pool.id] = pool
        return pool

    def add_host(self, host: Host) -> Host:
        self.hosts[host.id] = host
        self.charges.setdefault(host.id, {})
        pool = self.pools[host.pool_id]
        if host.id not in pool.host_ids:
            pool.host_ids.append(host.id)
        self.elect_master(pool.id)
        return host

    def get_host(self, host_id: str) -> Host:
        try:
            return self.hosts[host_id]
        except KeyError:
            raise NotFound(f"unknown host {host_id}")

    def get_pool(self, pool_id: str) -> ServerPool:
        try:
            return self.pools[pool_id]
        except KeyError:
            raise NotFound(f"unknown pool {pool_id}")

    def pool_hosts(self, pool_id: str) -> list[Host]:
        return [self.hosts[h] for h in self.get_pool(pool_id).host_ids]

    # -- capacity ---------------------------------------------------------

    def used(self, host_id: str) -> tuple[int, int, int]:
        specs = self.charges.get(host_id, {}).values()
        return (
            sum(s.vcpu for s in specs),
            sum(s.memory_gib for s in specs),
            sum(s.disk_gib for s in specs),
        )

    def free(self, host_id: str) -> tuple[float, int, int]:
        """Free (vcpu, memory, disk) with vcpu scaled by the pool's
        overcommit ratio; memory and disk are never overcommitted."""
        host = self.get_host(host_id)
        ratio = self.pools[host.pool_id].overcommit_ratio
        uv, um, ud = self.used(host_id)
        return (
            host.vcpu_capacity * ratio - uv,
            host.memory_capacity_gib - um,
            host.disk_capacity_gib - ud,
        )

    def fits(self, host_id: str, spec: ResourceSpec) -> bool:
        fv, fm, fd = self.free(host_id)
        return spec.vcpu <= fv and spec.memory_gib <= fm and spec.disk_gib <= fd

    def charge(self, host_id: str, instance_id: str, spec: ResourceSpec) -> None:
        if not self.fits(host_id, spec):
            raise CapacityExceeded(f"host {host_id} cannot fit {spec}")
        self.charges[host_id][instance_id] = spec

    def release(self, host_id: str, instance_id: str) -> None:
        self.charges.get(host_id, {}).pop(instance_id, None)

    def release_everywhere(self, instance_id: str) -> None:
        for ledger in self.charges.values():
            ledger.pop(instance_id, None)

    # -- mastership and liveness -----------------------------------------

    def elect_master(self, pool_id: str) -> ServerPool:
        """Ensure exactly one up host is master; keep the incumbent if it
        is still up, otherwise promote the up host with the lowest id."""
        pool = self.get_pool(pool_id)
        up = [self.hosts[h] for h in pool.host_ids if self.hosts[h].liveness == Liveness.UP]
        if not up:
            for hid in pool.host_ids:
                self.hosts[hid].role = HostRole.SLAVE
            raise NoLiveHost(f"pool {pool_id} has no live host")
        incumbent = [h for h in up if h.role == HostRole.MASTER]
        master = incumbent[0] if incumbent else min(up, key=lambda h: h.id)
        for hid in pool.host_ids:
            host = self.hosts[hid]
            host.role = HostRole.MASTER if host is master else HostRole.SLAVE
        return pool

    def record_heartbeats(self, now: float) -> None:
        """Refresh heartbeats of all hosts that are actually alive."""
        for host in self.hosts.values():
            if host.alive:
                host.last_heartbeat = now

    def heartbeat_sweep(self, pool_id: str, now: float, miss_limit: int, interval: float) -> ServerPool:
        """Mark hosts with stale heartbeats down (and fresh ones back up),
        re-electing the master if it was demoted."""
        if miss_limit < 1:
            raise ValueError("miss_limit must be >= 1")
        pool = self.get_pool(pool_id)
        threshold = miss_limit * interval
        changed = False
        for hid in pool.host_ids:
            host = self.hosts[hid]
            stale = (now - host.last_heartbeat) > threshold
            if stale and host.liveness == Liveness.UP:
                host.liveness = Liveness.DOWN
                if host.role == HostRole.MASTER:
                    host.role = HostRole.SLAVE
                changed = True
            elif not stale and host.liveness == Liveness.DOWN:
                host.liveness = Liveness.UP
                changed = True
        if changed:
            try:
                self.elect_master(pool_id)
            except NoLiveHost:
                pass
        return pool

    def set_draining(self, host_id: str, draining: bool) -> Host:
        host = self.get_host(host_id)
        if draining:
            if host.liveness == Liveness.DOWN:
                raise HostDown(f"host {host_id} is down")
            host.liveness = Liveness.DRAINING
            if host.role == HostRole.MASTER:
                host.role = HostRole.SLAVE
                try:
                    self.elect_master(host.pool_id)
                except NoLiveHost:
                    pass
        else:
            host.liveness = Liveness.UP
            self.elect_master(host.pool_id)
        return host

    # -- migration --------------------------------------------------------

    def migrate(self, instance: Instance, target_host_id: str) -> Instance:
        """Move a Running instance to a peer host in the same pool.

        Accounting is atomic: the spec is charged to the target before the
        source releases it, so total charged capacity never dips."""
        if instance.state != LifecycleState.RUNNING:
            raise WrongState(f"instance {instance.id} is {instance.state.value}")
        source = self.get_host(instance.host_id)
        target = self.get_host(target_host_id)
        if target.pool_id != source.pool_id:
            raise CrossPoolMigration(f"{target_host_id} not in pool {source.pool_id}")
        if target.liveness != Liveness.UP:
            raise HostDown(f"target host {target_host_id} is not up")
        if target.id != source.id and not self.fits(target.id, instance.spec):
            raise CapacityExceeded(f"host {target_host_id} cannot fit {instance.spec}")
        inst = transition(instance, "migrate_begin")
        self.charges[target.id][inst.id] = inst.spec
        if target.id != source.id:
            self.release(source.id, inst.id)
        inst = transition(inst, "migrate_end")
        inst.host_id = target.id
        return inst

    # -- persistence ------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "default_overcommit": self.default_overcommit,
            "hosts": {k: v.to_dict() for k, v in sorted(self.hosts.items())},
            "pools": {k: v.to_dict() for k, v in sorted(self.pools.items())},
            "charges": {
                h: {i: s.to_dict() for i, s in sorted(m.items())}
                for h, m in sorted(self.charges.items())
            },
        }

    def load_state(self, state: dict) -> None:
        self.default_overcommit = state["default_overcommit"]
        self.hosts = {k: Host.from_dict(v) for k, v in state["hosts"].items()}
        self.pools = {k: ServerPool.from_dict(v) for k, v in state["pools"].items()}
        self.charges = {
            h: {i: ResourceSpec.from_dict(s) for i, s in m.items()}
            for h, m in state["charges"].items()
        }
