"""Virtual farms (project tenancy, quotas, isolation) and the
primary/secondary disaster-recovery site pair."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from .core import Instance, LifecycleState
from .errors import AlreadyActive, NotFound, QuotaExceeded, WrongState


class SiteRole(str, Enum):
    PRIMARY = "primary"
    SECONDARY = "secondary"


class SiteStatus(str, Enum):
    ACTIVE = "active"
    STANDBY = "standby"
    FAILED = "failed"


@dataclass
class Site:
    id: str
    name: str
    role: SiteRole
    status: SiteStatus
    replication_mode: str = "sync"  # sync | async
    peer_site: str | None = None
    alive: bool = True
    last_heartbeat: float = 0.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "role": self.role.value,
            "status": self.status.value,
            "replication_mode": self.replication_mode,
            "peer_site": self.peer_site,
            "alive": self.alive,
            "last_heartbeat": self.last_heartbeat,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Site":
        d = dict(d)
        d["role"] = SiteRole(d["role"])
        d["status"] = SiteStatus(d["status"])
        return cls(**d)


@dataclass
class FarmQuota:
    max_hosts: int
    max_instances: int
    object_quota_gib: float
    block_quota_gib: float

    def __post_init__(self):
        for name in ("max_hosts", "max_instances", "object_quota_gib", "block_quota_gib"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_dict(self) -> dict:
        return {
            "max_hosts": self.max_hosts,
            "max_instances": self.max_instances,
            "object_quota_gib": self.object_quota_gib,
            "block_quota_gib": self.block_quota_gib,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FarmQuota":
        return cls(**d)


@dataclass
class Farm:
    id: str
    name: str
    project_id: str
    site_id: str
    pool_id: str
    quota: FarmQuota
    secondary_site_id: str | None = None
    secondary_pool_id: str | None = None
    vlan_ids: set[int] = field(default_factory=set)
    directory_service: dict = field(default_factory=lambda: {"enabled": True, "type_label": "nis"})
    replication_lag: int = 0
    degraded: bool = False
    standby_sequence: int = 0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "project_id": self.project_id,
            "site_id": self.site_id,
            "pool_id": self.pool_id,
            "quota": self.quota.to_dict(),
            "secondary_site_id": self.secondary_site_id,
            "secondary_pool_id": self.secondary_pool_id,
            "vlan_ids": sorted(self.vlan_ids),
            "directory_service": dict(self.directory_service),
            "replication_lag": self.replication_lag,
            "degraded": self.degraded,
            "standby_sequence": self.standby_sequence,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Farm":
        d = dict(d)
        d["quota"] = FarmQuota.from_dict(d["quota"])
        d["vlan_ids"] = set(d["vlan_ids"])
        return cls(**d)


REMOTE_SERVICES = ("agent", "vdi", "desktop")


class FarmManager:
    def __init__(self):
        self.farms: dict[str, Farm] = {}
        self.sites: dict[str, Site] = {}
        self._next_vlan = 100

    # -- sites ------------------------------------------------------------

    def add_site(self, site: Site) -> Site:
        self.sites[site.id] = site
        return site

    def get_site(self, site_id: str) -> Site:
        try:
            return self.sites[site_id]
        except KeyError:
            raise NotFound(f"unknown site {site_id}")

    def record_site_heartbeats(self, now: float) -> None:
        for site in self.sites.values():
            if site.alive:
                site.last_heartbeat = now

    def sweep_sites(self, now: float, miss_limit: int, interval: float) -> list[str]:
        """Mark sites whose heartbeats went stale as failed; returns the
        ids of sites newly detected failed."""
        newly_failed = []
        threshold = miss_limit * interval
        for site in self.sites.values():
            stale = (now - site.last_heartbeat) > threshold
            if stale and site.status != SiteStatus.FAILED:
                site.status = SiteStatus.FAILED
                newly_failed.append(site.id)
        return newly_failed

    # -- farms ------------------------------------------------------------

    def allocate_vlans(self, count: int) -> set[int]:
        vlans = set(range(self._next_vlan, self._next_vlan + count))
        self._next_vlan += count
        return vlans

    def add_farm(self, farm: Farm) -> Farm:
        self.farms[farm.id] = farm
        return farm

    def get_farm(self, farm_id: str) -> Farm:
        try:
            return self.farms[farm_id]
        except KeyError:
            raise NotFound(f"unknown farm {farm_id}")

    def check_instance_quota(self, farm_id: str, current_count: int, additional: int) -> None:
        farm = self.get_farm(farm_id)
        if current_count + additional > farm.quota.max_instances:
            raise QuotaExceeded(
                f"farm {farm_id} instance quota {farm.quota.max_instances} exceeded"
            )

    # -- remote access ----------------------------------------------------

    def assign_remote_access(self, instance: Instance, services: list[str]) -> Instance:
        if instance.state not in (LifecycleState.ATTRIBUTED, LifecycleState.RUNNING):
            raise WrongState(f"instance {instance.id} is {instance.state.value}")
        for service in services:
            if service not in REMOTE_SERVICES:
                raise ValueError(f"unknown remote service {service!r}")
            instance.remote_access[service] = f"{service}://console/{instance.id}"
        return instance

    # -- DR ---------------------------------------------------------------

    def replicate_tick(self, farm: Farm, current_sequence: int, secondary_up: bool) -> dict:
        """Push pending control-state deltas to the standby.

        Reports the replicated sequence range and the remaining lag (in
        mutations).  A down secondary in async mode just grows the lag;
        in sync mode the farm is marked degraded.
        """
        pending = current_sequence - farm.standby_sequence
        if pending <= 0:
            farm.replication_lag = 0
            return {"farm_id": farm.id, "from": farm.standby_sequence,
                    "to": farm.standby_sequence, "lag": 0}
        mode = "sync"
        if farm.secondary_site_id is not None:
            mode = self.get_site(farm.secondary_site_id).replication_mode
        if not secondary_up:
            farm.replication_lag = pending
            if mode == "sync":
                farm.degraded = True
            return {"farm_id": farm.id, "from": farm.standby_sequence,
                    "to": farm.standby_sequence, "lag": pending}
        start = farm.standby_sequence
        farm.standby_sequence = current_sequence
        farm.replication_lag = 0
        farm.degraded = False
        return {"farm_id": farm.id, "from": start, "to": current_sequence, "lag": 0}

    def promote_secondary(self, farm: Farm) -> tuple[Site, Site]:
        """Flip the active/standby pair for a farm's sites."""
        if farm.secondary_site_id is None:
            raise WrongState(f"farm {farm.id} has no secondary site")
        primary = self.get_site(farm.site_id)
        secondary = self.get_site(farm.secondary_site_id)
        if secondary.status == SiteStatus.ACTIVE:
            raise AlreadyActive(f"site {secondary.id} is already active")
        if primary.status != SiteStatus.FAILED:
            primary.status = SiteStatus.STANDBY
        secondary.status = SiteStatus.ACTIVE
        return primary, secondary

    # -- persistence ------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "farms": {k: v.to_dict() for k, v in sorted(self.farms.items())},
            "sites": {k: v.to_dict() for k, v in sorted(self.sites.items())},
            "next_vlan": self._next_vlan,
        }

    def load_state(self, state: dict) -> None:
        self.farms = {k: Farm.from_dict(v) for k, v in state["farms"].items()}
        self.sites = {k: Site.from_dict(v) for k, v in state["sites"].items()}
        self._next_vlan = state["next_vlan"]
