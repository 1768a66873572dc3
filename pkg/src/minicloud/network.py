"""Virtual networking: network pools with VLAN isolation, IP/MAC
allocation, firewall rule evaluation, and load-balancer backend picking."""

from __future__ import annotations

import hashlib
import ipaddress
from dataclasses import dataclass, field

from .core import Instance, LifecycleState
from .errors import (
    Conflict,
    CrossFarmNetwork,
    NoLiveBackend,
    NotFound,
    PoolExhausted,
    WrongState,
)

MAC_PREFIX = (0x02,)  # locally administered, unicast

VLAN_MIN, VLAN_MAX = 100, 4094


def derive_mac(instance_id: str, nic_index: int) -> str:
    """Deterministic MAC: locally-administered prefix octet + 5 bytes hashed
    from (instance, nic); 40 hash bits keep birthday collisions negligible
    at farm scale."""
    digest = hashlib.sha256(f"{instance_id}:{nic_index}".encode()).digest()
    octets = list(MAC_PREFIX) + list(digest[:5])
    return ":".join(f"{o:02x}" for o in octets)


@dataclass
class NetworkPool:
    id: str
    site_id: str
    cidr: str
    vlan_id: int
    farm_id: str | None = None  # None => shared pool

    def __post_init__(self):
        ipaddress.IPv4Network(self.cidr)
        if not VLAN_MIN <= self.vlan_id <= VLAN_MAX:
            raise ValueError(f"vlan_id {self.vlan_id} outside {VLAN_MIN}-{VLAN_MAX}")

    @property
    def network(self) -> ipaddress.IPv4Network:
        return ipaddress.IPv4Network(self.cidr)

    def usable_addresses(self):
        """All assignable addresses: hosts minus the gateway (first host)."""
        hosts = self.network.hosts()
        next(hosts, None)  # gateway
        return hosts

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "site_id": self.site_id,
            "cidr": self.cidr,
            "vlan_id": self.vlan_id,
            "farm_id": self.farm_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkPool":
        return cls(**d)


@dataclass
class NetworkAssignment:
    instance_id: str
    pool_id: str
    ip: str
    mac: str
    nic_index: int

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "pool_id": self.pool_id,
            "ip": self.ip,
            "mac": self.mac,
            "nic_index": self.nic_index,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkAssignment":
        return cls(**d)


@dataclass
class FirewallRule:
    id: str
    scope: str  # "instance:<id>" | "farm:<id>"
    protocol: str  # tcp | udp | icmp | any
    port_low: int
    port_high: int
    remote_cidr: str
    action: str  # allow | deny
    priority: int

    def __post_init__(self):
        if self.protocol not in ("tcp", "udp", "icmp", "any"):
            raise ValueError(f"bad protocol {self.protocol!r}")
        if self.action not in ("allow", "deny"):
            raise ValueError(f"bad action {self.action!r}")
        if self.port_low > self.port_high:
            raise ValueError("port_low > port_high")
        ipaddress.IPv4Network(self.remote_cidr)

    def matches(self, protocol: str, port: int, remote_ip: str) -> bool:
        if self.protocol != "any" and self.protocol != protocol:
            return False
        if not self.port_low <= port <= self.port_high:
            return False
        return ipaddress.IPv4Address(remote_ip) in ipaddress.IPv4Network(self.remote_cidr)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "scope": self.scope,
            "protocol": self.protocol,
            "port_low": self.port_low,
            "port_high": self.port_high,
            "remote_cidr": self.remote_cidr,
            "action": self.action,
            "priority": self.priority,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FirewallRule":
        return cls(**d)


@dataclass
class LbRule:
    id: str
    farm_id: str
    vip: str
    port: int
    backend_instance_ids: list[str]
    algorithm: str = "round_robin"  # round_robin | least_assignments

    def __post_init__(self):
        if not self.backend_instance_ids:
            raise ValueError("backend list must be non-empty")
        if self.algorithm not in ("round_robin", "least_assignments"):
            raise ValueError(f"bad algorithm {self.algorithm!r}")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "farm_id": self.farm_id,
            "vip": self.vip,
            "port": self.port,
            "backend_instance_ids": list(self.backend_instance_ids),
            "algorithm": self.algorithm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LbRule":
        return cls(**d)


def evaluate_firewall(rules: list[FirewallRule], protocol: str, port: int, remote_ip: str) -> str:
    """First-match evaluation over rules sorted by ascending priority;
    default deny."""
    for rule in sorted(rules, key=lambda r: r.priority):
        if rule.matches(protocol, port, remote_ip):
            return rule.action
    return "deny"


class NetworkManager:
    def __init__(self):
        self.pools: dict[str, NetworkPool] = {}
        self.assignments: list[NetworkAssignment] = []
        self.firewall_rules: dict[str, FirewallRule] = {}
        self.lb_rules: dict[str, LbRule] = {}
        self.lb_pick_counts: dict[str, dict[str, int]] = {}  # rule id -> backend -> picks
        self._allocated: dict[str, set[str]] = {}  # pool id -> ips in use
        self._macs: set[str] = set()

    # -- pools ------------------------------------------------------------

    def add_pool(self, pool: NetworkPool) -> NetworkPool:
        new_net = pool.network
        for other in self.pools.values():
            if other.network.overlaps(new_net):
                raise Conflict(f"cidr {pool.cidr} overlaps pool {other.id}")
            if other.site_id == pool.site_id and other.vlan_id == pool.vlan_id:
                raise Conflict(f"vlan {pool.vlan_id} already used at site {pool.site_id}")
        self.pools[pool.id] = pool
        self._allocated.setdefault(pool.id, set())
        return pool

    def get_pool(self, pool_id: str) -> NetworkPool:
        try:
            return self.pools[pool_id]
        except KeyError:
            raise NotFound(f"unknown network pool {pool_id}")

    # -- address assignment ----------------------------------------------

    def attribute_networks(self, instance: Instance, pool_ids: list[str]) -> list[NetworkAssignment]:
        if instance.state not in (LifecycleState.REQUESTED, LifecycleState.ATTRIBUTED):
            raise WrongState(f"instance {instance.id} is {instance.state.value}")
        if len(pool_ids) != instance.spec.network_count:
            raise ValueError(
                f"expected {instance.spec.network_count} pools, got {len(pool_ids)}"
            )
        for pid in pool_ids:
            pool = self.get_pool(pid)
            if pool.farm_id is not None and pool.farm_id != instance.farm_id:
                raise CrossFarmNetwork(
                    f"pool {pid} is isolated to farm {pool.farm_id}"
                )
        granted: list[NetworkAssignment] = []
        for nic_index, pid in enumerate(pool_ids):
            granted.append(self._allocate(instance.id, pid, nic_index))
        self.assignments.extend(granted)
        return granted

    def _allocate(self, instance_id: str, pool_id: str, nic_index: int) -> NetworkAssignment:
        pool = self.get_pool(pool_id)
        taken = self._allocated[pool_id]
        ip = next((str(a) for a in pool.usable_addresses() if str(a) not in taken), None)
        if ip is None:
            raise PoolExhausted(f"network pool {pool_id} has no free address")
        mac = derive_mac(instance_id, nic_index)
        if mac in self._macs:
            raise Conflict(f"mac collision for {instance_id} nic {nic_index}")
        taken.add(ip)
        self._macs.add(mac)
        return NetworkAssignment(
            instance_id=instance_id, pool_id=pool_id, ip=ip, mac=mac, nic_index=nic_index
        )

    def release_instance(self, instance_id: str) -> None:
        kept: list[NetworkAssignment] = []
        for a in self.assignments:
            if a.instance_id == instance_id:
                self._allocated[a.pool_id].discard(a.ip)
                self._macs.discard(a.mac)
            else:
                kept.append(a)
        self.assignments = kept

    def assignments_for(self, instance_id: str) -> list[NetworkAssignment]:
        return [a for a in self.assignments if a.instance_id == instance_id]

    # -- firewall ---------------------------------------------------------

    def add_firewall_rule(self, rule: FirewallRule) -> FirewallRule:
        for other in self.firewall_rules.values():
            if other.scope == rule.scope and other.priority == rule.priority:
                raise Conflict(
                    f"priority {rule.priority} already used in scope {rule.scope}"
                )
        self.firewall_rules[rule.id] = rule
        return rule

    def scope_rules(self, scope: str) -> list[FirewallRule]:
        return sorted(
            (r for r in self.firewall_rules.values() if r.scope == scope),
            key=lambda r: r.priority,
        )

    # -- load balancing ---------------------------------------------------

    def add_lb_rule(self, rule: LbRule) -> LbRule:
        for pid, pool in self.pools.items():
            if rule.vip in self._allocated.get(pid, set()):
                raise Conflict(f"vip {rule.vip} already allocated to an instance")
        self.lb_rules[rule.id] = rule
        self.lb_pick_counts.setdefault(rule.id, {})
        return rule

    def lb_pick(self, rule_id: str, request_ordinal: int, live_backends: set[str]) -> str:
        rule = self.lb_rules[rule_id]
        live = sorted(b for b in rule.backend_instance_ids if b in live_backends)
        if not live:
            raise NoLiveBackend(f"lb rule {rule_id} has no live backend")
        if rule.algorithm == "round_robin":
            chosen = live[request_ordinal % len(live)]
        else:
            counts = self.lb_pick_counts[rule_id]
            chosen = min(live, key=lambda b: (counts.get(b, 0), b))
        self.lb_pick_counts[rule_id][chosen] = self.lb_pick_counts[rule_id].get(chosen, 0) + 1
        return chosen

    # -- persistence ------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "pools": {k: v.to_dict() for k, v in sorted(self.pools.items())},
            "assignments": [a.to_dict() for a in self.assignments],
            "firewall_rules": {k: v.to_dict() for k, v in sorted(self.firewall_rules.items())},
            "lb_rules": {k: v.to_dict() for k, v in sorted(self.lb_rules.items())},
            "lb_pick_counts": {k: dict(sorted(v.items())) for k, v in sorted(self.lb_pick_counts.items())},
        }

    def load_state(self, state: dict) -> None:
        self.pools = {k: NetworkPool.from_dict(v) for k, v in state["pools"].items()}
        self.assignments = [NetworkAssignment.from_dict(a) for a in state["assignments"]]
        self.firewall_rules = {
            k: FirewallRule.from_dict(v) for k, v in state["firewall_rules"].items()
        }
        self.lb_rules = {k: LbRule.from_dict(v) for k, v in state["lb_rules"].items()}
        self.lb_pick_counts = {k: dict(v) for k, v in state["lb_pick_counts"].items()}
        self._allocated = {pid: set() for pid in self.pools}
        self._macs = set()
        for a in self.assignments:
            self._allocated.setdefault(a.pool_id, set()).add(a.ip)
            self._macs.add(a.mac)
