"""Shared domain primitives: ids, simulated clock, resource specs, and the
instance lifecycle state machine."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum

from .errors import IllegalTransition


class SimClock:
    """Deterministic simulated clock.  Time only moves via advance()."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> float:
        if seconds < 0:
            raise ValueError("clock cannot move backwards")
        self._now += seconds
        return self._now

    def state_dict(self) -> dict:
        return {"now": self._now}

    def load_state(self, state: dict) -> None:
        self._now = float(state["now"])


class IdGenerator:
    """Seeded, collision-free generator of 26-char lexicographically
    sortable ids.

    Layout: 10 decimal digits of a monotone counter followed by the first
    16 hex chars of sha256(seed:counter).  The counter prefix guarantees
    strict ordering; the hash tail makes ids opaque while staying fully
    reproducible from (seed, counter).
    """

    LENGTH = 26

    def __init__(self, seed: int = 0, counter: int = 0):
        self.seed = int(seed)
        self.counter = int(counter)

    def new_id(self) -> str:
        self.counter += 1
        tail = hashlib.sha256(f"{self.seed}:{self.counter}".encode()).hexdigest()[:16]
        return f"{self.counter:010d}{tail}"

    def state_dict(self) -> dict:
        return {"seed": self.seed, "counter": self.counter}

    def load_state(self, state: dict) -> None:
        self.seed = int(state["seed"])
        self.counter = int(state["counter"])


class LifecycleState(str, Enum):
    REQUESTED = "requested"
    ATTRIBUTED = "attributed"
    RUNNING = "running"
    MIGRATING = "migrating"
    STOPPED = "stopped"
    FAILED = "failed"
    DESTROYED = "destroyed"


class WorkloadClass(str, Enum):
    SERVICE = "service"
    DEVELOPMENT = "development"


LIFECYCLE_EVENTS = (
    "attribute",
    "start",
    "migrate_begin",
    "migrate_end",
    "stop",
    "fail",
    "destroy",
)

# The complete legal edge set of the lifecycle graph.
TRANSITIONS: dict[tuple[LifecycleState, str], LifecycleState] = {
    (LifecycleState.REQUESTED, "attribute"): LifecycleState.ATTRIBUTED,
    (LifecycleState.ATTRIBUTED, "start"): LifecycleState.RUNNING,
    (LifecycleState.STOPPED, "start"): LifecycleState.RUNNING,
    (LifecycleState.RUNNING, "migrate_begin"): LifecycleState.MIGRATING,
    (LifecycleState.MIGRATING, "migrate_end"): LifecycleState.RUNNING,
    (LifecycleState.RUNNING, "stop"): LifecycleState.STOPPED,
    (LifecycleState.RUNNING, "fail"): LifecycleState.FAILED,
    (LifecycleState.MIGRATING, "fail"): LifecycleState.FAILED,
    (LifecycleState.STOPPED, "destroy"): LifecycleState.DESTROYED,
    (LifecycleState.FAILED, "destroy"): LifecycleState.DESTROYED,
}

# States in which an instance must be charged to a host.
HOSTED_STATES = frozenset({LifecycleState.RUNNING, LifecycleState.MIGRATING})


@dataclass(frozen=True)
class ResourceSpec:
    """Sizing of an instance: vcpus (nominally 2 GHz each), memory, disk,
    and how many virtual networks it attaches to."""

    vcpu: int
    memory_gib: int
    disk_gib: int
    network_count: int = 1

    def __post_init__(self):
        if self.vcpu < 1:
            raise ValueError("vcpu must be >= 1")
        if self.memory_gib < 1:
            raise ValueError("memory_gib must be >= 1")
        if self.disk_gib < 1:
            raise ValueError("disk_gib must be >= 1")
        if self.network_count < 1:
            raise ValueError("network_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "vcpu": self.vcpu,
            "memory_gib": self.memory_gib,
            "disk_gib": self.disk_gib,
            "network_count": self.network_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ResourceSpec":
        return cls(**d)


@dataclass
class Instance:
    id: str
    template_id: str
    farm_id: str
    spec: ResourceSpec
    workload_class: WorkloadClass
    created_at: float
    owner_user_id: str = ""
    host_id: str | None = None
    state: LifecycleState = LifecycleState.REQUESTED
    remote_access: dict = field(default_factory=dict)
    backup_enabled: bool = False

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "template_id": self.template_id,
            "farm_id": self.farm_id,
            "spec": self.spec.to_dict(),
            "workload_class": self.workload_class.value,
            "created_at": self.created_at,
            "owner_user_id": self.owner_user_id,
            "host_id": self.host_id,
            "state": self.state.value,
            "remote_access": dict(self.remote_access),
            "backup_enabled": self.backup_enabled,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        d = dict(d)
        d["spec"] = ResourceSpec.from_dict(d["spec"])
        d["workload_class"] = WorkloadClass(d["workload_class"])
        d["state"] = LifecycleState(d["state"])
        return cls(**d)


def transition(instance: Instance, event: str) -> Instance:
    """Apply a lifecycle event, returning a new Instance record.

    Raises IllegalTransition for any (state, event) pair outside the edge
    set; the input record is left untouched.
    """
    key = (instance.state, event)
    if key not in TRANSITIONS:
        raise IllegalTransition(instance.state, event)
    new_state = TRANSITIONS[key]
    inst = replace(instance, state=new_state)
    if new_state not in HOSTED_STATES:
        inst.host_id = None
    return inst
