"""Storage services: block volumes with site-level replication journals,
a consistent-hash replicated object store, and farm shares."""

from __future__ import annotations

import bisect
import hashlib
from dataclasses import dataclass, field

from .core import Instance, LifecycleState
from .errors import (
    NotFound,
    QuorumUnavailable,
    QuotaExceeded,
    SecondaryUnreachable,
    WrongState,
)


def _hash64(value: str) -> int:
    return int.from_bytes(hashlib.sha256(value.encode()).digest()[:8], "big")


# ---------------------------------------------------------------------------
# Block volumes and site replication
# ---------------------------------------------------------------------------


@dataclass
class BlockVolume:
    id: str
    farm_id: str
    size_gib: int
    site_id: str
    attached_instance: str | None = None
    replicated: bool = False
    secondary_site_id: str | None = None
    lost: bool = False
    # (sequence, block_index, content_hash) triples
    journal: list[list] = field(default_factory=list)
    secondary_journal: list[list] = field(default_factory=list)
    pending: list[list] = field(default_factory=list)  # async backlog

    def __post_init__(self):
        if self.size_gib < 1:
            raise ValueError("size_gib must be >= 1")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "farm_id": self.farm_id,
            "size_gib": self.size_gib,
            "site_id": self.site_id,
            "attached_instance": self.attached_instance,
            "replicated": self.replicated,
            "secondary_site_id": self.secondary_site_id,
            "lost": self.lost,
            "journal": [list(e) for e in self.journal],
            "secondary_journal": [list(e) for e in self.secondary_journal],
            "pending": [list(e) for e in self.pending],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockVolume":
        return cls(**d)


# ---------------------------------------------------------------------------
# Object store
# ---------------------------------------------------------------------------


@dataclass
class StorageNode:
    id: str
    capacity_gib: float
    used_gib: float = 0.0
    live: bool = True

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "capacity_gib": self.capacity_gib,
            "used_gib": self.used_gib,
            "live": self.live,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StorageNode":
        return cls(**d)


@dataclass
class StoredObject:
    key: str
    farm_id: str
    size_gib: float
    content_hash: str
    replica_nodes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "farm_id": self.farm_id,
            "size_gib": self.size_gib,
            "content_hash": self.content_hash,
            "replica_nodes": list(self.replica_nodes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StoredObject":
        return cls(**d)


class ObjectStoreCluster:
    """Consistent-hash ring of storage nodes with replica placement.

    Each physical node contributes `vnodes` points on the ring; a key's
    preference list is the sequence of distinct nodes met walking
    clockwise from hash(key).
    """

    def __init__(self, replication_factor: int = 3, write_quorum: int = 2,
                 read_quorum: int = 1, vnodes: int = 64):
        self.replication_factor = replication_factor
        self.write_quorum = write_quorum
        self.read_quorum = read_quorum
        self.vnodes = vnodes
        self.nodes: dict[str, StorageNode] = {}
        self.objects: dict[str, StoredObject] = {}
        self._ring: list[tuple[int, str]] = []

    # -- ring -------------------------------------------------------------

    def add_node(self, node: StorageNode) -> StorageNode:
        self.nodes[node.id] = node
        self._rebuild_ring()
        return node

    def _rebuild_ring(self) -> None:
        points = []
        for node_id in self.nodes:
            for v in range(self.vnodes):
                points.append((_hash64(f"{node_id}#{v}"), node_id))
        points.sort()
        self._ring = points

    def preference_list(self, key: str) -> list[str]:
        """Distinct node ids in clockwise ring order starting at hash(key)."""
        if not self._ring:
            return []
        start = bisect.bisect_left(self._ring, (_hash64(key), ""))
        seen: list[str] = []
        n = len(self._ring)
        for i in range(n):
            node_id = self._ring[(start + i) % n][1]
            if node_id not in seen:
                seen.append(node_id)
                if len(seen) == len(self.nodes):
                    break
        return seen

    def live_nodes(self) -> set[str]:
        return {n.id for n in self.nodes.values() if n.live}

    # -- object operations ------------------------------------------------

    def put(self, key: str, farm_id: str, size_gib: float, content_hash: str) -> StoredObject:
        live = self.live_nodes()
        targets = [n for n in self.preference_list(key) if n in live]
        if len(targets) < self.write_quorum:
            raise QuorumUnavailable(
                f"need {self.write_quorum} live replica targets, have {len(targets)}"
            )
        targets = targets[: self.replication_factor]
        if key in self.objects:
            self._drop_replicas(self.objects[key])
        obj = StoredObject(
            key=key, farm_id=farm_id, size_gib=size_gib,
            content_hash=content_hash, replica_nodes=targets,
        )
        for node_id in targets:
            self.nodes[node_id].used_gib += size_gib
        self.objects[key] = obj
        return obj

    def get(self, key: str) -> str:
        obj = self.objects.get(key)
        if obj is None:
            raise NotFound(f"no object {key!r}")
        live = self.live_nodes()
        readable = [n for n in obj.replica_nodes if n in live]
        if len(readable) < self.read_quorum:
            raise QuorumUnavailable(f"no live replica of {key!r}")
        return obj.content_hash

    def delete(self, key: str) -> StoredObject:
        obj = self.objects.pop(key, None)
        if obj is None:
            raise NotFound(f"no object {key!r}")
        self._drop_replicas(obj)
        return obj

    def _drop_replicas(self, obj: StoredObject) -> None:
        for node_id in obj.replica_nodes:
            node = self.nodes.get(node_id)
            if node is not None:
                node.used_gib = max(0.0, node.used_gib - obj.size_gib)

    def repair(self) -> list[str]:
        """Re-replicate every object short of the factor onto the next live
        preference nodes.  Returns keys still under-replicated after the
        pass (when live nodes ran out)."""
        live = self.live_nodes()
        under: list[str] = []
        for obj in self.objects.values():
            current = [n for n in obj.replica_nodes if n in live]
            if len(current) >= self.replication_factor:
                obj.replica_nodes = current[: self.replication_factor]
                continue
            for node_id in self.preference_list(obj.key):
                if len(current) >= self.replication_factor:
                    break
                if node_id in live and node_id not in current:
                    current.append(node_id)
                    self.nodes[node_id].used_gib += obj.size_gib
            obj.replica_nodes = current
            if len(current) < self.replication_factor:
                under.append(obj.key)
        return under

    def state_dict(self) -> dict:
        return {
            "replication_factor": self.replication_factor,
            "write_quorum": self.write_quorum,
            "read_quorum": self.read_quorum,
            "vnodes": self.vnodes,
            "nodes": {k: v.to_dict() for k, v in sorted(self.nodes.items())},
            "objects": {k: v.to_dict() for k, v in sorted(self.objects.items())},
        }

    def load_state(self, state: dict) -> None:
        self.replication_factor = state["replication_factor"]
        self.write_quorum = state["write_quorum"]
        self.read_quorum = state["read_quorum"]
        self.vnodes = state["vnodes"]
        self.nodes = {k: StorageNode.from_dict(v) for k, v in state["nodes"].items()}
        self.objects = {k: StoredObject.from_dict(v) for k, v in state["objects"].items()}
        self._rebuild_ring()


# ---------------------------------------------------------------------------
# Farm shares and the storage manager facade
# ---------------------------------------------------------------------------


@dataclass
class FarmShare:
    farm_id: str
    mount_label: str
    quota_gib: int
    used_gib: int = 0

    def to_dict(self) -> dict:
        return {
            "farm_id": self.farm_id,
            "mount_label": self.mount_label,
            "quota_gib": self.quota_gib,
            "used_gib": self.used_gib,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FarmShare":
        return cls(**d)


class StorageManager:
    """Facade tying volumes, the object cluster, shares, and farm quota
    ledgers together."""

    def __init__(self, cluster: ObjectStoreCluster | None = None):
        self.cluster = cluster or ObjectStoreCluster()
        self.volumes: dict[str, BlockVolume] = {}
        self.shares: dict[str, FarmShare] = {}
        # farm id -> {"block_quota", "block_used", "object_quota", "object_used"}
        self.farm_ledgers: dict[str, dict[str, float]] = {}

    def set_farm_budget(self, farm_id: str, block_quota_gib: float, object_quota_gib: float) -> None:
        ledger = self.farm_ledgers.setdefault(
            farm_id, {"block_used": 0.0, "object_used": 0.0}
        )
        ledger["block_quota"] = block_quota_gib
        ledger["object_quota"] = object_quota_gib

    def _ledger(self, farm_id: str) -> dict[str, float]:
        try:
            return self.farm_ledgers[farm_id]
        except KeyError:
            raise NotFound(f"no storage budget for farm {farm_id}")

    # -- block volumes ----------------------------------------------------

    def assign_block(
        self,
        instance: Instance,
        size_gib: int,
        volume_id: str,
        site_id: str,
        replicated: bool = False,
        secondary_site_id: str | None = None,
    ) -> BlockVolume:
        if instance.state not in (LifecycleState.REQUESTED, LifecycleState.ATTRIBUTED):
            raise WrongState(f"instance {instance.id} is {instance.state.value}")
        ledger = self._ledger(instance.farm_id)
        if ledger["block_used"] + size_gib > ledger["block_quota"]:
            raise QuotaExceeded(
                f"farm {instance.farm_id} block quota {ledger['block_quota']} GiB exceeded"
            )
        volume = BlockVolume(
            id=volume_id,
            farm_id=instance.farm_id,
            size_gib=size_gib,
            site_id=site_id,
            attached_instance=instance.id,
            replicated=replicated,
            secondary_site_id=secondary_site_id if replicated else None,
        )
        ledger["block_used"] += size_gib
        self.volumes[volume.id] = volume
        return volume

    def release_volumes(self, instance_id: str) -> None:
        for volume in self.volumes.values():
            if volume.attached_instance == instance_id:
                volume.attached_instance = None

    def delete_volume(self, volume_id: str) -> None:
        volume = self.volumes.pop(volume_id, None)
        if volume is None:
            raise NotFound(f"unknown volume {volume_id}")
        self.farm_ledgers[volume.farm_id]["block_used"] -= volume.size_gib

    def block_replicate(
        self,
        volume_id: str,
        block_index: int,
        content_hash: str,
        mode: str = "sync",
        secondary_up: bool = True,
    ) -> int:
        """Append one write to a replicated volume's journal(s).

        Returns the acknowledged sequence number.  sync: both journals
        carry the write before the ack; a down secondary fails the write.
        async: primary is acked immediately and the secondary drains later.
        """
        volume = self.volumes.get(volume_id)
        if volume is None:
            raise NotFound(f"unknown volume {volume_id}")
        if not volume.replicated:
            raise WrongState(f"volume {volume_id} is not replicated")
        sequence = len(volume.journal) + 1
        entry = [sequence, block_index, content_hash]
        if mode == "sync":
            if not secondary_up:
                raise SecondaryUnreachable(f"secondary of volume {volume_id} is down")
            volume.journal.append(entry)
            volume.secondary_journal.append(entry)
        else:
            volume.journal.append(entry)
            if secondary_up:
                self.drain_pending(volume_id)
                volume.secondary_journal.append(entry)
            else:
                volume.pending.append(entry)
        return sequence

    def drain_pending(self, volume_id: str) -> int:
        """Flush the async backlog to the secondary journal; returns the
        number of entries drained."""
        volume = self.volumes[volume_id]
        drained = len(volume.pending)
        volume.secondary_journal.extend(volume.pending)
        volume.pending.clear()
        return drained

    # -- object facade (adds farm quota on top of the cluster) ------------

    def object_put(self, key: str, farm_id: str, size_gib: float, content_hash: str) -> StoredObject:
        ledger = self._ledger(farm_id)
        previous = self.cluster.objects.get(key)
        credit = previous.size_gib if previous is not None and previous.farm_id == farm_id else 0.0
        if ledger["object_used"] - credit + size_gib > ledger["object_quota"]:
            raise QuotaExceeded(
                f"farm {farm_id} object quota {ledger['object_quota']} GiB exceeded"
            )
        obj = self.cluster.put(key, farm_id, size_gib, content_hash)
        ledger["object_used"] += size_gib - credit
        return obj

    def object_get(self, key: str) -> str:
        return self.cluster.get(key)

    def object_delete(self, key: str) -> None:
        obj = self.cluster.delete(key)
        self.farm_ledgers[obj.farm_id]["object_used"] -= obj.size_gib

    # -- shares -----------------------------------------------------------

    def create_share(self, farm_id: str, mount_label: str, quota_gib: int) -> FarmShare:
        share = FarmShare(farm_id=farm_id, mount_label=mount_label, quota_gib=quota_gib)
        self.shares[farm_id] = share
        return share

    # -- persistence ------------------------------------------------------

    def state_dict(self) -> dict:
        return {
            "cluster": self.cluster.state_dict(),
            "volumes": {k: v.to_dict() for k, v in sorted(self.volumes.items())},
            "shares": {k: v.to_dict() for k, v in sorted(self.shares.items())},
            "farm_ledgers": {k: dict(sorted(v.items())) for k, v in sorted(self.farm_ledgers.items())},
        }

    def load_state(self, state: dict) -> None:
        self.cluster.load_state(state["cluster"])
        self.volumes = {k: BlockVolume.from_dict(v) for k, v in state["volumes"].items()}
        self.shares = {k: FarmShare.from_dict(v) for k, v in state["shares"].items()}
        self.farm_ledgers = {k: dict(v) for k, v in state["farm_ledgers"].items()}
