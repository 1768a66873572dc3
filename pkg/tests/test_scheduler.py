import itertools
import random

import pytest

from minicloud.core import ResourceSpec
from minicloud.errors import CapacityExhausted, DrainInfeasible
from minicloud.scheduler import (
    HostView,
    PlacementDecision,
    PlacementRequest,
    place,
    plan_drain,
)


def view(hid, vcpu=32.0, mem=128, disk=1000, up=True, draining=False, groups=()):
    return HostView(hid, up, draining, vcpu, mem, disk, frozenset(groups))


def req(iid="i1", vcpu=1, mem=1, disk=1, group=None):
    return PlacementRequest(iid, ResourceSpec(vcpu, mem, disk, 1), "farm", "pool", group)


def feasible_oracle(snapshot, spec):
    """Independent feasibility check: any up, non-draining host fits."""
    return any(
        v.up and not v.draining
        and spec.vcpu <= v.free_vcpu
        and spec.memory_gib <= v.free_memory_gib
        and spec.disk_gib <= v.free_disk_gib
        for v in snapshot
    )


def test_single_host_choice():
    assert place(req(), [view("h1")]).host_id == "h1"


def test_worst_fit_by_free_memory():
    snap = [view("h1", mem=64), view("h2", mem=100), view("h3", mem=80)]
    assert place(req(), snap).host_id == "h2"


def test_tie_breaks_by_lowest_id():
    snap = [view("h2", mem=64), view("h1", mem=64)]
    assert place(req(), snap).host_id == "h1"


def test_anti_affinity_hosts_considered_last():
    snap = [view("h1", mem=100, groups={"g"}), view("h2", mem=10)]
    assert place(req(group="g"), snap).host_id == "h2"
    # soft: when only conflicting hosts remain, they are still used
    snap2 = [view("h1", mem=100, groups={"g"})]
    assert place(req(group="g"), snap2).host_id == "h1"


def test_infeasible_request_raises():
    with pytest.raises(CapacityExhausted):
        place(req(vcpu=1000), [view("h1"), view("h2")])


def test_draining_and_down_hosts_excluded():
    snap = [view("h1", up=False), view("h2", draining=True)]
    with pytest.raises(CapacityExhausted):
        place(req(), snap)


def test_reference_farm_packs_500_dev_instances():
    # 16 hosts of 32 vcpu / 128 GiB at vcpu ratio 4.0; 500 x (1 vcpu, 2 GiB).
    # Identical-item feasibility oracle: per-host slot count is exact.
    ratio = 4.0
    hosts = {f"h{i:02d}": [32 * ratio, 128, 100_000] for i in range(16)}
    per_host_slots = min(32 * ratio // 1, 128 // 2)
    assert per_host_slots * 16 >= 500
    placed = 0
    for k in range(500):
        snap = [view(h, vcpu=c[0], mem=c[1], disk=c[2]) for h, c in hosts.items()]
        decision = place(req(f"i{k}", vcpu=1, mem=2, disk=1), snap)
        cap = hosts[decision.host_id]
        cap[0] -= 1
        cap[1] -= 2
        cap[2] -= 1
        placed += 1
    assert placed == 500
    assert all(c[0] >= 0 and c[1] >= 0 for c in hosts.values())


def test_single_request_oracle_equivalence_corpus():
    rng = random.Random(7)
    disagreements = 0
    for _ in range(500):
        n_hosts = rng.randint(1, 6)
        snap = []
        for i in range(n_hosts):
            free_v = rng.randint(0, 16)
            free_m = rng.randint(0, 32)
            snap.append(view(f"h{i}", vcpu=free_v, mem=free_m, disk=rng.randint(0, 100),
                             up=rng.random() > 0.2, draining=rng.random() < 0.1))
        spec_req = req(vcpu=rng.randint(1, 8), mem=rng.randint(1, 16), disk=rng.randint(1, 50))
        expected = feasible_oracle(snap, spec_req.spec)
        try:
            decision = place(spec_req, snap)
            got = True
            chosen = next(v for v in snap if v.host_id == decision.host_id)
            assert chosen.up and not chosen.draining
            assert spec_req.spec.memory_gib <= chosen.free_memory_gib
        except CapacityExhausted:
            got = False
        if got != expected:
            disagreements += 1
    assert disagreements == 0


def test_place_deterministic():
    snap = [view(f"h{i}", mem=64 + (i % 3)) for i in range(6)]
    first = place(req(), snap)
    assert all(place(req(), snap) == first for _ in range(10))


def exhaustive_drain_oracle(instances, capacities):
    """Try every assignment of instances to hosts; True iff any fits."""
    hosts = list(capacities)
    for combo in itertools.product(hosts, repeat=len(instances)):
        load = {h: [0, 0, 0] for h in hosts}
        for (iid, spec), h in zip(instances, combo):
            load[h][0] += spec.vcpu
            load[h][1] += spec.memory_gib
            load[h][2] += spec.disk_gib
        if all(
            load[h][0] <= capacities[h][0]
            and load[h][1] <= capacities[h][1]
            and load[h][2] <= capacities[h][2]
            for h in hosts
        ):
            return True
    return False


def test_drain_empty_host_gives_empty_plan():
    assert plan_drain("h0", [], [view("h0"), view("h1")]) == []


def test_drain_three_instances_into_tight_peers():
    instances = [
        ("a", ResourceSpec(2, 8, 10, 1)),
        ("b", ResourceSpec(2, 8, 10, 1)),
        ("c", ResourceSpec(2, 4, 10, 1)),
    ]
    caps = {"h1": (8, 12, 100), "h2": (8, 8, 100)}
    snap = [view("h0"),
            view("h1", vcpu=8, mem=12, disk=100),
            view("h2", vcpu=8, mem=8, disk=100)]
    plan = plan_drain("h0", instances, snap)
    assert len(plan) == 3
    assert exhaustive_drain_oracle(instances, caps)
    # applying the plan in order stays within capacity
    load = {h: [0, 0, 0] for h in caps}
    by_id = dict(instances)
    for d in plan:
        spec = by_id[d.instance_id]
        load[d.host_id][0] += spec.vcpu
        load[d.host_id][1] += spec.memory_gib
        load[d.host_id][2] += spec.disk_gib
        assert load[d.host_id][0] <= caps[d.host_id][0]
        assert load[d.host_id][1] <= caps[d.host_id][1]


def test_drain_infeasible_when_memory_lacking():
    instances = [("a", ResourceSpec(1, 32, 1, 1)), ("b", ResourceSpec(1, 32, 1, 1))]
    caps = {"h1": (64, 40, 100)}
    snap = [view("h0"), view("h1", vcpu=64, mem=40, disk=100)]
    assert not exhaustive_drain_oracle(instances, caps)
    with pytest.raises(DrainInfeasible):
        plan_drain("h0", instances, snap)


def test_drain_feasibility_matches_oracle_on_random_corpus():
    rng = random.Random(19)
    ffd_misses = 0
    for _ in range(200):
        n_inst = rng.randint(1, 5)
        n_hosts = rng.randint(1, 3)
        instances = [
            (f"i{k}", ResourceSpec(rng.randint(1, 4), rng.randint(1, 8), 1, 1))
            for k in range(n_inst)
        ]
        caps = {f"h{j+1}": (rng.randint(2, 10), rng.randint(2, 16), 100)
                for j in range(n_hosts)}
        snap = [view("h0")] + [
            view(h, vcpu=c[0], mem=c[1], disk=c[2]) for h, c in caps.items()
        ]
        oracle = exhaustive_drain_oracle(instances, caps)
        try:
            plan_drain("h0", instances, snap)
            got = True
        except DrainInfeasible:
            got = False
        # the greedy pass falls back to exact search at this scale, so the
        # planner must agree with the oracle in both directions
        assert got == oracle
        if oracle and not got:
            ffd_misses += 1
    assert ffd_misses == 0
