import json
import random

import pytest

from minicloud.config import Config
from minicloud.control import ControlPlane, digest_of
from minicloud.core import LifecycleState
from minicloud.errors import (
    CorruptSnapshot,
    Forbidden,
    MalformedCommand,
    QuotaExceeded,
    Unauthorized,
)
from minicloud.rbac import SURFACES

SPEC = {"vcpu": 1, "memory_gib": 2, "disk_gib": 10, "network_count": 1}


def admin_login(plane):
    return plane.login("admin", "admin", list(SURFACES))["token"]


def build_plane(journal_path=None, dr=False, seed=42):
    plane = ControlPlane(Config(seed=seed), journal_path=journal_path)
    tok = admin_login(plane)
    site = plane.submit("create_site", {"name": "east"}, tok)["site_id"]
    pool = plane.submit("create_pool", {"site_id": site}, tok)["pool_id"]
    for _ in range(3):
        plane.submit("add_host", {
            "site_id": site, "pool_id": pool,
            "vcpu_capacity": 32, "memory_capacity_gib": 128, "disk_capacity_gib": 2000,
        }, tok)
    for _ in range(5):
        plane.submit("add_storage_node", {"capacity_gib": 1024}, tok)
    farm_payload = {
        "name": "farm-one", "project_id": "p1", "site_id": site, "pool_id": pool,
        "quota": {"max_hosts": 16, "max_instances": 50,
                  "object_quota_gib": 100, "block_quota_gib": 2000},
    }
    extra = {"site": site, "pool": pool}
    if dr:
        west = plane.submit("create_site", {
            "name": "west", "role": "secondary", "peer_site": site,
        }, tok)["site_id"]
        wpool = plane.submit("create_pool", {"site_id": west}, tok)["pool_id"]
        for _ in range(3):
            plane.submit("add_host", {
                "site_id": west, "pool_id": wpool,
                "vcpu_capacity": 32, "memory_capacity_gib": 128, "disk_capacity_gib": 2000,
            }, tok)
        farm_payload["secondary_site_id"] = west
        farm_payload["secondary_pool_id"] = wpool
        extra.update({"west": west, "wpool": wpool})
    farm = plane.submit("create_farm", farm_payload, tok)["farm_id"]
    plane.submit("create_network_pool", {
        "site_id": site, "cidr": "10.0.0.0/24", "vlan_id": 100, "farm_id": farm,
    }, tok)
    template = plane.submit("create_template", {
        "name": "dev", "project_id": "p1", "spec": SPEC,
        "software_stack": ["ide"],
    }, tok)["template_id"]
    extra.update({"farm": farm, "template": template, "token": tok})
    return plane, extra


def provision(plane, ctx, count=1, **kw):
    payload = {"farm_id": ctx["farm"], "template_id": ctx["template"], "count": count}
    payload.update(kw)
    return plane.submit("provision", payload, ctx["token"])["instances"]


# -- basic command flow -----------------------------------------------------


def test_provision_yields_running_instances():
    plane, ctx = build_plane()
    out = provision(plane, ctx, count=3)
    assert len(out) == 3
    for d in out:
        assert d["state"] == "running"
        assert d["host_id"] is not None
    assert plane.check_invariants() == []


def test_instance_stop_start_destroy_flow():
    plane, ctx = build_plane()
    iid = provision(plane, ctx)[0]["id"]
    tok = ctx["token"]
    stopped = plane.submit("instance_action", {"instance_id": iid, "action": "stop"}, tok)
    assert stopped["instance"]["state"] == "stopped"
    assert stopped["instance"]["host_id"] is None
    started = plane.submit("instance_action", {"instance_id": iid, "action": "start"}, tok)
    assert started["instance"]["state"] == "running"
    gone = plane.submit("instance_action", {"instance_id": iid, "action": "destroy"}, tok)
    assert gone["instance"]["state"] == "destroyed"
    assert plane.network.assignments_for(iid) == []
    assert plane.check_invariants() == []


def test_instance_quota_enforced_at_provision():
    plane, ctx = build_plane()
    provision(plane, ctx, count=50)
    with pytest.raises(QuotaExceeded):
        provision(plane, ctx, count=1)


def test_unknown_command_and_malformed_payload():
    plane, ctx = build_plane()
    with pytest.raises(MalformedCommand):
        plane.submit("launch_missiles", {}, ctx["token"])
    with pytest.raises(MalformedCommand):
        plane.submit("provision", {"farm_id": ctx["farm"]}, ctx["token"])


def test_failed_command_rolls_back_all_state():
    plane, ctx = build_plane()
    provision(plane, ctx, count=2)
    before = plane.state_digest()
    with pytest.raises(QuotaExceeded):
        provision(plane, ctx, count=49)  # partial fan-out must not stick
    assert plane.state_digest() == before
    assert plane.check_invariants() == []


# -- authorization ----------------------------------------------------------


def test_missing_or_unknown_token_rejected():
    plane, ctx = build_plane()
    with pytest.raises(Unauthorized):
        plane.submit("advance_time", {"seconds": 1}, None)
    with pytest.raises(Unauthorized):
        plane.submit("advance_time", {"seconds": 1}, "bogus")


def test_plain_user_cannot_run_admin_commands():
    plane, ctx = build_plane()
    plane.submit("create_user", {
        "username": "bob", "credential": "pw", "role": "user", "project_ids": ["p1"],
    }, ctx["token"])
    bob = plane.login("bob", "pw", list(SURFACES))["token"]
    with pytest.raises(Forbidden):
        plane.submit("advance_time", {"seconds": 1}, bob)
    with pytest.raises(Forbidden):
        plane.submit("add_host", {
            "site_id": ctx["site"], "pool_id": ctx["pool"],
            "vcpu_capacity": 1, "memory_capacity_gib": 1, "disk_capacity_gib": 1,
        }, bob)


def test_user_cannot_modify_foreign_instance_but_can_own():
    plane, ctx = build_plane()
    admin_instance = provision(plane, ctx)[0]["id"]
    plane.submit("create_user", {
        "username": "bob", "credential": "pw", "role": "user", "project_ids": ["p1"],
    }, ctx["token"])
    bob = plane.login("bob", "pw", list(SURFACES))["token"]
    with pytest.raises(Forbidden):
        plane.submit("instance_action",
                     {"instance_id": admin_instance, "action": "stop"}, bob)
    own = plane.submit("provision", {
        "farm_id": ctx["farm"], "template_id": ctx["template"], "count": 1,
    }, bob)["instances"][0]["id"]
    out = plane.submit("instance_action", {"instance_id": own, "action": "stop"}, bob)
    assert out["instance"]["state"] == "stopped"
    # but bob may view everything
    got = plane.query("instances", {}, bob)
    assert admin_instance in {i["id"] for i in got["instances"]}


def test_user_outside_project_cannot_provision():
    plane, ctx = build_plane()
    plane.submit("create_user", {
        "username": "eve", "credential": "pw", "role": "user", "project_ids": ["p9"],
    }, ctx["token"])
    eve = plane.login("eve", "pw", list(SURFACES))["token"]
    with pytest.raises(Forbidden):
        plane.submit("provision", {
            "farm_id": ctx["farm"], "template_id": ctx["template"], "count": 1,
        }, eve)


def test_token_expiry_blocks_commands():
    plane, ctx = build_plane()
    plane.submit("advance_time", {"seconds": 8 * 3600.0}, ctx["token"])
    with pytest.raises(Forbidden):
        plane.submit("advance_time", {"seconds": 1}, ctx["token"])


# -- journal, snapshot, replay ----------------------------------------------


def drive_random_workload(plane, ctx, rng, steps=25):
    live = []
    for _ in range(steps):
        roll = rng.random()
        try:
            if roll < 0.45:
                out = provision(plane, ctx, count=rng.randint(1, 3))
                live.extend(d["id"] for d in out)
            elif roll < 0.6 and live:
                iid = rng.choice(live)
                action = rng.choice(["stop", "destroy"])
                plane.submit("instance_action",
                             {"instance_id": iid, "action": action}, ctx["token"])
                if action == "destroy":
                    live.remove(iid)
            elif roll < 0.75:
                plane.submit("advance_time", {"seconds": rng.randint(1, 30)}, ctx["token"])
            elif roll < 0.9:
                plane.submit("object_put", {
                    "key": f"k{rng.randint(0, 20)}", "farm_id": ctx["farm"],
                    "size_gib": 0.5, "content_hash": f"h{rng.randint(0, 99)}",
                }, ctx["token"])
            else:
                plane.submit("generate_load", {
                    "farm_id": ctx["farm"], "count": 5,
                }, ctx["token"])
        except QuotaExceeded:
            pass


def test_journal_replay_reproduces_state_digest(tmp_path):
    journal = str(tmp_path / "journal.bin")
    plane, ctx = build_plane(journal_path=journal)
    drive_random_workload(plane, ctx, random.Random(13))
    entries, dropped = ControlPlane.read_journal(journal)
    assert dropped == 0
    fresh = ControlPlane(Config(seed=42))
    fresh.replay(entries)
    assert fresh.state_digest() == plane.state_digest()


def test_replay_determinism_over_randomized_seeds(tmp_path):
    for trial in range(5):
        journal = str(tmp_path / f"j{trial}.bin")
        plane, ctx = build_plane(journal_path=journal, seed=42)
        drive_random_workload(plane, ctx, random.Random(100 + trial), steps=15)
        entries, _ = ControlPlane.read_journal(journal)
        fresh = ControlPlane(Config(seed=42))
        fresh.replay(entries)
        assert fresh.state_digest() == plane.state_digest()


def test_snapshot_round_trip(tmp_path):
    plane, ctx = build_plane()
    provision(plane, ctx, count=2)
    path = str(tmp_path / "snap.json")
    plane.snapshot(path)
    fresh = ControlPlane(Config(seed=42))
    sequence = fresh.restore(path)
    assert sequence == plane.mutation_sequence
    assert fresh.state_digest() == plane.state_digest()


def test_snapshot_plus_tail_replay(tmp_path):
    journal = str(tmp_path / "journal.bin")
    plane, ctx = build_plane(journal_path=journal)
    provision(plane, ctx, count=2)
    snap = str(tmp_path / "snap.json")
    plane.snapshot(snap)
    provision(plane, ctx, count=3)  # post-snapshot tail
    fresh = ControlPlane(Config(seed=42))
    fresh.restore(snap)
    entries, _ = ControlPlane.read_journal(journal)
    fresh.replay(entries)
    assert fresh.state_digest() == plane.state_digest()


def test_corrupt_snapshot_detected(tmp_path):
    plane, ctx = build_plane()
    path = tmp_path / "snap.json"
    plane.snapshot(str(path))
    body = json.loads(path.read_text())
    body["state"]["clock"]["now"] = 999.0  # tamper without updating digest
    path.write_text(json.dumps(body))
    with pytest.raises(CorruptSnapshot):
        ControlPlane(Config(seed=42)).restore(str(path))
    path.write_text("not json at all")
    with pytest.raises(CorruptSnapshot):
        ControlPlane(Config(seed=42)).restore(str(path))


def test_truncated_journal_drops_partial_tail(tmp_path):
    journal = tmp_path / "journal.bin"
    plane, ctx = build_plane(journal_path=str(journal))
    whole, dropped = ControlPlane.read_journal(str(journal))
    assert dropped == 0
    data = journal.read_bytes()
    journal.write_bytes(data[:-7])  # cut into the final record
    entries, dropped = ControlPlane.read_journal(str(journal))
    assert dropped > 0
    assert len(entries) == len(whole) - 1
    assert [e["sequence"] for e in entries] == list(range(1, len(whole)))


def test_journal_result_digests_match_replayed_results(tmp_path):
    journal = str(tmp_path / "journal.bin")
    plane, ctx = build_plane(journal_path=journal)
    provision(plane, ctx, count=1)
    entries, _ = ControlPlane.read_journal(journal)
    assert all(set(e) == {"sequence", "command", "result_digest"} for e in entries)
    assert [e["sequence"] for e in entries] == list(range(1, len(entries) + 1))


# -- reconciliation and failure handling ------------------------------------


def test_host_death_fails_its_instances():
    plane, ctx = build_plane()
    iid = provision(plane, ctx)[0]["id"]
    host = plane.instances[iid].host_id
    tok = ctx["token"]
    plane.submit("inject_fault", {"kind": "kill_host", "target": host}, tok)
    plane.submit("advance_time", {"seconds": 16}, tok)
    assert plane.instances[iid].state == LifecycleState.FAILED
    assert plane.instances[iid].host_id is None
    assert plane.check_invariants() == []


def test_host_drain_relocates_running_instances():
    plane, ctx = build_plane()
    ids = [d["id"] for d in provision(plane, ctx, count=6)]
    host = plane.instances[ids[0]].host_id
    out = plane.submit("drain_host", {"host_id": host}, ctx["token"])
    assert out["host_id"] == host
    for iid in ids:
        inst = plane.instances[iid]
        assert inst.state == LifecycleState.RUNNING
        assert inst.host_id != host
    assert plane.check_invariants() == []


def test_auto_failover_fires_within_one_sweep_of_detection():
    plane, ctx = build_plane(dr=True)
    ids = [d["id"] for d in provision(plane, ctx, count=4, replicated_volume=True)]
    tok = ctx["token"]
    volume_ids = [v.id for v in plane.storage.volumes.values()]
    for k, vid in enumerate(volume_ids):
        plane.submit("block_write", {
            "volume_id": vid, "block_index": k, "content_hash": f"h{k}",
        }, tok)
    plane.submit("advance_time", {"seconds": 10}, tok)
    plane.submit("inject_fault", {"kind": "kill_site", "target": ctx["site"]}, tok)
    assert plane.dr_events == []  # heartbeats not yet stale
    plane.submit("advance_time", {"seconds": 16}, tok)
    # detection threshold is 3 misses x 5 s; the same reconcile pass fails over
    assert len(plane.dr_events) == 1
    event = plane.dr_events[0]
    assert event["trigger"] == "auto"
    assert event["active_site"] == ctx["west"]
    assert sorted(event["relocated"]) == sorted(ids)
    assert event["volumes_lost"] == []
    for iid in ids:
        inst = plane.instances[iid]
        assert inst.state == LifecycleState.RUNNING
        host = plane.pools.hosts[inst.host_id]
        assert host.site_id == ctx["west"]
    # every acknowledged sync write survived the failover
    for vid in volume_ids:
        assert len(plane.storage.volumes[vid].journal) == 1
    assert plane.check_invariants() == []


def test_manual_failover_swaps_sites_and_back():
    plane, ctx = build_plane(dr=True)
    provision(plane, ctx, count=2)
    tok = ctx["token"]
    report = plane.submit("failover", {"farm_id": ctx["farm"]}, tok)
    assert report["trigger"] == "manual"
    farm = plane.farms.farms[ctx["farm"]]
    assert farm.site_id == ctx["west"]
    assert farm.secondary_site_id == ctx["site"]
    # fail back
    plane.submit("failover", {"farm_id": ctx["farm"]}, tok)
    assert plane.farms.farms[ctx["farm"]].site_id == ctx["site"]
    assert plane.check_invariants() == []


def test_unreplicated_volumes_lost_on_failover():
    plane, ctx = build_plane(dr=True)
    iid = provision(plane, ctx, count=1)[0]["id"]
    report = plane.submit("failover", {"farm_id": ctx["farm"]}, ctx["token"])
    assert len(report["volumes_lost"]) == 1
    lost = plane.storage.volumes[report["volumes_lost"][0]]
    assert lost.lost


def test_storage_node_failure_triggers_repair():
    plane, ctx = build_plane()
    tok = ctx["token"]
    plane.submit("object_put", {
        "key": "k1", "farm_id": ctx["farm"], "size_gib": 1.0, "content_hash": "h1",
    }, tok)
    victim = plane.storage.cluster.objects["k1"].replica_nodes[0]
    plane.submit("inject_fault", {"kind": "kill_node", "target": victim}, tok)
    replicas = plane.storage.cluster.objects["k1"].replica_nodes
    assert victim not in replicas
    assert len(replicas) == 3
    assert plane.query("object", {"key": "k1"}, tok)["content_hash"] == "h1"


def test_queries_require_view_access():
    plane, ctx = build_plane()
    with pytest.raises(Unauthorized):
        plane.query("farms", {}, None)
    got = plane.query("farms", {}, ctx["token"])
    assert len(got["farms"]) == 1


def test_invariants_hold_through_random_workload():
    plane, ctx = build_plane(dr=True)
    rng = random.Random(77)
    drive_random_workload(plane, ctx, rng, steps=40)
    assert plane.check_invariants() == []


# -- config -----------------------------------------------------------------


def test_config_defaults():
    cfg = Config()
    assert cfg.heartbeat_interval_s == 5.0
    assert cfg.heartbeat_miss_limit == 3
    assert cfg.vcpu_overcommit_ratio == 4.0
    assert cfg.token_ttl_s == 8 * 3600.0


def test_config_file_and_env_overrides(tmp_path):
    path = tmp_path / "conf"
    path.write_text("# comment\nheartbeat_interval_s = 2.5\napi_port=9000\n")
    cfg = Config.from_file(path, env={})
    assert cfg.heartbeat_interval_s == 2.5
    assert cfg.api_port == 9000
    cfg = Config.from_file(path, env={"MINICLOUD_API_PORT": "9100",
                                      "MINICLOUD_TEMPLATES_SHAREABLE": "true"})
    assert cfg.api_port == 9100  # env wins over file
    assert cfg.templates_shareable is True
