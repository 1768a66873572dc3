import pytest

from minicloud.core import Instance, LifecycleState, ResourceSpec, WorkloadClass
from minicloud.errors import AlreadyActive, NotFound, QuotaExceeded, WrongState
from minicloud.farm import (
    Farm,
    FarmManager,
    FarmQuota,
    Site,
    SiteRole,
    SiteStatus,
)


def quota(**kw):
    base = dict(max_hosts=16, max_instances=500, object_quota_gib=1024, block_quota_gib=5120)
    base.update(kw)
    return FarmQuota(**base)


def build_manager(replication_mode="sync"):
    fm = FarmManager()
    fm.add_site(Site(id="east", name="east", role=SiteRole.PRIMARY,
                     status=SiteStatus.ACTIVE, replication_mode=replication_mode,
                     peer_site="west"))
    fm.add_site(Site(id="west", name="west", role=SiteRole.SECONDARY,
                     status=SiteStatus.STANDBY, replication_mode=replication_mode,
                     peer_site="east"))
    fm.add_farm(Farm(id="f1", name="farm-one", project_id="p1",
                     site_id="east", pool_id="pool1", quota=quota(),
                     secondary_site_id="west", secondary_pool_id="pool2"))
    return fm


def instance(iid="i1", state=LifecycleState.ATTRIBUTED):
    return Instance(
        id=iid, template_id="t", farm_id="f1",
        spec=ResourceSpec(1, 1, 1, 1),
        workload_class=WorkloadClass.DEVELOPMENT,
        created_at=0.0, state=state,
    )


def test_instance_quota_boundary():
    fm = build_manager()
    fm.check_instance_quota("f1", 499, 1)
    with pytest.raises(QuotaExceeded):
        fm.check_instance_quota("f1", 500, 1)
    with pytest.raises(QuotaExceeded):
        fm.check_instance_quota("f1", 450, 51)
    with pytest.raises(NotFound):
        fm.check_instance_quota("ghost", 0, 1)


def test_vlan_allocation_never_repeats():
    fm = FarmManager()
    a = fm.allocate_vlans(3)
    b = fm.allocate_vlans(2)
    assert a & b == set()
    assert min(a) == 100


def test_remote_access_labels_per_service():
    fm = build_manager()
    inst = fm.assign_remote_access(instance(), ["agent", "vdi"])
    assert inst.remote_access == {
        "agent": "agent://console/i1",
        "vdi": "vdi://console/i1",
    }
    with pytest.raises(ValueError):
        fm.assign_remote_access(instance("i2"), ["telnet"])
    with pytest.raises(WrongState):
        fm.assign_remote_access(instance("i3", LifecycleState.STOPPED), ["agent"])


def test_site_heartbeats_and_sweep_threshold():
    fm = build_manager()
    fm.record_site_heartbeats(0.0)
    # exactly at the threshold is still fresh: stale requires strict excess
    assert fm.sweep_sites(15.0, miss_limit=3, interval=5.0) == []
    failed = fm.sweep_sites(15.1, miss_limit=3, interval=5.0)
    assert set(failed) == {"east", "west"}
    # already-failed sites are not reported again
    assert fm.sweep_sites(30.0, miss_limit=3, interval=5.0) == []


def test_dead_site_stops_heartbeating():
    fm = build_manager()
    fm.record_site_heartbeats(0.0)
    fm.sites["east"].alive = False
    fm.record_site_heartbeats(10.0)
    assert fm.sites["east"].last_heartbeat == 0.0
    assert fm.sites["west"].last_heartbeat == 10.0
    assert fm.sweep_sites(16.0, 3, 5.0) == ["east"]


def test_replicate_tick_catches_up_and_tracks_lag():
    fm = build_manager(replication_mode="async")
    farm = fm.farms["f1"]
    out = fm.replicate_tick(farm, current_sequence=7, secondary_up=True)
    assert out == {"farm_id": "f1", "from": 0, "to": 7, "lag": 0}
    assert farm.standby_sequence == 7
    # nothing new: lag stays zero
    out = fm.replicate_tick(farm, 7, True)
    assert out["lag"] == 0
    # secondary down in async mode grows the lag but does not degrade
    out = fm.replicate_tick(farm, 12, False)
    assert out["lag"] == 5
    assert farm.replication_lag == 5
    assert not farm.degraded
    # back up: drains fully
    out = fm.replicate_tick(farm, 12, True)
    assert (out["from"], out["to"], out["lag"]) == (7, 12, 0)
    assert farm.replication_lag == 0


def test_sync_mode_down_secondary_marks_farm_degraded():
    fm = build_manager(replication_mode="sync")
    farm = fm.farms["f1"]
    fm.replicate_tick(farm, 3, False)
    assert farm.degraded
    fm.replicate_tick(farm, 3, True)
    assert not farm.degraded


def test_promote_secondary_flips_site_pair():
    fm = build_manager()
    fm.sites["east"].status = SiteStatus.FAILED
    primary, secondary = fm.promote_secondary(fm.farms["f1"])
    assert primary.status == SiteStatus.FAILED
    assert secondary.status == SiteStatus.ACTIVE
    # idempotence guard
    with pytest.raises(AlreadyActive):
        fm.promote_secondary(fm.farms["f1"])


def test_planned_promotion_demotes_healthy_primary_to_standby():
    fm = build_manager()
    primary, secondary = fm.promote_secondary(fm.farms["f1"])
    assert primary.status == SiteStatus.STANDBY
    assert secondary.status == SiteStatus.ACTIVE


def test_promote_requires_secondary():
    fm = build_manager()
    fm.add_farm(Farm(id="f2", name="solo", project_id="p1",
                     site_id="east", pool_id="pool1", quota=quota()))
    with pytest.raises(WrongState):
        fm.promote_secondary(fm.farms["f2"])


def test_exactly_one_active_site_through_promotion():
    fm = build_manager()
    def active():
        return [s.id for s in fm.sites.values() if s.status == SiteStatus.ACTIVE]
    assert active() == ["east"]
    fm.sites["east"].status = SiteStatus.FAILED
    fm.promote_secondary(fm.farms["f1"])
    assert active() == ["west"]


def test_quota_validation():
    with pytest.raises(ValueError):
        quota(max_instances=-1)


def test_state_round_trip():
    fm = build_manager()
    fm.allocate_vlans(4)
    clone = FarmManager()
    clone.load_state(fm.state_dict())
    assert clone.state_dict() == fm.state_dict()
    assert clone.allocate_vlans(1) == fm.allocate_vlans(1)
