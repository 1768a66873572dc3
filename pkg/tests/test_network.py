import ipaddress
import random

import pytest

from minicloud.core import Instance, LifecycleState, ResourceSpec, WorkloadClass
from minicloud.errors import (
    Conflict,
    CrossFarmNetwork,
    NoLiveBackend,
    PoolExhausted,
    WrongState,
)
from minicloud.network import (
    FirewallRule,
    LbRule,
    NetworkManager,
    NetworkPool,
    derive_mac,
    evaluate_firewall,
)


def instance(iid="i1", farm="f1", nets=1, state=LifecycleState.REQUESTED):
    return Instance(
        id=iid, template_id="t", farm_id=farm,
        spec=ResourceSpec(1, 1, 1, nets),
        workload_class=WorkloadClass.DEVELOPMENT,
        created_at=0.0, state=state,
    )


def pool(pid="n1", cidr="10.0.0.0/28", vlan=100, site="s1", farm=None):
    return NetworkPool(id=pid, site_id=site, cidr=cidr, vlan_id=vlan, farm_id=farm)


def test_mac_is_deterministic_and_prefixed():
    mac = derive_mac("abc", 0)
    assert mac == derive_mac("abc", 0)
    assert mac.startswith("02:")
    assert mac != derive_mac("abc", 1)
    assert len(mac.split(":")) == 6


def test_slash_28_has_13_usable_addresses():
    # 16 addresses, minus network + broadcast + gateway
    usable = list(pool().usable_addresses())
    assert len(usable) == 13
    assert str(usable[0]) == "10.0.0.2"  # .1 is the gateway


def test_vlan_range_enforced():
    with pytest.raises(ValueError):
        pool(vlan=99)
    with pytest.raises(ValueError):
        pool(vlan=4095)
    pool(vlan=100)
    pool(vlan=4094)


def test_overlapping_cidr_rejected():
    nm = NetworkManager()
    nm.add_pool(pool("n1", "10.0.0.0/24", 100))
    with pytest.raises(Conflict):
        nm.add_pool(pool("n2", "10.0.0.128/25", 101))


def test_duplicate_vlan_per_site_rejected():
    nm = NetworkManager()
    nm.add_pool(pool("n1", "10.0.0.0/24", 100, site="s1"))
    with pytest.raises(Conflict):
        nm.add_pool(pool("n2", "10.1.0.0/24", 100, site="s1"))
    # same vlan at another site is fine
    nm.add_pool(pool("n3", "10.2.0.0/24", 100, site="s2"))


def test_allocation_takes_lowest_free_address():
    nm = NetworkManager()
    nm.add_pool(pool())
    a = nm.attribute_networks(instance("i1"), ["n1"])[0]
    b = nm.attribute_networks(instance("i2"), ["n1"])[0]
    assert a.ip == "10.0.0.2"
    assert b.ip == "10.0.0.3"
    nm.release_instance("i1")
    c = nm.attribute_networks(instance("i3"), ["n1"])[0]
    assert c.ip == "10.0.0.2"  # freed address reused first


def test_pool_exhaustion():
    nm = NetworkManager()
    nm.add_pool(pool(cidr="10.0.0.0/29"))  # 5 usable
    for k in range(5):
        nm.attribute_networks(instance(f"i{k}"), ["n1"])
    with pytest.raises(PoolExhausted):
        nm.attribute_networks(instance("i5"), ["n1"])


def test_attribute_requires_matching_pool_count_and_state():
    nm = NetworkManager()
    nm.add_pool(pool())
    with pytest.raises(ValueError):
        nm.attribute_networks(instance(nets=2), ["n1"])
    with pytest.raises(WrongState):
        nm.attribute_networks(instance(state=LifecycleState.RUNNING), ["n1"])


def test_farm_isolated_pool_rejects_other_farm():
    nm = NetworkManager()
    nm.add_pool(pool(farm="f1"))
    nm.attribute_networks(instance(farm="f1"), ["n1"])
    with pytest.raises(CrossFarmNetwork):
        nm.attribute_networks(instance("i2", farm="f2"), ["n1"])


def test_no_duplicate_ips_or_macs_over_random_churn():
    rng = random.Random(23)
    nm = NetworkManager()
    nm.add_pool(pool("n1", "10.0.0.0/24", 100))
    nm.add_pool(pool("n2", "10.0.1.0/24", 101))
    live: list[str] = []
    for step in range(800):
        if live and rng.random() < 0.4:
            victim = live.pop(rng.randrange(len(live)))
            nm.release_instance(victim)
        else:
            iid = f"i{step}"
            try:
                nm.attribute_networks(instance(iid), [rng.choice(["n1", "n2"])])
                live.append(iid)
            except PoolExhausted:
                pass
        keyed = [(a.pool_id, a.ip) for a in nm.assignments]
        assert len(keyed) == len(set(keyed))
        macs = [a.mac for a in nm.assignments]
        assert len(macs) == len(set(macs))


def test_allocated_ip_within_pool_cidr():
    nm = NetworkManager()
    nm.add_pool(pool("n1", "192.168.4.0/26", 200))
    got = nm.attribute_networks(instance(), ["n1"])[0]
    assert ipaddress.IPv4Address(got.ip) in ipaddress.IPv4Network("192.168.4.0/26")


# -- firewall ---------------------------------------------------------------


def rule(rid, action, priority, proto="tcp", lo=1, hi=65535, cidr="0.0.0.0/0"):
    return FirewallRule(id=rid, scope="farm:f1", protocol=proto,
                        port_low=lo, port_high=hi, remote_cidr=cidr,
                        action=action, priority=priority)


def test_firewall_default_deny():
    assert evaluate_firewall([], "tcp", 80, "1.2.3.4") == "deny"


def test_firewall_first_match_by_priority():
    rules = [
        rule("r2", "deny", 20),
        rule("r1", "allow", 10, lo=80, hi=80),
    ]
    assert evaluate_firewall(rules, "tcp", 80, "1.2.3.4") == "allow"
    assert evaluate_firewall(rules, "tcp", 81, "1.2.3.4") == "deny"


def test_firewall_protocol_port_cidr_matching():
    r = rule("r", "allow", 1, proto="udp", lo=53, hi=53, cidr="10.0.0.0/8")
    assert r.matches("udp", 53, "10.1.2.3")
    assert not r.matches("tcp", 53, "10.1.2.3")
    assert not r.matches("udp", 54, "10.1.2.3")
    assert not r.matches("udp", 53, "11.1.2.3")
    any_rule = rule("a", "allow", 1, proto="any")
    assert any_rule.matches("icmp", 8, "1.1.1.1")


def test_firewall_duplicate_priority_in_scope_rejected():
    nm = NetworkManager()
    nm.add_firewall_rule(rule("r1", "allow", 5))
    with pytest.raises(Conflict):
        nm.add_firewall_rule(rule("r2", "deny", 5))


# -- load balancing ---------------------------------------------------------


def test_round_robin_cycles_live_backends_in_order():
    nm = NetworkManager()
    nm.add_lb_rule(LbRule(id="lb1", farm_id="f1", vip="10.9.9.9", port=80,
                          backend_instance_ids=["b", "a", "c"]))
    picks = [nm.lb_pick("lb1", i, {"a", "b", "c"}) for i in range(6)]
    assert picks == ["a", "b", "c", "a", "b", "c"]


def test_round_robin_skips_dead_backends():
    nm = NetworkManager()
    nm.add_lb_rule(LbRule(id="lb1", farm_id="f1", vip="10.9.9.9", port=80,
                          backend_instance_ids=["a", "b", "c"]))
    assert nm.lb_pick("lb1", 0, {"b"}) == "b"
    with pytest.raises(NoLiveBackend):
        nm.lb_pick("lb1", 1, set())


def test_least_assignments_balances_counts():
    nm = NetworkManager()
    nm.add_lb_rule(LbRule(id="lb1", farm_id="f1", vip="10.9.9.9", port=80,
                          backend_instance_ids=["a", "b"], algorithm="least_assignments"))
    picks = [nm.lb_pick("lb1", i, {"a", "b"}) for i in range(10)]
    assert picks.count("a") == picks.count("b") == 5


def test_lb_vip_collision_with_instance_ip():
    nm = NetworkManager()
    nm.add_pool(pool())
    got = nm.attribute_networks(instance(), ["n1"])[0]
    with pytest.raises(Conflict):
        nm.add_lb_rule(LbRule(id="lb1", farm_id="f1", vip=got.ip, port=80,
                              backend_instance_ids=["a"]))


def test_state_round_trip_preserves_allocations():
    nm = NetworkManager()
    nm.add_pool(pool())
    nm.attribute_networks(instance(), ["n1"])
    nm.add_firewall_rule(rule("r1", "allow", 1))
    nm.add_lb_rule(LbRule(id="lb1", farm_id="f1", vip="10.9.9.9", port=80,
                          backend_instance_ids=["a"]))
    nm.lb_pick("lb1", 0, {"a"})
    clone = NetworkManager()
    clone.load_state(nm.state_dict())
    assert clone.state_dict() == nm.state_dict()
    # restored allocator refuses the already-assigned address
    nxt = clone.attribute_networks(instance("i2"), ["n1"])[0]
    assert nxt.ip == "10.0.0.3"
