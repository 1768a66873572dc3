"""Deterministic scenario driver.

A scenario file (JSON, schema_version 1) describes sites, pools, hosts,
storage nodes, templates, farms with an instance mix, and a timed event
script.  The runner builds a fresh control plane, executes the script,
and runs the full invariant suite at every event boundary.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

from .config import Config
from .control import ControlPlane
from .errors import InvariantViolation, MiniCloudError, ScenarioParseError

ALL_SURFACES = ["framework", "image", "storage", "network_remote"]

KNOWN_EVENTS = (
    "kill_host", "revive_host", "kill_site", "revive_site", "kill_node",
    "revive_node", "drain", "load_burst", "block_writes", "object_puts",
    "provision", "failover", "stop_instances",
)


class ScenarioRunner:
    def __init__(self, scenario: dict, seed: int | None = None,
                 config: Config | None = None):
        self.scenario = scenario
        self.config = config or Config()
        if seed is not None:
            self.config.seed = seed
        elif "seed" in scenario:
            self.config.seed = int(scenario["seed"])
        self.plane = ControlPlane(self.config)
        self.token: str | None = None
        self.site_ids: dict[str, str] = {}
        self.pool_ids: dict[tuple[str, int], str] = {}
        self.host_ids: dict[tuple[str, int, int], str] = {}
        self.node_ids: list[str] = []
        self.template_ids: dict[str, str] = {}
        self.farm_ids: dict[str, str] = {}
        self.metrics: list[dict] = []
        self.violations: list[str] = []

    # -- build phase ----------------------------------------------------

    def build(self) -> None:
        sc = self.scenario
        if sc.get("schema_version") != 1:
            raise ScenarioParseError("unsupported or missing schema_version")
        self.token = self.plane.login("admin", "admin", ALL_SURFACES)["token"]
        submit = lambda name, payload: self.plane.submit(name, payload, self.token)

        for site in sc.get("sites", []):
            sid = submit("create_site", {
                "name": site["name"],
                "role": site.get("role", "primary"),
                "replication_mode": site.get("replication_mode", "sync"),
                "peer_site": self.site_ids.get(site.get("peer", "")),
            })["site_id"]
            self.site_ids[site["name"]] = sid
            for p_idx, pool in enumerate(site.get("pools", [])):
                pid = submit("create_pool", {
                    "site_id": sid,
                    "overcommit_ratio": pool.get(
                        "overcommit_ratio", self.config.vcpu_overcommit_ratio),
                })["pool_id"]
                self.pool_ids[(site["name"], p_idx)] = pid
                for h_idx, host in enumerate(pool.get("hosts", [])):
                    hid = submit("add_host", {
                        "site_id": sid, "pool_id": pid,
                        "vcpu_capacity": host["vcpu"],
                        "memory_capacity_gib": host["memory_gib"],
                        "disk_capacity_gib": host["disk_gib"],
                    })["host_id"]
                    self.host_ids[(site["name"], p_idx, h_idx)] = hid

        for node in sc.get("storage_nodes", []):
            nid = submit("add_storage_node", {"capacity_gib": node["capacity_gib"]})
            self.node_ids.append(nid["node_id"])

        for template in sc.get("templates", []):
            tid = submit("create_template", {
                "name": template["name"],
                "project_id": template.get("project_id", "default"),
                "os_label": template.get("os_label", "linux-centos6"),
                "software_stack": template.get("stack", ["base"]),
                "spec": template["spec"],
                "workload_class": template.get("workload_class", "development"),
                "origin": template.get("origin", "preconfigured"),
            })["template_id"]
            self.template_ids[template["name"]] = tid

        for farm in sc.get("farms", []):
            payload = {
                "name": farm["name"],
                "project_id": farm.get("project_id", "default"),
                "site_id": self.site_ids[farm["site"]],
                "pool_id": self.pool_ids[(farm["site"], farm.get("pool", 0))],
                "quota": farm["quota"],
            }
            if "secondary_site" in farm:
                payload["secondary_site_id"] = self.site_ids[farm["secondary_site"]]
                payload["secondary_pool_id"] = self.pool_ids[
                    (farm["secondary_site"], farm.get("secondary_pool", 0))]
            fid = submit("create_farm", payload)["farm_id"]
            self.farm_ids[farm["name"]] = fid

        for net in sc.get("network_pools", []):
            submit("create_network_pool", {
                "site_id": self.site_ids[net["site"]],
                "cidr": net["cidr"],
                "vlan_id": net["vlan_id"],
                "farm_id": self.farm_ids.get(net["farm"]) if net.get("farm") else None,
            })

        for farm in sc.get("farms", []):
            for mix in farm.get("instances", []):
                submit("provision", {
                    "template_id": self.template_ids[mix["template"]],
                    "farm_id": self.farm_ids[farm["name"]],
                    "count": mix["count"],
                    "replicated_volume": mix.get("replicated_volume", False),
                    "overrides": mix.get("overrides"),
                })
        self._checkpoint("build")

    # -- event phase ----------------------------------------------------

    def run_events(self) -> None:
        submit = lambda name, payload: self.plane.submit(name, payload, self.token)
        last_time = self.plane.clock.now()
        for event in self.scenario.get("event_script", []):
            kind = event["event"]
            if kind not in KNOWN_EVENTS:
                raise ScenarioParseError(f"unknown event {kind!r}")
            at = float(event.get("time", last_time))
            if at < last_time:
                raise ScenarioParseError("event times must be monotone")
            if at > last_time:
                submit("advance_time", {"seconds": at - last_time})
                last_time = at
            self._apply_event(kind, event)
            self._checkpoint(kind)

    def _apply_event(self, kind: str, event: dict) -> None:
        submit = lambda name, payload: self.plane.submit(name, payload, self.token)
        if kind in ("kill_host", "revive_host", "drain"):
            host_id = self.host_ids[tuple(event["host"])]
            if kind == "drain":
                submit("drain_host", {"host_id": host_id})
            else:
                submit("inject_fault", {"kind": kind, "target": host_id})
        elif kind in ("kill_site", "revive_site"):
            submit("inject_fault", {"kind": kind, "target": self.site_ids[event["site"]]})
        elif kind in ("kill_node", "revive_node"):
            submit("inject_fault", {"kind": kind, "target": self.node_ids[event["node"]]})
        elif kind == "load_burst":
            submit("generate_load", {
                "farm_id": self.farm_ids[event["farm"]],
                "interval": event.get("interval", 30.0),
                "count": event.get("count", 120),
            })
        elif kind == "block_writes":
            farm_id = self.farm_ids[event["farm"]]
            volumes = [
                v for v in self.plane.storage.volumes.values()
                if v.farm_id == farm_id and v.replicated
            ]
            count = int(event.get("count", 100))
            for i in range(count):
                volume = volumes[i % len(volumes)]
                submit("block_write", {
                    "volume_id": volume.id, "block_index": i,
                    "content_hash": f"w{i:08d}",
                })
        elif kind == "object_puts":
            farm_id = self.farm_ids[event["farm"]]
            for i in range(int(event.get("count", 10))):
                submit("object_put", {
                    "key": f"{event['farm']}/obj-{event.get('tag', 'a')}-{i}",
                    "farm_id": farm_id,
                    "size_gib": float(event.get("size_gib", 0.5)),
                    "content_hash": f"o{i:08d}",
                })
        elif kind == "provision":
            submit("provision", {
                "template_id": self.template_ids[event["template"]],
                "farm_id": self.farm_ids[event["farm"]],
                "count": int(event.get("count", 1)),
                "replicated_volume": event.get("replicated_volume", False),
            })
        elif kind == "stop_instances":
            farm_id = self.farm_ids[event["farm"]]
            running = [
                i.id for i in sorted(self.plane.instances.values(), key=lambda i: i.id)
                if i.farm_id == farm_id and i.state.value == "running"
            ][: int(event.get("count", 1))]
            for iid in running:
                submit("instance_action", {"instance_id": iid, "action": "stop"})
        elif kind == "failover":
            submit("failover", {"farm_id": self.farm_ids[event["farm"]]})

    def _checkpoint(self, label: str) -> None:
        found = self.plane.check_invariants()
        for violation in found:
            self.violations.append(f"[{label}] {violation}")
        running = sum(1 for i in self.plane.instances.values() if i.state.value == "running")
        hosts_up = sum(1 for h in self.plane.pools.hosts.values() if h.liveness.value == "up")
        self.metrics.append({
            "time": self.plane.clock.now(),
            "event": label,
            "instances_running": running,
            "hosts_up": hosts_up,
            "violations": len(found),
        })

    # -- reporting ------------------------------------------------------

    def write_metrics(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["time", "event", "instances_running", "hosts_up", "violations"])
            writer.writeheader()
            writer.writerows(self.metrics)

    def report(self) -> dict:
        return {
            "final_digest": self.plane.state_digest(),
            "events": len(self.metrics),
            "violations": list(self.violations),
            "metrics": list(self.metrics),
        }


def load_scenario(path: str | Path) -> dict:
    try:
        scenario = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioParseError(f"cannot load scenario: {exc}")
    if not isinstance(scenario, dict):
        raise ScenarioParseError("scenario must be a JSON object")
    return scenario


def run_scenario(path: str | Path, seed: int | None = None,
                 metrics_path: str | Path | None = None,
                 config: Config | None = None) -> dict:
    runner = ScenarioRunner(load_scenario(path), seed=seed, config=config)
    runner.build()
    runner.run_events()
    if metrics_path:
        runner.write_metrics(metrics_path)
    report = runner.report()
    if report["violations"]:
        raise InvariantViolation("; ".join(report["violations"]), report=report)
    return report


def main() -> None:
    import argparse

    parser = argparse.ArgumentParser(description="run a minicloud scenario")
    parser.add_argument("path")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--metrics", default=None)
    args = parser.parse_args()
    try:
        report = run_scenario(args.path, seed=args.seed, metrics_path=args.metrics)
    except InvariantViolation as exc:
        print(f"invariant violations: {exc}", file=sys.stderr)
        sys.exit(1)
    except MiniCloudError as exc:
        print(f"scenario failed: {exc.code}: {exc}", file=sys.stderr)
        sys.exit(2)
    print(json.dumps({k: report[k] for k in ("final_digest", "events")}, indent=2))


if __name__ == "__main__":
    main()
