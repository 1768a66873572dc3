"""Command-line client for the control API.

JSON output mode prints the API response body verbatim; table mode is a
projection of named fields.  Exit codes: 0 success, 1 domain/connection
error, 2 usage error.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import httpx

DEFAULT_TOKEN_PATH = Path.home() / ".minicloud" / "token"


class Client:
    def __init__(self, api_url: str, token_path: Path, output: str):
        self.api_url = api_url.rstrip("/")
        self.token_path = token_path
        self.output = output

    def token(self) -> str | None:
        try:
            return self.token_path.read_text().strip()
        except OSError:
            return None

    def save_token(self, value: str) -> None:
        self.token_path.parent.mkdir(parents=True, exist_ok=True)
        self.token_path.write_text(value)
        os.chmod(self.token_path, 0o600)

    def request(self, method: str, path: str, body: dict | None = None,
                params: dict | None = None) -> dict:
        headers = {}
        token = self.token()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            response = httpx.request(
                method, self.api_url + path, json=body, params=params,
                headers=headers, timeout=60.0,
            )
        except httpx.HTTPError as exc:
            click.echo(f"connection error: {exc}", err=True)
            sys.exit(1)
        if response.status_code >= 400:
            try:
                payload = response.json()
            except ValueError:
                payload = {"error": "http_error", "message": response.text}
            click.echo(
                f"error {response.status_code} {payload.get('error')}: "
                f"{payload.get('message', '')}",
                err=True,
            )
            sys.exit(1)
        return response.json()

    def emit(self, payload: dict, rows_key: str | None = None,
             columns: list[str] | None = None) -> None:
        if self.output == "json" or rows_key is None or columns is None:
            click.echo(json.dumps(payload, indent=2, sort_keys=True))
            return
        rows = payload.get(rows_key, [])
        if not isinstance(rows, list):
            rows = [rows]
        widths = {c: max(len(c), *(len(str(_cell(r, c))) for r in rows)) if rows else len(c)
                  for c in columns}
        click.echo("  ".join(c.ljust(widths[c]) for c in columns))
        for r in rows:
            click.echo("  ".join(str(_cell(r, c)).ljust(widths[c]) for c in columns))


def _cell(row: dict, column: str):
    value = row
    for part in column.split("."):
        value = value.get(part, "") if isinstance(value, dict) else ""
    return value


@click.group()
@click.option("--api-url", default=None, help="control API base URL")
@click.option("--token-cache", default=None, type=click.Path(path_type=Path))
@click.option("--output", type=click.Choice(["table", "json"]), default="table")
@click.pass_context
def main(ctx, api_url, token_cache, output):
    """minicloud: self-service and operator client."""
    api_url = api_url or os.environ.get("MINICLOUD_API_URL", "http://127.0.0.1:8070")
    token_cache = token_cache or Path(
        os.environ.get("MINICLOUD_TOKEN_CACHE", str(DEFAULT_TOKEN_PATH))
    )
    ctx.obj = Client(api_url, token_cache, output)


@main.command()
@click.option("--username", required=True)
@click.option("--credential", required=True)
@click.option("--surfaces", default="framework,image,storage,network_remote")
@click.pass_obj
def login(client: Client, username, credential, surfaces):
    """Authenticate and cache the bearer token."""
    result = client.request("POST", "/v1/login", {
        "username": username, "credential": credential,
        "surfaces": surfaces.split(","),
    })
    client.save_token(result["token"])
    client.emit({"token": result["token"], "expires_at": result["expires_at"]})


@main.group()
def template():
    """Template registry."""


@template.command("list")
@click.option("--project-id", default=None)
@click.pass_obj
def template_list(client: Client, project_id):
    params = {"project_id": project_id} if project_id else None
    result = client.request("GET", "/v1/templates", params=params)
    client.emit(result, "templates", ["id", "name", "origin", "os_label",
                                      "default_spec.vcpu", "default_spec.memory_gib"])


@template.command("create")
@click.option("--name", required=True)
@click.option("--project-id", required=True)
@click.option("--os-label", default="linux-centos6")
@click.option("--stack", default="", help="comma-separated software stack")
@click.option("--vcpu", type=int, required=True)
@click.option("--memory-gib", type=int, required=True)
@click.option("--disk-gib", type=int, required=True)
@click.option("--networks", type=int, default=1)
@click.option("--workload-class", type=click.Choice(["service", "development"]),
              default="development")
@click.option("--origin", type=click.Choice(["preconfigured", "user_built"]),
              default="user_built")
@click.pass_obj
def template_create(client: Client, name, project_id, os_label, stack, vcpu,
                    memory_gib, disk_gib, networks, workload_class, origin):
    result = client.request("POST", "/v1/templates", {
        "name": name, "project_id": project_id, "os_label": os_label,
        "software_stack": [s for s in stack.split(",") if s],
        "spec": {"vcpu": vcpu, "memory_gib": memory_gib, "disk_gib": disk_gib,
                 "network_count": networks},
        "workload_class": workload_class, "origin": origin,
    })
    client.emit(result)


@main.group()
def farm():
    """Virtual farms."""


@farm.command("create")
@click.option("--name", required=True)
@click.option("--project-id", required=True)
@click.option("--site-id", required=True)
@click.option("--pool-id", required=True)
@click.option("--max-hosts", type=int, default=16)
@click.option("--max-instances", type=int, default=500)
@click.option("--object-quota-gib", type=float, default=1024)
@click.option("--block-quota-gib", type=float, default=5120)
@click.option("--secondary-site-id", default=None)
@click.option("--secondary-pool-id", default=None)
@click.pass_obj
def farm_create(client: Client, name, project_id, site_id, pool_id, max_hosts,
                max_instances, object_quota_gib, block_quota_gib,
                secondary_site_id, secondary_pool_id):
    result = client.request("POST", "/v1/farms", {
        "name": name, "project_id": project_id, "site_id": site_id,
        "pool_id": pool_id,
        "quota": {"max_hosts": max_hosts, "max_instances": max_instances,
                  "object_quota_gib": object_quota_gib,
                  "block_quota_gib": block_quota_gib},
        "secondary_site_id": secondary_site_id,
        "secondary_pool_id": secondary_pool_id,
    })
    client.emit(result)


@farm.command("list")
@click.pass_obj
def farm_list(client: Client):
    result = client.request("GET", "/v1/farms")
    client.emit(result, "farms", ["id", "name", "project_id", "site_id",
                                  "quota.max_instances"])


@farm.command("show")
@click.argument("farm_id")
@click.pass_obj
def farm_show(client: Client, farm_id):
    client.emit(client.request("GET", f"/v1/farms/{farm_id}"))


@main.group()
def instance():
    """Instance lifecycle."""


@instance.command("provision")
@click.option("--template", "template_id", required=True)
@click.option("--farm", "farm_id", required=True)
@click.option("--count", type=int, default=1)
@click.option("--vcpu", type=int, default=None, help="override (lower only)")
@click.option("--memory-gib", type=int, default=None, help="override (lower only)")
@click.option("--replicated-volume", is_flag=True)
@click.pass_obj
def instance_provision(client: Client, template_id, farm_id, count, vcpu,
                       memory_gib, replicated_volume):
    overrides = {}
    if vcpu is not None:
        overrides["vcpu"] = vcpu
    if memory_gib is not None:
        overrides["memory_gib"] = memory_gib
    body = {"template_id": template_id, "count": count,
            "replicated_volume": replicated_volume}
    if overrides:
        body["overrides"] = overrides
    result = client.request("POST", f"/v1/farms/{farm_id}/instances", body)
    if client.output == "table":
        for inst in result["instances"]:
            click.echo(inst["id"])
    else:
        client.emit(result)


@instance.command("list")
@click.option("--farm", "farm_id", default=None)
@click.pass_obj
def instance_list(client: Client, farm_id):
    params = {"farm_id": farm_id} if farm_id else None
    result = client.request("GET", "/v1/instances", params=params)
    client.emit(result, "instances", ["id", "state", "host_id", "workload_class",
                                      "spec.vcpu", "spec.memory_gib"])


def _action(client: Client, instance_id: str, action: str, body: dict | None = None):
    client.emit(client.request("POST", f"/v1/instances/{instance_id}/actions/{action}", body or {}))


@instance.command("start")
@click.argument("instance_id")
@click.pass_obj
def instance_start(client: Client, instance_id):
    _action(client, instance_id, "start")


@instance.command("stop")
@click.argument("instance_id")
@click.pass_obj
def instance_stop(client: Client, instance_id):
    _action(client, instance_id, "stop")


@instance.command("destroy")
@click.argument("instance_id")
@click.pass_obj
def instance_destroy(client: Client, instance_id):
    _action(client, instance_id, "destroy")


@instance.command("migrate")
@click.argument("instance_id")
@click.option("--target-host", required=True)
@click.pass_obj
def instance_migrate(client: Client, instance_id, target_host):
    _action(client, instance_id, "migrate", {"target_host_id": target_host})


@main.group()
def net():
    """Network pools and rules."""


@net.command("pools")
@click.pass_obj
def net_pools(client: Client):
    result = client.request("GET", "/v1/networks")
    client.emit(result, "pools", ["id", "cidr", "vlan_id", "farm_id", "site_id"])


@net.command("create-pool")
@click.option("--site-id", required=True)
@click.option("--cidr", required=True)
@click.option("--vlan-id", type=int, required=True)
@click.option("--farm-id", default=None)
@click.pass_obj
def net_create_pool(client: Client, site_id, cidr, vlan_id, farm_id):
    client.emit(client.request("POST", "/v1/networks", {
        "site_id": site_id, "cidr": cidr, "vlan_id": vlan_id, "farm_id": farm_id,
    }))


@net.command("rules")
@click.pass_obj
def net_rules(client: Client):
    result = client.request("GET", "/v1/firewall-rules")
    client.emit(result, "rules", ["id", "scope", "protocol", "port_low",
                                  "port_high", "action", "priority"])


@main.group()
def volume():
    """Block volumes."""


@volume.command("list")
@click.pass_obj
def volume_list(client: Client):
    result = client.request("GET", "/v1/volumes")
    client.emit(result, "volumes", ["id", "farm_id", "size_gib", "site_id",
                                    "attached_instance", "replicated"])


@volume.command("create")
@click.option("--instance", "instance_id", required=True)
@click.option("--size-gib", type=int, required=True)
@click.option("--replicated", is_flag=True)
@click.pass_obj
def volume_create(client: Client, instance_id, size_gib, replicated):
    client.emit(client.request("POST", "/v1/volumes", {
        "instance_id": instance_id, "size_gib": size_gib, "replicated": replicated,
    }))


@main.group(name="object")
def object_group():
    """Object storage."""


@object_group.command("put")
@click.argument("key")
@click.option("--farm-id", required=True)
@click.option("--size-gib", type=float, required=True)
@click.option("--content-hash", required=True)
@click.pass_obj
def object_put(client: Client, key, farm_id, size_gib, content_hash):
    client.emit(client.request("PUT", f"/v1/objects/{key}", {
        "farm_id": farm_id, "size_gib": size_gib, "content_hash": content_hash,
    }))


@object_group.command("get")
@click.argument("key")
@click.pass_obj
def object_get(client: Client, key):
    client.emit(client.request("GET", f"/v1/objects/{key}"))


@object_group.command("delete")
@click.argument("key")
@click.pass_obj
def object_delete(client: Client, key):
    client.emit(client.request("DELETE", f"/v1/objects/{key}"))


@main.command()
@click.option("--site-id", required=True)
@click.option("--farm-id", default=None)
@click.pass_obj
def failover(client: Client, site_id, farm_id):
    """Promote a standby site."""
    body = {"farm_id": farm_id} if farm_id else {}
    client.emit(client.request("POST", f"/v1/sites/{site_id}/failover", body))


@main.command()
@click.option("--start", type=float, default=0.0)
@click.option("--end", type=float, default=None)
@click.option("--workload-class", "wclass",
              type=click.Choice(["service", "development"]), default=None)
@click.pass_obj
def report(client: Client, start, end, wclass):
    """Utilization report, optionally filtered to one workload class."""
    params = {"start": start}
    if end is not None:
        params["end"] = end
    result = client.request("GET", "/v1/reports/utilization", params=params)
    rows = result["per_instance"]
    if wclass:
        rows = [r for r in rows if r["workload_class"] == wclass]
    client.emit({"per_instance": rows}, "per_instance",
                ["instance_id", "workload_class", "mean_pct", "p95_pct", "samples"])


if __name__ == "__main__":
    main()
