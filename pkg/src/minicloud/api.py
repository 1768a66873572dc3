"""HTTP face of the control plane: JSON over HTTP/1.1 with bearer tokens.

All mutations are funnelled through a single lock so the command loop
stays serialized no matter how many connections the server handles.
"""

from __future__ import annotations

import threading

from fastapi import Depends, FastAPI, Header, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .config import Config
from .control import ControlPlane
from .errors import MiniCloudError, NotFound


def create_app(plane: ControlPlane | None = None, config: Config | None = None) -> FastAPI:
    plane = plane or ControlPlane(config or Config())
    app = FastAPI(title="minicloud", version="0.1.0")
    app.state.plane = plane
    app.state.lock = threading.Lock()
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    @app.exception_handler(MiniCloudError)
    async def domain_error(request: Request, exc: MiniCloudError):
        return JSONResponse(
            status_code=exc.http_status,
            content={"error": exc.code, "message": str(exc), "details": exc.details},
        )

    def bearer(authorization: str | None = Header(default=None)) -> str | None:
        if authorization and authorization.lower().startswith("bearer "):
            return authorization[7:]
        return None

    def run(name: str, payload: dict, token: str | None) -> dict:
        with app.state.lock:
            return plane.submit(name, payload, token)

    def ask(name: str, payload: dict, token: str | None) -> dict:
        with app.state.lock:
            return plane.query(name, payload, token)

    # -- auth -----------------------------------------------------------

    @app.post("/v1/login")
    async def login(body: dict):
        with app.state.lock:
            return plane.login(
                body["username"], body["credential"],
                body.get("surfaces", ["framework", "image", "storage", "network_remote"]),
            )

    # -- templates ------------------------------------------------------

    @app.get("/v1/templates")
    async def list_templates(project_id: str | None = None, token=Depends(bearer)):
        return ask("templates", {"project_id": project_id}, token)

    @app.post("/v1/templates", status_code=201)
    async def create_template(body: dict, token=Depends(bearer)):
        return run("create_template", body, token)

    # -- farms and instances -------------------------------------------

    @app.get("/v1/farms")
    async def list_farms(token=Depends(bearer)):
        return ask("farms", {}, token)

    @app.post("/v1/farms", status_code=201)
    async def create_farm(body: dict, token=Depends(bearer)):
        return run("create_farm", body, token)

    @app.get("/v1/farms/{farm_id}")
    async def get_farm(farm_id: str, token=Depends(bearer)):
        return ask("farm", {"farm_id": farm_id}, token)

    @app.get("/v1/farms/{farm_id}/instances")
    async def farm_instances(farm_id: str, token=Depends(bearer)):
        return ask("instances", {"farm_id": farm_id}, token)

    @app.post("/v1/farms/{farm_id}/instances", status_code=201)
    async def provision(farm_id: str, body: dict, token=Depends(bearer)):
        return run("provision", {**body, "farm_id": farm_id}, token)

    @app.get("/v1/instances")
    async def list_instances(farm_id: str | None = None, token=Depends(bearer)):
        return ask("instances", {"farm_id": farm_id}, token)

    @app.get("/v1/instances/{instance_id}")
    async def get_instance(instance_id: str, token=Depends(bearer)):
        return ask("instance", {"instance_id": instance_id}, token)

    @app.post("/v1/instances/{instance_id}/actions/{action}")
    async def instance_action(instance_id: str, action: str, body: dict | None = None,
                              token=Depends(bearer)):
        body = body or {}
        if action == "migrate":
            return run("migrate_instance",
                       {"instance_id": instance_id, "target_host_id": body["target_host_id"]},
                       token)
        if action == "remote-access":
            return run("assign_remote_access",
                       {"instance_id": instance_id, "services": body["services"]}, token)
        return run("instance_action", {"instance_id": instance_id, "action": action}, token)

    # -- networking -----------------------------------------------------

    @app.get("/v1/networks")
    async def list_networks(token=Depends(bearer)):
        return ask("networks", {}, token)

    @app.post("/v1/networks", status_code=201)
    async def create_network_pool(body: dict, token=Depends(bearer)):
        return run("create_network_pool", body, token)

    @app.get("/v1/firewall-rules")
    async def list_firewall_rules(token=Depends(bearer)):
        return ask("firewall_rules", {}, token)

    @app.post("/v1/firewall-rules", status_code=201)
    async def add_firewall_rule(body: dict, token=Depends(bearer)):
        return run("add_firewall_rule", body, token)

    @app.get("/v1/lb-rules")
    async def list_lb_rules(token=Depends(bearer)):
        return ask("lb_rules", {}, token)

    @app.post("/v1/lb-rules", status_code=201)
    async def add_lb_rule(body: dict, token=Depends(bearer)):
        return run("add_lb_rule", body, token)

    # -- storage --------------------------------------------------------

    @app.get("/v1/volumes")
    async def list_volumes(token=Depends(bearer)):
        return ask("volumes", {}, token)

    @app.post("/v1/volumes", status_code=201)
    async def create_volume(body: dict, token=Depends(bearer)):
        return run("create_volume", body, token)

    @app.post("/v1/volumes/{volume_id}/writes")
    async def block_write(volume_id: str, body: dict, token=Depends(bearer)):
        return run("block_write", {**body, "volume_id": volume_id}, token)

    @app.get("/v1/objects")
    async def list_objects(token=Depends(bearer)):
        return ask("objects", {}, token)

    @app.put("/v1/objects/{key}", status_code=201)
    async def object_put(key: str, body: dict, token=Depends(bearer)):
        return run("object_put", {**body, "key": key}, token)

    @app.get("/v1/objects/{key}")
    async def object_get(key: str, token=Depends(bearer)):
        return ask("object", {"key": key}, token)

    @app.delete("/v1/objects/{key}")
    async def object_delete(key: str, token=Depends(bearer)):
        return run("object_delete", {"key": key}, token)

    # -- sites, DR, admin ----------------------------------------------

    @app.get("/v1/sites")
    async def list_sites(token=Depends(bearer)):
        return ask("sites", {}, token)

    @app.post("/v1/sites", status_code=201)
    async def create_site(body: dict, token=Depends(bearer)):
        return run("create_site", body, token)

    @app.post("/v1/sites/{site_id}/failover")
    async def failover(site_id: str, body: dict | None = None, token=Depends(bearer)):
        body = body or {}
        farm_id = body.get("farm_id")
        if farm_id is None:
            with app.state.lock:
                matches = [
                    f.id for f in plane.farms.farms.values()
                    if f.secondary_site_id == site_id or f.site_id == site_id
                ]
            if not matches:
                raise NotFound(f"no farm paired with site {site_id}")
            farm_id = matches[0]
        return run("failover", {"farm_id": farm_id}, token)

    @app.get("/v1/dr-events")
    async def dr_events(token=Depends(bearer)):
        return ask("dr_events", {}, token)

    @app.get("/v1/pools")
    async def list_pools(token=Depends(bearer)):
        return ask("pools", {}, token)

    @app.post("/v1/pools", status_code=201)
    async def create_pool(body: dict, token=Depends(bearer)):
        return run("create_pool", body, token)

    @app.get("/v1/hosts")
    async def list_hosts(token=Depends(bearer)):
        return ask("hosts", {}, token)

    @app.post("/v1/hosts", status_code=201)
    async def add_host(body: dict, token=Depends(bearer)):
        return run("add_host", body, token)

    @app.post("/v1/hosts/{host_id}/drain")
    async def drain_host(host_id: str, token=Depends(bearer)):
        return run("drain_host", {"host_id": host_id}, token)

    @app.get("/v1/users")
    async def list_users(token=Depends(bearer)):
        return ask("users", {}, token)

    @app.post("/v1/users", status_code=201)
    async def create_user(body: dict, token=Depends(bearer)):
        return run("create_user", body, token)

    @app.post("/v1/storage-nodes", status_code=201)
    async def add_storage_node(body: dict, token=Depends(bearer)):
        return run("add_storage_node", body, token)

    @app.post("/v1/faults")
    async def inject_fault(body: dict, token=Depends(bearer)):
        return run("inject_fault", body, token)

    @app.post("/v1/clock/advance")
    async def advance_time(body: dict, token=Depends(bearer)):
        return run("advance_time", body, token)

    @app.post("/v1/load")
    async def generate_load(body: dict, token=Depends(bearer)):
        return run("generate_load", body, token)

    @app.post("/v1/samples", status_code=201)
    async def ingest_sample(body: dict, token=Depends(bearer)):
        return run("ingest_sample", body, token)

    @app.get("/v1/reports/utilization")
    async def utilization(start: float = 0.0, end: float | None = None, token=Depends(bearer)):
        payload = {"start": start}
        if end is not None:
            payload["end"] = end
        return ask("report", payload, token)

    @app.get("/v1/reports/utilization.csv")
    async def utilization_csv(start: float = 0.0, end: float | None = None, token=Depends(bearer)):
        payload = {"start": start}
        if end is not None:
            payload["end"] = end
        report = ask("report", payload, token)
        return Response(content=report["csv"], media_type="text/csv")

    return app


def main() -> None:
    import argparse

    import uvicorn

    parser = argparse.ArgumentParser(description="minicloud API server")
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--host", default=None)
    parser.add_argument("--port", type=int, default=None)
    parser.add_argument("--journal", default=None, help="journal file path")
    args = parser.parse_args()
    config = Config.from_file(args.config)
    if args.host:
        config.api_host = args.host
    if args.port:
        config.api_port = args.port
    plane = ControlPlane(config, journal_path=args.journal)
    uvicorn.run(create_app(plane), host=config.api_host, port=config.api_port,
                log_level="warning")


if __name__ == "__main__":
    main()
