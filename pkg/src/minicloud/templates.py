"""Template registry: pre-configured and user-built instance blueprints,
and the fan-out from one template to many Requested instances."""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import Instance, LifecycleState, ResourceSpec, WorkloadClass
from .errors import DuplicateName, UnknownTemplate


@dataclass
class Template:
    id: str
    name: str
    owner_user_id: str
    project_id: str
    origin: str  # "preconfigured" | "user_built"
    os_label: str
    software_stack: list[str]
    default_spec: ResourceSpec
    default_workload_class: WorkloadClass = WorkloadClass.DEVELOPMENT

    def __post_init__(self):
        if self.origin not in ("preconfigured", "user_built"):
            raise ValueError(f"bad origin {self.origin!r}")
        if self.origin == "preconfigured" and not self.software_stack:
            raise ValueError("preconfigured templates need a software stack")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "owner_user_id": self.owner_user_id,
            "project_id": self.project_id,
            "origin": self.origin,
            "os_label": self.os_label,
            "software_stack": list(self.software_stack),
            "default_spec": self.default_spec.to_dict(),
            "default_workload_class": self.default_workload_class.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Template":
        d = dict(d)
        d["default_spec"] = ResourceSpec.from_dict(d["default_spec"])
        d["default_workload_class"] = WorkloadClass(d["default_workload_class"])
        return cls(**d)


def merge_overrides(default: ResourceSpec, overrides: dict | None) -> ResourceSpec:
    """Apply per-instance overrides to a template spec.

    vcpu and memory may only be lowered (never below 1); raising past the
    template default is clamped to the default."""
    if not overrides:
        return default
    vcpu = min(int(overrides.get("vcpu", default.vcpu)), default.vcpu)
    mem = min(int(overrides.get("memory_gib", default.memory_gib)), default.memory_gib)
    disk = int(overrides.get("disk_gib", default.disk_gib))
    nets = int(overrides.get("network_count", default.network_count))
    return ResourceSpec(
        vcpu=max(1, vcpu),
        memory_gib=max(1, mem),
        disk_gib=max(1, disk),
        network_count=max(1, nets),
    )


class TemplateStore:
    def __init__(self):
        self.templates: dict[str, Template] = {}

    def register(self, template: Template) -> str:
        for t in self.templates.values():
            if t.project_id == template.project_id and t.name == template.name:
                raise DuplicateName(
                    f"template {template.name!r} exists in project {template.project_id}"
                )
        self.templates[template.id] = template
        return template.id

    def get(self, template_id: str) -> Template:
        try:
            return self.templates[template_id]
        except KeyError:
            raise UnknownTemplate(f"unknown template {template_id}")

    def list(self, project_id: str | None = None) -> list[Template]:
        out = sorted(self.templates.values(), key=lambda t: t.id)
        if project_id is not None:
            out = [t for t in out if t.project_id == project_id]
        return out

    def instantiate(
        self,
        template_id: str,
        count: int,
        farm_id: str,
        owner_user_id: str,
        id_source,
        now: float,
        overrides: dict | None = None,
    ) -> list[Instance]:
        """Fan a template out into `count` fresh Requested instances."""
        template = self.get(template_id)
        spec = merge_overrides(template.default_spec, overrides)
        return [
            Instance(
                id=id_source.new_id(),
                template_id=template.id,
                farm_id=farm_id,
                spec=spec,
                workload_class=template.default_workload_class,
                created_at=now,
                owner_user_id=owner_user_id,
                state=LifecycleState.REQUESTED,
            )
            for _ in range(count)
        ]

    def state_dict(self) -> dict:
        return {"templates": {k: v.to_dict() for k, v in sorted(self.templates.items())}}

    def load_state(self, state: dict) -> None:
        self.templates = {k: Template.from_dict(v) for k, v in state["templates"].items()}
