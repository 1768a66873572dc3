"""Placement of instances onto pool hosts.

Policy: worst-fit by free memory (spreads load across the pool), ties
broken by lowest host id.  Hosts already running a member of the request's
anti-affinity group are only considered after all others.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .core import ResourceSpec
from .errors import CapacityExhausted, DrainInfeasible


@dataclass(frozen=True)
class HostView:
    """Read-only snapshot of one host's schedulable capacity."""

    host_id: str
    up: bool
    draining: bool
    free_vcpu: float
    free_memory_gib: int
    free_disk_gib: int
    group_members: frozenset[str] = frozenset()  # anti-affinity groups present


@dataclass(frozen=True)
class PlacementRequest:
    instance_id: str
    spec: ResourceSpec
    farm_id: str
    pool_id: str
    anti_affinity_group: str | None = None


@dataclass(frozen=True)
class PlacementDecision:
    instance_id: str
    host_id: str


def _feasible(view: HostView, spec: ResourceSpec) -> bool:
    return (
        view.up
        and not view.draining
        and spec.vcpu <= view.free_vcpu
        and spec.memory_gib <= view.free_memory_gib
        and spec.disk_gib <= view.free_disk_gib
    )


def place(request: PlacementRequest, snapshot: list[HostView]) -> PlacementDecision:
    candidates = [v for v in snapshot if _feasible(v, request.spec)]
    if not candidates:
        raise CapacityExhausted(
            f"no feasible host for instance {request.instance_id} in pool {request.pool_id}"
        )
    group = request.anti_affinity_group

    def rank(v: HostView):
        conflict = 1 if (group is not None and group in v.group_members) else 0
        return (conflict, -v.free_memory_gib, v.host_id)

    chosen = min(candidates, key=rank)
    return PlacementDecision(instance_id=request.instance_id, host_id=chosen.host_id)


def plan_drain(
    host_id: str,
    instances: list[tuple[str, ResourceSpec]],
    snapshot: list[HostView],
) -> list[PlacementDecision]:
    """Relocation plan for every instance on a draining host.

    Decisions are computed sequentially against a working copy of the
    snapshot so applying them in order never overshoots capacity.
    """
    working = {
        v.host_id: [v.free_vcpu, v.free_memory_gib, v.free_disk_gib]
        for v in snapshot
        if v.host_id != host_id and v.up and not v.draining
    }
    plan: list[PlacementDecision] = []
    ordered = sorted(instances, key=lambda t: (-t[1].memory_gib, t[0]))
    # Largest instances first: worst-fit-decreasing needs fewer backtracks.
    for inst_id, spec in ordered:
        views = [
            HostView(h, True, False, free[0], free[1], free[2])
            for h, free in working.items()
        ]
        try:
            decision = place(
                PlacementRequest(instance_id=inst_id, spec=spec, farm_id="", pool_id=""),
                views,
            )
        except CapacityExhausted:
            exact = _exhaustive_drain(ordered, snapshot, host_id)
            if exact is not None:
                return exact
            raise DrainInfeasible(f"no relocation target for instance {inst_id}")
        free = working[decision.host_id]
        free[0] -= spec.vcpu
        free[1] -= spec.memory_gib
        free[2] -= spec.disk_gib
        plan.append(decision)
    return plan


_EXACT_SEARCH_LIMIT = 250_000


def _exhaustive_drain(
    instances: list[tuple[str, ResourceSpec]],
    snapshot: list[HostView],
    host_id: str,
) -> list[PlacementDecision] | None:
    """Backtracking search for any feasible assignment; only used when the
    greedy pass fails and the search space is desk-sized."""
    targets = [v for v in snapshot if v.host_id != host_id and v.up and not v.draining]
    if not targets or len(targets) ** len(instances) > _EXACT_SEARCH_LIMIT:
        return None
    free = {v.host_id: [v.free_vcpu, v.free_memory_gib, v.free_disk_gib] for v in targets}
    order = sorted(free)
    assignment: list[PlacementDecision] = []

    def backtrack(index: int) -> bool:
        if index == len(instances):
            return True
        inst_id, spec = instances[index]
        for hid in order:
            cap = free[hid]
            if spec.vcpu <= cap[0] and spec.memory_gib <= cap[1] and spec.disk_gib <= cap[2]:
                cap[0] -= spec.vcpu
                cap[1] -= spec.memory_gib
                cap[2] -= spec.disk_gib
                assignment.append(PlacementDecision(inst_id, hid))
                if backtrack(index + 1):
                    return True
                assignment.pop()
                cap[0] += spec.vcpu
                cap[1] += spec.memory_gib
                cap[2] += spec.disk_gib
        return False

    return assignment if backtrack(0) else None
