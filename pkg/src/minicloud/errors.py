"""Error hierarchy shared by every subsystem.

Each error carries a stable machine-readable ``code`` that the HTTP layer
maps to a status and the CLI renders verbatim.
"""

from __future__ import annotations


class MiniCloudError(Exception):
    """Base class for all domain errors."""

    code = "error"
    http_status = 400

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.details = details


class Unauthorized(MiniCloudError):
    code = "unauthorized"
    http_status = 401


class Forbidden(MiniCloudError):
    code = "forbidden"
    http_status = 403


class NotFound(MiniCloudError):
    code = "not_found"
    http_status = 404


class UnknownUser(NotFound):
    code = "unknown_user"
    http_status = 401


class BadCredential(Unauthorized):
    code = "bad_credential"


class UnknownTemplate(NotFound):
    code = "unknown_template"


class UnknownInstance(NotFound):
    code = "unknown_instance"


class IllegalTransition(MiniCloudError):
    code = "illegal_transition"
    http_status = 409

    def __init__(self, current_state, event):
        super().__init__(
            f"no edge from {current_state} on event {event!r}",
            current_state=str(current_state),
            event=str(event),
        )
        self.current_state = current_state
        self.event = event


class WrongState(MiniCloudError):
    code = "wrong_state"
    http_status = 409


class DuplicateName(MiniCloudError):
    code = "duplicate_name"
    http_status = 409


class Conflict(MiniCloudError):
    code = "conflict"
    http_status = 409


class QuotaExceeded(MiniCloudError):
    code = "quota_exceeded"
    http_status = 422


class CapacityExceeded(MiniCloudError):
    code = "capacity_exceeded"
    http_status = 422


class CapacityExhausted(MiniCloudError):
    code = "capacity_exhausted"
    http_status = 422


class DrainInfeasible(MiniCloudError):
    code = "drain_infeasible"
    http_status = 422


class NoLiveHost(MiniCloudError):
    code = "no_live_host"
    http_status = 422


class HostDown(MiniCloudError):
    code = "host_down"
    http_status = 409


class CrossPoolMigration(MiniCloudError):
    code = "cross_pool_migration"
    http_status = 409


class PoolExhausted(MiniCloudError):
    code = "pool_exhausted"
    http_status = 422


class CrossFarmNetwork(MiniCloudError):
    code = "cross_farm_network"
    http_status = 403


class NoLiveBackend(MiniCloudError):
    code = "no_live_backend"
    http_status = 422


class QuorumUnavailable(MiniCloudError):
    code = "quorum_unavailable"
    http_status = 422


class SecondaryUnreachable(MiniCloudError):
    code = "secondary_unreachable"
    http_status = 422


class StandbyNotReady(MiniCloudError):
    code = "standby_not_ready"
    http_status = 409


class AlreadyActive(MiniCloudError):
    code = "already_active"
    http_status = 409


class InsufficientData(MiniCloudError):
    code = "insufficient_data"
    http_status = 422


class MalformedCommand(MiniCloudError):
    code = "malformed_command"
    http_status = 400


class CorruptSnapshot(MiniCloudError):
    code = "corrupt_snapshot"
    http_status = 500


class ScenarioParseError(MiniCloudError):
    code = "scenario_parse_error"
    http_status = 400


class InvariantViolation(MiniCloudError):
    code = "invariant_violation"
    http_status = 500
