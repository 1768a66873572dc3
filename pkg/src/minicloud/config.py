"""Runtime configuration: defaults, key=value file loading, env overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path

ENV_PREFIX = "MINICLOUD_"


@dataclass
class Config:
    seed: int = 42
    api_host: str = "127.0.0.1"
    api_port: int = 8070
    heartbeat_interval_s: float = 5.0
    heartbeat_miss_limit: int = 3
    vcpu_overcommit_ratio: float = 4.0
    replication_factor: int = 3
    write_quorum: int = 2
    read_quorum: int = 1
    vnodes_per_node: int = 64
    token_ttl_s: float = 8 * 3600.0
    meter_retention: int = 100_000
    meter_min_samples: int = 100
    dev_vcpu_threshold: float = 0.60
    templates_shareable: bool = False

    @classmethod
    def from_file(cls, path: str | Path | None = None, env: dict | None = None) -> "Config":
        """Build a config from an optional KEY=VALUE file plus env overrides.

        Every field may be overridden by an environment variable named
        MINICLOUD_<FIELD_UPPERCASED>.
        """
        values: dict[str, str] = {}
        if path is not None:
            for line in Path(path).read_text().splitlines():
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, _, raw = line.partition("=")
                values[key.strip().lower()] = raw.strip()
        env = os.environ if env is None else env
        cfg = cls()
        for f in fields(cls):
            raw = env.get(ENV_PREFIX + f.name.upper(), values.get(f.name))
            if raw is None:
                continue
            if f.type in ("int", int):
                setattr(cfg, f.name, int(raw))
            elif f.type in ("float", float):
                setattr(cfg, f.name, float(raw))
            elif f.type in ("bool", bool):
                setattr(cfg, f.name, raw.lower() in ("1", "true", "yes", "on"))
            else:
                setattr(cfg, f.name, raw)
        return cfg

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}
