"""Desk-scale internal-cloud control plane with simulated hypervisor hosts,
replicated storage, DR failover, and workload metering."""

from .config import Config
from .control import ControlPlane

__all__ = ["Config", "ControlPlane"]
__version__ = "0.1.0"
