"""Secure SWIPT-enabled multi-user transmission with an IRS under eavesdropping.

Modules: ``channel`` (geometry and fading), ``rates`` (rates and bounds),
``conic`` (thin modelling layer over an interior-point cone solver),
``robust_active`` (outage-constrained design against an active attacker),
``passive`` (average-rate design against a passive eavesdropper),
``checks`` (property suites) and ``harness`` (configs, sweeps, CLI).
"""
from .channel import ChannelSet, ConfigError, CsiErrorModel, SystemConfig, Topology

__all__ = ["ChannelSet", "ConfigError", "CsiErrorModel", "SystemConfig", "Topology"]
__version__ = "0.1.0"
