"""Hierarchical blockchain e-voting: simulator, recount and audit tools."""

__version__ = "0.1.0"
