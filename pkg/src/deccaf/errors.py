"""Exceptions shared across the package, mapped to CLI exit codes."""

from __future__ import annotations


class ConfigError(Exception):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class InfeasibleCapacityError(Exception):
    """Capacity constraints cannot be satisfied (CLI exit code 3)."""


class DegenerateTrainingError(Exception):
    """Training data is unusable, e.g. non-finite features (CLI exit code 4)."""
