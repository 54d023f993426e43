from __future__ import annotations


class MptError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidStateError(MptError, ValueError):
    pass


class ActionsExhaustedError(MptError, ValueError):
    pass


class ScoringError(MptError, ValueError):
    pass


class TreeStructureError(MptError, ValueError):
    pass


class PlannerStarvationError(MptError, RuntimeError):
    pass


class RiccatiConvergenceError(MptError, RuntimeError):
    pass


class ContactResolutionError(MptError, RuntimeError):
    pass


class ConfigError(MptError, ValueError):
    pass
