"""Exception taxonomy shared across modules; the CLI maps these to exit codes."""

from __future__ import annotations


class ContractError(ValueError):
    """A caller violated an interface precondition (bad shape, bad range)."""


class ScheduleError(ContractError):
    """A timing request falls outside the episode (e.g. injection past the end)."""


class ConfigError(ValueError):
    """Invalid or unknown configuration content. CLI exit code 2."""


class DataError(ValueError):
    """Missing or malformed files: traces, checkpoints, WAV. CLI exit code 3."""


class NumericError(ArithmeticError):
    """Non-finite values or a failed numeric gate. CLI exit code 4."""
