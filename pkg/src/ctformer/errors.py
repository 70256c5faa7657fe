"""Shared exception types.

The CLI maps these onto exit codes: ConfigError -> 2, NumericalError -> 3.
"""


class ShapeMismatchError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class ContractError(RuntimeError):
    """A caller violated an operation's precondition."""


class ConfigError(ValueError):
    """Invalid configuration, manifest, or command-line usage."""


class NumericalError(RuntimeError):
    """Non-finite values encountered during optimization."""
