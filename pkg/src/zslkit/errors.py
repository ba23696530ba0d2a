"""Exception taxonomy shared by all zslkit modules.

Exit-code mapping used by the CLI: InputError/ConfigError (bad files, bad
flags, bad dimensions at ingestion) exit 2; NumericError (non-finite values,
failed numeric checks) exits 1.
"""


class ZslkitError(Exception):
    """Base class for all zslkit errors."""


class ShapeError(ZslkitError):
    """Operands with incompatible dimensions."""


class ConfigError(ZslkitError):
    """Invalid hyperparameter or option value."""


class InputError(ZslkitError):
    """Malformed or inconsistent input data (files, ids, dimensions)."""


class UnresolvableClassError(InputError):
    """No token of a class name was found in the word-vector table."""

    def __init__(self, names):
        self.names = list(names) if not isinstance(names, str) else [names]
        super().__init__(
            "no word vectors found for class name(s): " + ", ".join(self.names)
        )


class NumericError(ZslkitError):
    """Non-finite values or a numeric invariant violation at runtime."""


class InvariantError(ZslkitError):
    """An internal invariant that should be unreachable was violated."""
