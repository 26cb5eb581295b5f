"""Exception taxonomy shared across the package.

``ConfigError`` and ``ContractError`` signal caller mistakes (bad config,
violated preconditions) and map to CLI exit code 1.  ``NumericalError``
covers runtime numerical failures (diverged training, failed gradient
check) and maps to exit code 2.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class ContractError(ValueError):
    """A call violated an API precondition."""


class DomainError(ContractError):
    """An argument lies outside its mathematical domain."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (non-finite loss, failed check)."""


class TrainingError(NumericalError):
    """Training diverged; carries the last finite checkpoint if any."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint
