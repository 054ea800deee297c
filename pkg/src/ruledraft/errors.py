"""Exception taxonomy shared across the package."""

from __future__ import annotations


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the declared dimensions."""


class ConfigurationError(ValueError):
    """Structurally invalid configuration value or combination."""


class PreconditionError(ValueError):
    """Input violates an operation precondition."""


class DomainError(ValueError):
    """Numeric input outside its mathematical domain beyond tolerance."""


class StructureError(ValueError):
    """Malformed rule tree: dangling leaf index or disconnected node."""


class ConsistencyError(RuntimeError):
    """Cached intermediate state does not match the inputs presented."""


class RoundError(RuntimeError):
    """Selection round cannot proceed (e.g. too few unselected candidates)."""


class TrainingError(RuntimeError):
    """Non-finite state encountered during optimization."""


class ParseError(ValueError):
    """Rule-library text rejected; carries 1-based line and column."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class RoutingError(LookupError):
    """Message addressed to an agent the bus does not know."""


class SignatureError(ValueError):
    """Message signature does not match its payload."""


class CoordinationError(ValueError):
    """Slot resolution requested with no candidates."""


class DecisionError(RuntimeError):
    """Review case is unknown or already carries a decision."""


class CheckpointError(RuntimeError):
    """Checkpoint file cannot be read back."""


class VersionError(CheckpointError):
    """Checkpoint schema version not supported by this build."""


class TruncationError(CheckpointError):
    """Checkpoint payload shorter than its manifest promises."""


class CompatibilityError(CheckpointError):
    """Checkpoint was produced under a different configuration."""
