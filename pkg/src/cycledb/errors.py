"""Exception hierarchy for the engine.

Every error raised by cycledb derives from EngineError so embedders can
catch one type at the boundary.  Subclasses mark which layer rejected
the input.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all cycledb errors."""


class ParseError(EngineError):
    """Statement text rejected by the tokenizer or parser.

    Carries the character offset of the offending token.
    """

    def __init__(self, message, pos=None):
        if pos is not None:
            message = f"{message} (at offset {pos})"
        super().__init__(message)
        self.pos = pos


class CatalogError(EngineError):
    """Unknown table/column, duplicate attribute, bad catalog file."""


class BindError(EngineError):
    """Parameter arity or type mismatch when binding a prepared statement."""


class TypeMismatchError(EngineError):
    """Comparison or assignment between unlike non-null value types."""


class PlanError(EngineError):
    """Statement cannot be compiled or merged into the global plan."""


class StorageError(EngineError):
    """Constraint violation or protocol misuse at the storage layer."""


class ProtocolError(EngineError):
    """Operator dataflow protocol violation (engine fault, not user error).

    cycle_no is the batch cycle during which the violation was detected.
    """

    def __init__(self, message, cycle_no=None):
        if cycle_no is not None:
            message = f"cycle {cycle_no}: {message}"
        super().__init__(message)
        self.cycle_no = cycle_no


class ConfigError(EngineError):
    """Malformed workload or engine configuration."""
