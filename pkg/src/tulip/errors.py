"""Structured exception types shared across the package."""


class TulipError(Exception):
    """Base class for all package errors."""


class ShapeError(TulipError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        detail = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {detail}")


class NonFiniteError(TulipError):
    """An operation received or produced non-finite values."""


class GraphError(TulipError):
    """Invalid use of a computation record (bad output, unknown input)."""


class SceneError(TulipError):
    """Invalid scene specification, render request, or edit."""


class ProviderError(TulipError):
    """A generative-view provider failed to produce a response."""


class ConfigError(TulipError):
    """Malformed training configuration."""


class CheckpointError(TulipError):
    """Corrupt or incompatible checkpoint archive."""


class EvalError(TulipError):
    """Invalid evaluation request (empty split, degenerate classes, ...)."""
