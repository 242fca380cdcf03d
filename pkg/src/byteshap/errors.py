"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Malformed buffers, stacks, ranges or mismatched lengths."""


class ExecutionError(RuntimeError):
    """A target could not be executed or its output could not be read."""


class TargetTimeout(ExecutionError):
    """The target exceeded its time budget."""
