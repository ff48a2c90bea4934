"""Exception types shared across the package.

Invalid arguments (shape mismatches, bad config values) raise plain
ValueError; the classes here cover failures that are not caller mistakes.
"""


class NumericalFailure(RuntimeError):
    """A forward pass or training step produced NaN/Inf values."""


class CheckpointError(RuntimeError):
    """A checkpoint file is corrupt, truncated, or has an unknown version."""


class ContractViolation(RuntimeError):
    """An internal determinism or consistency guarantee was broken."""
