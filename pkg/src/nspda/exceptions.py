"""Exception hierarchy shared by every module of the package."""


class NSPDAError(Exception):
    """Base class for all package errors."""


class InputError(NSPDAError, ValueError):
    """Malformed arguments: bad shapes, unknown tokens, empty sequences."""


class GrammarNotFoundError(NSPDAError, KeyError):
    """Requested grammar name is not a builtin."""


class GenerationExhaustedError(NSPDAError, RuntimeError):
    """Sampler could not reach the requested counts within its budget."""


class CapacityError(NSPDAError, ValueError):
    """Model too small for the request (J <= M, Jacobian over the memory cap)."""


class ProgrammingError(NSPDAError, ValueError):
    """A PDA cannot be compiled into network weights."""


class CheckpointError(NSPDAError, ValueError):
    """Checkpoint file is unreadable or has an unsupported format version."""
