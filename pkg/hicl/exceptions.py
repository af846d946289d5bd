"""Exception types raised by the HiCL engine.

Every error subclasses ``ValueError`` so callers that only care about
"bad input" can keep catching that, while the CLI can tell data problems
apart from programming errors through ``HiclError``.
"""

from typing import Optional


class HiclError(ValueError):
    """Root of all engine errors"""


class DimensionError(HiclError):
    """Operand shapes do not agree"""


class ParameterError(HiclError):
    """A scalar parameter is outside its allowed range"""


class ContractError(HiclError):
    """An operation was called outside its contract (e.g. non-scalar loss)"""


class NonFiniteError(HiclError):
    """A tensor received NaN or Inf values"""


class ConfigError(HiclError):
    """Run or model configuration is invalid"""


class DataError(HiclError):
    """Dataset content or location is invalid"""


class FormatError(DataError):
    """Binary file does not follow its declared format"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class RoutingError(HiclError):
    """Gating cannot produce a decision (e.g. every prototype is cold)"""


class ProtocolError(HiclError):
    """Continual-learning protocol violated (task order, sealed data)"""


class CheckpointError(HiclError):
    """Checkpoint archive is malformed or does not match the model"""
