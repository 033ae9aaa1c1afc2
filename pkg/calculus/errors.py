from typing import Optional


class CalculusError(Exception):
    """Base class for every error raised by the engine"""


class ConfigError(CalculusError, ValueError):
    """Invalid configuration, mode index, or mismatched inputs"""


class InfeasibleError(CalculusError):
    """A request exceeds a feasibility guard (dimension, node count, safe radius)"""


class QuadratureError(CalculusError):
    """Quadrature failed its exactness self-test or met a non-finite integrand"""

    def __init__(self, message: str, node_index: Optional[int] = None, required_order: Optional[int] = None):
        super().__init__(message)
        self.node_index = node_index
        self.required_order = required_order


class SymbolError(CalculusError):
    """Symbol evaluation or symbol calculus failure"""


class SymbolParseError(CalculusError, ValueError):
    """Malformed symbol text; `offset` points into the source string"""

    def __init__(self, message: str, source: str, offset: int):
        super().__init__(f"{message} at offset {offset}: {source!r}")
        self.source = source
        self.offset = offset


class ToleranceError(CalculusError):
    """A numeric acceptance check failed"""
