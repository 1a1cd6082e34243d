"""Exception types shared across the package."""


class InvalidStructureError(ValueError):
    """Bad (n, K) combinatorics or a malformed operator description."""


class InadmissiblePointError(ValueError):
    """A point (or grid node) lies outside the admissible cone.

    ``margin_index`` is the 1-based index j of the first violated
    Garding margin sigma_j, ``margins`` the margin values at the worst point
    and ``node`` the multi-index of the worst grid node when known.
    """

    def __init__(self, message, margin_index=None, margins=None, node=None):
        super().__init__(message)
        self.margin_index = margin_index
        self.margins = margins
        self.node = node


class SamplerStarvationError(RuntimeError):
    """Rejection sampling into the cone failed too often."""


class NumericalError(RuntimeError):
    """An iterative kernel failed to converge."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class FlowBreakdownError(RuntimeError):
    """Step-size halving was exhausted without finding an admissible step."""

    def __init__(self, message, t=None, margin_history=None, partial=None):
        super().__init__(message)
        self.t = t
        self.margin_history = margin_history or []
        self.partial = partial


class PositivityLossError(RuntimeError):
    """A positive solution of the linear equation became nonpositive."""


class PreconditionError(ValueError):
    """Arguments violate a documented precondition."""


class ConfigError(ValueError):
    """Configuration file failed validation."""
