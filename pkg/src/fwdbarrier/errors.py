"""Exception hierarchy shared by the solvers and the CLI."""


class FwdBarrierError(Exception):
    """Base class for all library errors."""


class DomainError(FwdBarrierError, ValueError):
    """Argument outside the region where a quantity is defined."""


class ParameterError(FwdBarrierError, ValueError):
    """Invalid model parameters, rejected at construction."""


class ConfigurationError(FwdBarrierError, ValueError):
    """Grid or run configuration that cannot be honoured."""


class GridError(ConfigurationError):
    """Mesh too coarse or degenerate for the requested stencil."""


class NumericalFailure(FwdBarrierError, ArithmeticError):
    """Singular system or breakdown during a solve."""

    def __init__(self, message, *, layer=None, step=None):
        context = []
        if layer is not None:
            context.append(f"layer={layer}")
        if step is not None:
            context.append(f"step={step}")
        if context:
            message = f"{message} ({', '.join(context)})"
        super().__init__(message)
        self.layer = layer
        self.step = step


class SequencingError(FwdBarrierError, RuntimeError):
    """Operation requested before the data it depends on was computed."""


class TruncationError(FwdBarrierError, RuntimeError):
    """Probability mass lost through the truncated domain boundary."""
