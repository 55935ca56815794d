"""Exception types shared across the package."""


class OffrouteError(Exception):
    """Base class for all package errors."""


class LoopError(OffrouteError):
    """A forwarding strategy contains a data or result routing cycle."""


class InfeasibleError(OffrouteError):
    """No finite-cost solution exists under the given restrictions."""


class InitError(OffrouteError):
    """No finite-cost loop-free starting strategy could be constructed."""


class InfeasibleAfterEvent(InfeasibleError):
    """An injected event left some demand without a feasible route."""


class DegenerateError(OffrouteError):
    """An interpolated state hit a zero-traffic reflection point."""


class ParamError(OffrouteError):
    """Impossible generator or configuration parameters."""


class ZeroDenominatorError(OffrouteError):
    """A ratio metric was requested with no injected traffic."""


class ConfigError(OffrouteError):
    """Invalid experiment configuration."""
