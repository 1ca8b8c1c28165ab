"""Exception hierarchy shared by all modules."""


class ScatterLabError(Exception):
    """Base class for every error raised by scatterlab."""


class DomainError(ScatterLabError, ValueError):
    """A phase point (or a finite-difference stencil around it) leaves the admissible set."""


class CriticalPointError(ScatterLabError, ValueError):
    """The velocity observable vanishes (up to ``eps_crit``) at a point that must propagate."""


class ConfigurationError(ScatterLabError, ValueError):
    """Invalid system, flow or scenario configuration."""


class IntegrationError(ScatterLabError, RuntimeError):
    """Numerical integration failed (step-size underflow, non-convergent implicit solve)."""


class MaxTimeExceeded(IntegrationError):
    """An event predicate never fired within ``FlowConfig.max_time``."""


class HorizonError(IntegrationError):
    """Wave-map output changed when the free horizon was doubled."""


class CaptureSuspected(ScatterLabError):
    """The perturbed trajectory did not leave the support of the potential in time.

    Such points are inconclusive (possibly Phi-bounded), not wrong; batch drivers
    record them and move on.
    """
