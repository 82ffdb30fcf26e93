"""Exception taxonomy shared across the library.

GridError and its subclasses mark contract violations raised eagerly;
AcceptanceFailure marks a numerical result that violated a configured
ceiling (the CLI maps it to exit code 1, configuration problems to 2).
"""


class GridError(ValueError):
    """Invalid grid construction or incompatible grid operands."""


class DomainError(GridError):
    """Support or flow would leave the available grid box."""


class OrderGateError(ValueError):
    """A measured vanishing order failed a precondition gate."""


class AcceptanceFailure(RuntimeError):
    """A computed residual or certificate violated its configured ceiling."""
