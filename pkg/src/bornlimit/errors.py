"""Exception hierarchy.

``ContractError`` covers violated numerical pre/post-conditions; the CLI maps
it to exit status 3.  ``DomainError`` additionally subclasses ``ValueError``
since it flags bad arguments.
"""


class BornLimitError(Exception):
    """Base class for every error raised by this package."""


class ContractError(BornLimitError):
    """A numerical pre- or post-condition does not hold."""


class DomainError(ContractError, ValueError):
    """An argument lies outside the domain of the operation."""


class StepSizeError(ContractError):
    """Time step too large for the split-operator phase-wrap guard."""


class EscapeError(ContractError):
    """A trajectory left the declared domain."""

    def __init__(self, message: str, exit_time: float):
        super().__init__(message)
        self.exit_time = exit_time


class CoverageError(ContractError):
    """Binning grid misses part of the ensemble's support."""

    def __init__(self, message: str, out_of_range_mass: float):
        super().__init__(message)
        self.out_of_range_mass = out_of_range_mass


class DecompositionError(ContractError):
    """Amplitude nodes cut through the bulk of a wavefunction."""

    def __init__(self, message: str, node_locations=()):
        super().__init__(message)
        self.node_locations = tuple(node_locations)


class BasisMismatchError(ContractError):
    """Spin-dependent potential is not diagonal in the spinor's basis."""


class GridMismatchError(ContractError):
    """Two fields live on different grids."""


class SeparationError(ContractError):
    """Operation requires spatially separated branches."""


class EmptyBranchError(ContractError):
    """Selected branch carries no population."""


class PrematureLabelError(ContractError):
    """A branch label was requested before the branches separated."""


class UnsupportedError(ContractError):
    """Operation only defined for a subset of inputs (e.g. spin-1/2)."""
