"""Numerical classical limit of wave mechanics and Born-rule branch populations."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import (
    BornLimitError,
    ContractError,
    DomainError,
    EmptyBranchError,
    PrematureLabelError,
    SeparationError,
    UnsupportedError,
)
from .grid import DensityField, GridSpec
from .hilbert import Direction, SpinState, rotation_between, transition_probability, wigner_small_d

__all__ = [
    "__version__",
    "BornLimitError",
    "ContractError",
    "DomainError",
    "EmptyBranchError",
    "PrematureLabelError",
    "SeparationError",
    "UnsupportedError",
    "GridSpec",
    "DensityField",
    "Direction",
    "SpinState",
    "rotation_between",
    "transition_probability",
    "wigner_small_d",
]
