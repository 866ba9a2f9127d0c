"""Uniform periodic grids and densities sampled on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, GridMismatchError

__all__ = ["GridSpec", "DensityField"]


@dataclass(frozen=True)
class GridSpec:
    """One-dimensional uniform grid ``q_i = lower + i*dq``, ``i < count``.

    The grid is periodic with period ``upper - lower``; ``count`` must be a
    power of two no smaller than 64.
    """

    lower: float
    upper: float
    count: int

    def __post_init__(self):
        n = int(self.count)
        if n < 64 or n & (n - 1):
            raise DomainError(f"grid point count must be a power of two >= 64, got {self.count}")
        if not self.upper > self.lower:
            raise DomainError(f"grid upper bound {self.upper} must exceed lower bound {self.lower}")
        object.__setattr__(self, "count", n)
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def dq(self) -> float:
        return self.width / self.count

    @property
    def points(self) -> np.ndarray:
        return self.lower + self.dq * np.arange(self.count)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.count, d=self.dq)

    @property
    def cell_edges(self) -> np.ndarray:
        """Edges of the cells centred on the grid points."""
        return self.lower - 0.5 * self.dq + self.dq * np.arange(self.count + 1)

    def cell_index(self, q) -> np.ndarray:
        """Index of the cell containing ``q``; -1 outside the grid."""
        i = np.floor((np.asarray(q, dtype=float) - self.lower) / self.dq + 0.5).astype(np.int64)
        return np.where((i >= 0) & (i < self.count), i, -1)

    def coarsen(self, factor: int) -> GridSpec:
        if factor < 1 or self.count % factor:
            raise DomainError(f"cannot coarsen {self.count} points by {factor}")
        # keep cell centres aligned with the mean of the merged fine cells
        shift = 0.5 * (factor - 1) * self.dq
        return GridSpec(self.lower + shift, self.upper + shift, self.count // factor)


@dataclass(frozen=True)
class DensityField:
    """Non-negative population density sampled at the grid points."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)
    t: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.count,):
            raise DomainError(f"density has shape {v.shape}, grid expects ({self.grid.count},)")
        if np.any(v < 0):
            raise DomainError("density must be non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def cell_volume(self) -> float:
        return self.grid.dq

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.dq)

    def mean(self) -> float:
        return float(np.sum(self.grid.points * self.values) * self.grid.dq / self.integral())

    def variance(self) -> float:
        m = self.mean()
        return float(np.sum((self.grid.points - m) ** 2 * self.values) * self.grid.dq / self.integral())

    def coarsen(self, factor: int) -> DensityField:
        """Average blocks of ``factor`` neighbouring cells; integral preserved."""
        coarse = self.grid.coarsen(factor)
        return DensityField(coarse, self.values.reshape(-1, factor).mean(axis=1), self.t)

    def scaled(self, factor: float) -> DensityField:
        return DensityField(self.grid, self.values * factor, self.t)

    def __add__(self, other: DensityField) -> DensityField:
        _require_same_grid(self.grid, other.grid)
        return DensityField(self.grid, self.values + other.values, self.t)


def _require_same_grid(a: GridSpec, b: GridSpec) -> None:
    if a != b:
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")
