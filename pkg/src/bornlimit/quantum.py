"""Exact Schroedinger evolution on periodic grids (split-operator / Strang).

Wavefunctions are immutable values; every step returns a new one.  hbar and
mass travel with the wavefunction rather than living in module globals, so
that the classical limit can be approached by varying hbar alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .classical import PotentialField
from .errors import BasisMismatchError, DomainError, StepSizeError
from .grid import DensityField, GridSpec
from .hilbert import Direction, SpinState, rotation_between, sigma_index, twice

__all__ = [
    "GridWaveFunction",
    "SpinorWaveFunction",
    "SpinPotential",
    "SplitOperator",
    "gaussian_packet",
    "step_split_operator",
    "evolve",
    "product_state",
    "step_spinor",
    "evolve_spinor",
    "rebase_spinor",
    "density",
    "PHASE_WRAP_LIMIT",
    "SUPPORT_FLOOR",
]

PHASE_WRAP_LIMIT = 0.5
# amplitudes below this fraction of the peak do not count as support
SUPPORT_FLOOR = 1e-8


@dataclass(frozen=True)
class GridWaveFunction:
    grid: GridSpec
    psi: np.ndarray = field(repr=False)
    hbar: float = 1.0
    mass: float = 1.0
    t: float = 0.0

    def __post_init__(self):
        a = np.array(self.psi, dtype=complex)
        if a.shape != (self.grid.count,):
            raise DomainError(f"amplitudes have shape {a.shape}, grid expects ({self.grid.count},)")
        if self.hbar <= 0 or self.mass <= 0:
            raise DomainError("hbar and mass must be positive")
        a.setflags(write=False)
        object.__setattr__(self, "psi", a)

    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.grid.dq)

    def normalized(self) -> GridWaveFunction:
        return replace(self, psi=self.psi / np.sqrt(self.norm()))

    def inner(self, other: GridWaveFunction) -> complex:
        return complex(np.vdot(self.psi, other.psi) * self.grid.dq)

    def mean_position(self) -> float:
        rho = np.abs(self.psi) ** 2
        return float(np.sum(self.grid.points * rho) / np.sum(rho))

    def position_variance(self) -> float:
        rho = np.abs(self.psi) ** 2
        m = np.sum(self.grid.points * rho) / np.sum(rho)
        return float(np.sum((self.grid.points - m) ** 2 * rho) / np.sum(rho))

    def mean_momentum(self) -> float:
        """Expectation of ``p`` from the discrete Fourier spectrum."""
        phi = np.abs(np.fft.fft(self.psi)) ** 2
        return float(self.hbar * np.sum(self.grid.wavenumbers * phi) / np.sum(phi))

    def support_mask(self, floor: float = SUPPORT_FLOOR) -> np.ndarray:
        a = np.abs(self.psi)
        return a > floor * a.max()


def gaussian_packet(grid: GridSpec, q0: float, p0: float, sigma: float, hbar: float = 1.0, mass: float = 1.0) -> GridWaveFunction:
    """Normalized Gaussian with position spread ``sigma`` and momentum ``p0``.

    Requires ``sigma >= 4 dq`` and ``q0 +- 5 sigma`` inside the grid.
    """
    if sigma < 4 * grid.dq:
        raise DomainError(f"width {sigma} under-resolved: need sigma >= 4*dq = {4 * grid.dq:.4g}")
    if q0 - 5 * sigma < grid.lower or q0 + 5 * sigma > grid.upper - grid.dq:
        raise DomainError(f"packet at {q0} with width {sigma} violates the 5-sigma margin of {grid}")
    q = grid.points
    psi = np.exp(-((q - q0) ** 2) / (4 * sigma**2) + 1j * p0 * (q - q0) / hbar)
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dq)
    return GridWaveFunction(grid, psi, hbar, mass)


def _check_phase_wrap(values: np.ndarray, psi: np.ndarray, dt: float, hbar: float) -> None:
    a = np.abs(psi)
    support = a > SUPPORT_FLOOR * a.max()
    vmax = float(np.max(np.abs(values[support]))) if np.any(support) else 0.0
    if vmax * dt / hbar >= PHASE_WRAP_LIMIT:
        raise StepSizeError(
            f"max|V|*dt/hbar = {vmax * dt / hbar:.3g} on the support exceeds {PHASE_WRAP_LIMIT}; reduce dt below {PHASE_WRAP_LIMIT * hbar / vmax:.3g}"
        )


class SplitOperator:
    """Second-order Strang propagator ``K/2 . V . K/2`` with cached phases.

    Consecutive half-kinetic factors are fused when several steps are taken
    at once; the result is the same product of exponentials.
    """

    def __init__(self, grid: GridSpec, potential: np.ndarray, dt: float, hbar: float, mass: float):
        if dt <= 0:
            raise DomainError("dt must be positive")
        self.grid, self.dt, self.hbar, self.mass = grid, dt, hbar, mass
        self.potential = np.asarray(potential, dtype=float)
        k = grid.wavenumbers
        self.half_kinetic = np.exp(-0.25j * hbar * k**2 * dt / mass)
        self.kinetic = self.half_kinetic**2
        self.potential_phase = np.exp(-1j * self.potential * dt / hbar)

    def check(self, psi: np.ndarray) -> None:
        _check_phase_wrap(self.potential, psi, self.dt, self.hbar)

    def advance(self, psi: np.ndarray, steps: int) -> np.ndarray:
        if steps <= 0:
            return psi
        phi = np.fft.fft(psi) * self.half_kinetic
        for _ in range(steps - 1):
            phi = np.fft.fft(np.fft.ifft(phi) * self.potential_phase) * self.kinetic
        return np.fft.ifft(np.fft.fft(np.fft.ifft(phi) * self.potential_phase) * self.half_kinetic)


def step_split_operator(psi: GridWaveFunction, V: PotentialField, dt: float) -> GridWaveFunction:
    """One Strang step of ``i hbar dpsi/dt = (p^2/2m + V) psi``."""
    op = SplitOperator(psi.grid, V.on_grid(psi.grid), dt, psi.hbar, psi.mass)
    op.check(psi.psi)
    return replace(psi, psi=op.advance(psi.psi, 1), t=psi.t + dt)


def evolve(
    psi: GridWaveFunction,
    V: PotentialField,
    dt: float,
    steps: int,
    record_every: int = 0,
    callback: Optional[Callable[[GridWaveFunction], None]] = None,
) -> GridWaveFunction:
    """Take ``steps`` Strang steps; ``callback`` sees every ``record_every``-th state.

    The phase-wrap guard is re-checked at every recorded state (and at the
    start and end).
    """
    op = SplitOperator(psi.grid, V.on_grid(psi.grid), dt, psi.hbar, psi.mass)
    op.check(psi.psi)
    stride = record_every if record_every > 0 else steps
    a, done = psi.psi, 0
    while done < steps:
        chunk = min(stride, steps - done)
        a = op.advance(a, chunk)
        done += chunk
        op.check(a)
        if callback is not None:
            callback(replace(psi, psi=a, t=psi.t + done * dt))
    return replace(psi, psi=a, t=psi.t + steps * dt)


def density(psi: GridWaveFunction) -> DensityField:
    """Pointwise ``|psi|^2`` as a density field."""
    return DensityField(psi.grid, np.abs(psi.psi) ** 2, psi.t)


@dataclass(frozen=True)
class SpinorWaveFunction:
    """Spin-j wavefunction: one grid component per ``sigma`` along ``axis``.

    ``components[i]`` multiplies ``chi_sigma(axis)`` with ``sigma`` the i-th
    entry of ``j, ..., -j``; its squared norm is that branch's population.
    """

    grid: GridSpec
    two_j: int
    axis: Direction
    components: np.ndarray = field(repr=False)
    hbar: float = 1.0
    mass: float = 1.0
    t: float = 0.0

    def __post_init__(self):
        c = np.array(self.components, dtype=complex)
        if c.shape != (self.two_j + 1, self.grid.count):
            raise DomainError(f"components have shape {c.shape}, expected ({self.two_j + 1}, {self.grid.count})")
        c.setflags(write=False)
        object.__setattr__(self, "components", c)

    @property
    def j(self) -> float:
        return self.two_j / 2

    def component_norms(self) -> np.ndarray:
        return np.sum(np.abs(self.components) ** 2, axis=1) * self.grid.dq

    def norm(self) -> float:
        return float(np.sum(self.component_norms()))

    def component(self, sigma) -> GridWaveFunction:
        """The (unnormalized) component multiplying ``chi_sigma(axis)``."""
        return GridWaveFunction(self.grid, self.components[sigma_index(self.j, sigma)], self.hbar, self.mass, self.t)

    def total_density(self) -> DensityField:
        return DensityField(self.grid, np.sum(np.abs(self.components) ** 2, axis=0), self.t)

    def project(self, state: SpinState) -> GridWaveFunction:
        """Spatial amplitude ``<chi|Psi(q)>`` along an internal state ``chi``."""
        a = rotation_between(self.j, state.axis, self.axis) @ state.amplitudes
        return GridWaveFunction(self.grid, a.conj() @ self.components, self.hbar, self.mass, self.t)


def product_state(psi: GridWaveFunction, spin: SpinState) -> SpinorWaveFunction:
    """Incident product ``psi(q) chi`` expressed along ``spin.axis``."""
    comps = spin.amplitudes[:, None] * psi.psi[None, :]
    return SpinorWaveFunction(psi.grid, spin.two_j, spin.axis, comps, psi.hbar, psi.mass, psi.t)


@dataclass(frozen=True)
class SpinPotential:
    """Spin-dependent potential, diagonal along ``axis``.

    ``branches[i]`` is the eigenvalue potential of the i-th ``sigma`` in the
    ``j, ..., -j`` ordering.
    """

    two_j: int
    axis: Direction
    branches: tuple

    def __post_init__(self):
        if len(self.branches) != self.two_j + 1:
            raise DomainError(f"need {self.two_j + 1} branch potentials, got {len(self.branches)}")

    @classmethod
    def from_rule(cls, j, axis: Direction, rule: Callable[[float], PotentialField]) -> SpinPotential:
        two_j = twice(j)
        sigmas = np.arange(two_j, -two_j - 1, -2) / 2.0
        return cls(two_j, axis, tuple(rule(s) for s in sigmas))

    @classmethod
    def zero(cls, j, axis: Direction) -> SpinPotential:
        from .classical import free_potential

        return cls.from_rule(j, axis, lambda s: free_potential())


def _same_axis(a: Direction, b: Direction) -> bool:
    return float(np.dot(a.vector, b.vector)) > 1 - 1e-12


def _spinor_ops(psi: SpinorWaveFunction, V0: Optional[PotentialField], H_ext: SpinPotential, dt: float):
    if H_ext.two_j != psi.two_j:
        raise BasisMismatchError("spin potential and spinor have different j")
    if not _same_axis(H_ext.axis, psi.axis):
        raise BasisMismatchError(
            "spin potential is diagonal along a different axis; rebase the spinor first (rebase_spinor)"
        )
    base = np.zeros(psi.grid.count) if V0 is None else V0.on_grid(psi.grid)
    return [
        SplitOperator(psi.grid, base + Vs.on_grid(psi.grid), dt, psi.hbar, psi.mass) for Vs in H_ext.branches
    ]


def step_spinor(psi: SpinorWaveFunction, V0: Optional[PotentialField], H_ext: SpinPotential, dt: float) -> SpinorWaveFunction:
    """One Strang step of every component under ``V0 + V_sigma``."""
    ops = _spinor_ops(psi, V0, H_ext, dt)
    for op, c in zip(ops, psi.components):
        op.check(c)
    comps = np.array([op.advance(c, 1) for op, c in zip(ops, psi.components)])
    return replace(psi, components=comps, t=psi.t + dt)


def evolve_spinor(
    psi: SpinorWaveFunction,
    V0: Optional[PotentialField],
    H_ext: SpinPotential,
    dt: float,
    steps: int,
    record_every: int = 0,
    callback: Optional[Callable[[SpinorWaveFunction], None]] = None,
) -> SpinorWaveFunction:
    """Multi-step :func:`step_spinor`; components with no population are skipped."""
    ops = _spinor_ops(psi, V0, H_ext, dt)
    comps = [np.array(c) for c in psi.components]
    active = [bool(np.any(c != 0)) for c in comps]
    for op, c, on in zip(ops, comps, active):
        if on:
            op.check(c)
    stride = record_every if record_every > 0 else steps
    done = 0
    while done < steps:
        chunk = min(stride, steps - done)
        for i, op in enumerate(ops):
            if active[i]:
                comps[i] = op.advance(comps[i], chunk)
                op.check(comps[i])
        done += chunk
        if callback is not None:
            callback(replace(psi, components=np.array(comps), t=psi.t + done * dt))
    return replace(psi, components=np.array(comps), t=psi.t + steps * dt)


def rebase_spinor(psi: SpinorWaveFunction, new_axis: Direction) -> SpinorWaveFunction:
    """Re-express the internal state along ``new_axis``."""
    rot = rotation_between(psi.j, psi.axis, new_axis)
    return replace(psi, axis=new_axis, components=rot.entries @ psi.components)
