"""Executable checks of the classical limit.

``decompose_phase`` splits a grid wavefunction as ``psi = exp(i S/hbar + U)``;
``validity_field`` evaluates the WKB ratio ``|S'|^2 / |S''|`` against
``kappa * hbar``; ``compare`` measures the L1 distance between a classical
population density and ``|psi|^2``; ``hbar_sweep`` runs both pipelines for a
decreasing sequence of hbar values.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .classical import (
    PotentialField,
    bin_density,
    free_potential,
    harmonic_potential,
    propagate_ensemble,
    quartic_potential,
    sample_ensemble_from_wavefunction,
)
from .errors import DecompositionError, DomainError, GridMismatchError
from .grid import DensityField, GridSpec
from .quantum import GridWaveFunction, density, evolve, gaussian_packet, PHASE_WRAP_LIMIT, SUPPORT_FLOOR

__all__ = [
    "PhaseDecomposition",
    "ValidityField",
    "SweepScenario",
    "SweepRow",
    "SweepReport",
    "decompose_phase",
    "validity_field",
    "compare",
    "hbar_sweep",
    "sweep_row",
    "derivative4",
    "KAPPA",
]

KAPPA = 10.0
CURVATURE_GUARD = 1e-12


@dataclass(frozen=True)
class PhaseDecomposition:
    """``S`` (action) and ``U`` (log-amplitude) on the supported region; NaN elsewhere."""

    grid: GridSpec
    S: np.ndarray = field(repr=False)
    U: np.ndarray = field(repr=False)
    hbar: float
    amplitude_floor: float

    @property
    def support(self) -> np.ndarray:
        return np.isfinite(self.S)

    def reconstruct(self) -> np.ndarray:
        out = np.zeros(self.grid.count, dtype=complex)
        s = self.support
        out[s] = np.exp(1j * self.S[s] / self.hbar + self.U[s])
        return out


def decompose_phase(psi: GridWaveFunction, floor: float = SUPPORT_FLOOR, coverage: float = 0.99) -> PhaseDecomposition:
    """Unwrap ``arg psi`` outwards from the amplitude maximum.

    The supported region is the connected run of grid points around the
    maximum where ``|psi| > floor * max|psi|``.  If that run holds less than
    ``coverage`` of the norm, the wavefunction has nodes through its bulk and
    :class:`DecompositionError` lists where they are.
    """
    a = np.abs(psi.psi)
    eps = floor * a.max()
    above = a > eps
    i0 = int(np.argmax(a))
    n = a.size
    lo = i0
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = i0
    while hi < n - 1 and above[hi + 1]:
        hi += 1
    rho = a**2
    covered = float(np.sum(rho[lo : hi + 1]) / np.sum(rho))
    if covered < coverage:
        outside = np.ones(n, dtype=bool)
        outside[lo : hi + 1] = False
        # nodes are the below-floor points flanked by significant amplitude
        nodes = np.flatnonzero(~above & (np.convolve(above, np.ones(3), "same") > 0))
        locs = psi.grid.points[nodes]
        raise DecompositionError(
            f"support around the maximum holds only {covered:.4f} of the norm; nodes near q = {np.round(locs[:8], 4).tolist()}",
            locs,
        )
    S = np.full(n, np.nan)
    U = np.full(n, np.nan)
    sl = slice(lo, hi + 1)
    ang = np.angle(psi.psi[sl])
    k = i0 - lo
    right = np.unwrap(ang[k:])
    left = np.unwrap(ang[: k + 1][::-1])[::-1]
    phase = np.concatenate([left[:-1], right])
    S[sl] = psi.hbar * phase
    U[sl] = np.log(a[sl])
    return PhaseDecomposition(psi.grid, S, U, psi.hbar, eps)


def derivative4(f: np.ndarray, h: float, order: int) -> np.ndarray:
    """Fourth-order central differences; NaN within two points of either end."""
    out = np.full_like(f, np.nan, dtype=float)
    if f.size < 5:
        return out
    if order == 1:
        out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    elif order == 2:
        out[2:-2] = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * h * h)
    else:
        raise DomainError("only first and second derivatives are supported")
    return out


@dataclass(frozen=True)
class ValidityField:
    grid: GridSpec
    ratio: np.ndarray = field(repr=False)
    hbar: float
    kappa: float
    mask: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def valid_fraction(self) -> float:
        """Share of the norm sitting where the WKB criterion holds."""
        return float(np.sum(self.weights[self.mask]) / np.sum(self.weights))


def validity_field(
    psi: GridWaveFunction,
    kappa: float = KAPPA,
    curvature_guard: float = CURVATURE_GUARD,
    order: str = "first",
) -> ValidityField:
    """WKB ratio ``|Theta'|^2 / |Theta''|`` and the mask ``ratio > kappa * hbar``.

    ``order="first"`` uses ``Theta = S - i hbar U`` (the action through first
    order in hbar); ``order="leading"`` drops the amplitude term and uses
    ``Theta = S``.  Where ``|Theta''|`` falls below ``curvature_guard`` the
    ratio is taken as infinite (locally a plane wave).  Points outside the
    phase support, or too close to its edge for the stencil, have NaN ratio
    and fail the mask.
    """
    dec = decompose_phase(psi)
    h = psi.grid.dq
    d1 = derivative4(dec.S, h, 1).astype(complex)
    d2 = derivative4(dec.S, h, 2).astype(complex)
    if order == "first":
        d1 = d1 - 1j * psi.hbar * derivative4(dec.U, h, 1)
        d2 = d2 - 1j * psi.hbar * derivative4(dec.U, h, 2)
    elif order != "leading":
        raise DomainError(f"unknown order {order!r}")
    ratio = np.full(psi.grid.count, np.nan)
    ok = np.isfinite(d1) & np.isfinite(d2)
    flat = ok & (np.abs(d2) < curvature_guard)
    curved = ok & ~flat
    ratio[flat] = np.inf
    ratio[curved] = np.abs(d1[curved]) ** 2 / np.abs(d2[curved])
    with np.errstate(invalid="ignore"):
        mask = np.isfinite(ratio) & (ratio > kappa * psi.hbar) | np.isposinf(ratio)
    return ValidityField(psi.grid, ratio, psi.hbar, kappa, mask, np.abs(psi.psi) ** 2)


def compare(w: DensityField, rho: DensityField) -> float:
    """L1 distance ``sum |w - rho| dq`` between two densities on one grid."""
    if w.grid != rho.grid:
        raise GridMismatchError(f"cannot compare densities on {w.grid} and {rho.grid}")
    return float(np.sum(np.abs(w.values - rho.values)) * w.grid.dq)


@dataclass(frozen=True)
class SweepScenario:
    """A one-dimensional packet in a smooth potential, parametrised by hbar.

    The packet's position width ``sigma_q``, centre and mean momentum are held
    fixed as hbar varies, so the classical data are hbar-independent.  The
    quantum step is the smaller of ``dt_quantum`` and whatever the phase-wrap
    guard demands.  ``coarsen`` merges grid cells before the L1 comparison.
    """

    potential: str = "quartic"
    omega: float = 1.0
    quartic: float = 0.1
    mass: float = 1.0
    q0: float = 1.0
    p0: float = 2.0
    sigma_q: float = 0.25
    grid: GridSpec = GridSpec(-6.0, 6.0, 4096)
    t_final: float = 0.5
    dt_quantum: float = 1e-3
    dt_classical: float = 1e-3
    count: int = 200_000
    seed: int = 0
    momentum: str = "phase-gradient"
    coarsen: int = 16

    def build_potential(self) -> PotentialField:
        b = (self.grid.lower, self.grid.upper)
        if self.potential == "free":
            return free_potential(bounds=b)
        if self.potential == "harmonic":
            return harmonic_potential(self.omega, self.mass, bounds=b)
        if self.potential == "quartic":
            return quartic_potential(self.omega, self.quartic, self.mass, bounds=b)
        raise DomainError(f"unknown potential {self.potential!r}")

    def initial_state(self, hbar: float) -> GridWaveFunction:
        return gaussian_packet(self.grid, self.q0, self.p0, self.sigma_q, hbar, self.mass)

    def quantum_steps(self, psi: GridWaveFunction, V: PotentialField) -> tuple[float, int]:
        """Step size and count for the exact solver, honouring the phase-wrap guard.

        Energy conservation keeps the packet where ``V`` stays below its
        initial potential plus kinetic energy; twice that bounds ``|V|`` on the
        support for the whole run.
        """
        vals = np.abs(V.on_grid(self.grid))
        support = psi.support_mask()
        spread = abs(self.p0) + 6 * psi.hbar / (2 * self.sigma_q)
        vmax = 2.0 * (float(np.max(vals[support])) + 0.5 * spread**2 / self.mass)
        dt_guard = PHASE_WRAP_LIMIT * psi.hbar / max(vmax, 1e-300)
        steps = int(np.ceil(self.t_final / min(self.dt_quantum, dt_guard)))
        return self.t_final / steps, steps


@dataclass(frozen=True)
class SweepRow:
    hbar: float
    l1_distance: float
    validity_fraction: float
    wall_time_seconds: float
    flagged: bool = False
    note: str = ""


@dataclass(frozen=True)
class SweepReport:
    rows: tuple = ()

    def __post_init__(self):
        hs = [r.hbar for r in self.rows]
        if any(b >= a for a, b in zip(hs, hs[1:])):
            raise DomainError("sweep rows must be ordered by decreasing hbar")

    @property
    def l1(self) -> np.ndarray:
        return np.array([r.l1_distance for r in self.rows])

    @property
    def validity(self) -> np.ndarray:
        return np.array([r.validity_fraction for r in self.rows])


def sweep_row(scenario: SweepScenario, hbar: float, seed: int) -> SweepRow:
    """One row: exact and classical evolution at a single hbar."""
    start = time.perf_counter()
    V = scenario.build_potential()
    psi0 = scenario.initial_state(hbar)
    flagged, note = False, ""
    try:
        if validity_field(psi0).valid_fraction() < 0.99:
            flagged, note = True, "initial state fails the WKB criterion"
    except DecompositionError as exc:
        flagged, note = True, str(exc)
    dt, steps = scenario.quantum_steps(psi0, V)
    psi_t = evolve(psi0, V, dt, steps)
    ens = sample_ensemble_from_wavefunction(psi0, scenario.count, seed, scenario.momentum)
    ens = propagate_ensemble(ens, V, scenario.dt_classical, scenario.t_final)
    w = bin_density(ens, ens.t, scenario.grid).coarsen(scenario.coarsen)
    rho = density(psi_t).coarsen(scenario.coarsen)
    l1 = compare(w, rho)
    try:
        frac = validity_field(psi_t).valid_fraction()
    except DecompositionError as exc:
        frac, flagged, note = float("nan"), True, str(exc)
    return SweepRow(hbar, l1, frac, time.perf_counter() - start, flagged, note)


def hbar_sweep(scenario: SweepScenario, hbar_values, threads: int = 1, seeds: Optional[list] = None) -> SweepReport:
    """Run :func:`sweep_row` for each hbar (descending) and collect a report.

    Row ``i`` uses ``seeds[i]`` (default: ``scenario.seed + i``), so results
    do not depend on ``threads``.
    """
    hs = [float(h) for h in hbar_values]
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise DomainError("hbar values must be strictly decreasing")
    if seeds is None:
        seeds = [scenario.seed + i for i in range(len(hs))]
    if not hs:
        return SweepReport(())
    if threads == 1:
        rows = [sweep_row(scenario, h, s) for h, s in zip(hs, seeds)]
    else:
        with ThreadPoolExecutor(max_workers=threads or None) as pool:
            rows = list(pool.map(lambda hs_: sweep_row(scenario, *hs_), zip(hs, seeds)))
    return SweepReport(tuple(rows))
