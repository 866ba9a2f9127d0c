"""Classical trajectories, their Jacobians, and the populations they carry.

Positions and momenta are arrays whose last axis is the configuration-space
dimension ``d``.  Ensembles are propagated all members at once with a
kick-drift-kick leapfrog; alongside each member we integrate the tangent map
``(dq/dq0, dp/dq0)`` of the Lagrangian manifold it was launched on, whose
determinant is the Van Vleck/Jacobian factor that dilutes its density.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import CoverageError, DomainError, EscapeError
from .grid import DensityField, GridSpec

__all__ = [
    "PotentialField",
    "Trajectory",
    "TrajectoryEnsemble",
    "free_potential",
    "harmonic_potential",
    "quartic_potential",
    "linear_potential",
    "integrate_trajectory",
    "monodromy",
    "gaussian_ensemble",
    "point_ensemble",
    "propagate_ensemble",
    "bin_density",
    "sample_ensemble_from_wavefunction",
]

CAUSTIC_THRESHOLD = 1e-8


def _as_points(q, dim: int) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if dim == 1 and (q.ndim == 0 or q.shape[-1] != 1):
        q = q[..., None]
    return q


@dataclass(frozen=True)
class PotentialField:
    """Potential energy ``V(q)`` with its gradient and (optionally) Hessian.

    All three rules take arrays of shape ``(..., dim)``.  ``value`` returns
    shape ``(...)``, ``gradient`` ``(..., dim)`` and ``hessian``
    ``(..., dim, dim)``.  ``bounds`` is the domain box that trajectories must
    stay in; a missing Hessian is replaced by central differences of the
    gradient.  Construction checks the gradient against finite differences.
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    dim: int = 1
    bounds: tuple = (-50.0, 50.0)
    name: str = "potential"
    self_test: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (self.dim,)).copy() for b in self.bounds)
        if np.any(hi <= lo):
            raise DomainError(f"empty domain {self.bounds}")
        object.__setattr__(self, "bounds", (lo, hi))
        if self.self_test:
            self._check_gradient()

    @property
    def width(self) -> float:
        lo, hi = self.bounds
        return float(np.max(hi - lo))

    def _check_gradient(self, n: int = 16) -> None:
        lo, hi = self.bounds
        rng = np.random.default_rng(12345)
        q = lo + (hi - lo) * rng.random((n, self.dim))
        h = 1e-5 * self.width
        g = np.asarray(self.gradient(q), dtype=float).reshape(n, self.dim)
        fd = np.empty_like(g)
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            fd[:, k] = (self.value(q + e) - self.value(q - e)) / (2 * h)
        scale = max(1.0, float(np.max(np.abs(g))))
        err = float(np.max(np.abs(fd - g)))
        if err > 1e-6 * scale:
            raise DomainError(f"gradient of {self.name!r} inconsistent with its value (max deviation {err:.3g})")

    def __call__(self, q) -> np.ndarray:
        return self.value(_as_points(q, self.dim))

    def force(self, q) -> np.ndarray:
        return -self.gradient(q)

    def second_derivative(self, q) -> np.ndarray:
        if self.hessian is not None:
            return self.hessian(q)
        h = 1e-5 * self.width
        cols = []
        for k in range(self.dim):
            e = np.zeros(self.dim)
            e[k] = h
            cols.append((self.gradient(q + e) - self.gradient(q - e)) / (2 * h))
        return np.stack(cols, axis=-1)

    def on_grid(self, grid: GridSpec) -> np.ndarray:
        return np.asarray(self.value(grid.points[:, None]), dtype=float)

    def __add__(self, other: PotentialField) -> PotentialField:
        if other.dim != self.dim:
            raise DomainError("cannot add potentials of different dimension")
        a, b = self, other
        hess = None
        if a.hessian is not None and b.hessian is not None:
            hess = lambda q: a.hessian(q) + b.hessian(q)  # noqa: E731
        lo = np.maximum(a.bounds[0], b.bounds[0])
        hi = np.minimum(a.bounds[1], b.bounds[1])
        return PotentialField(
            lambda q: a.value(q) + b.value(q),
            lambda q: a.gradient(q) + b.gradient(q),
            hess,
            a.dim,
            (lo, hi),
            f"{a.name}+{b.name}",
            self_test=False,
        )

    def with_bounds(self, lower, upper) -> PotentialField:
        return replace(self, bounds=(lower, upper), self_test=False)


def free_potential(dim: int = 1, bounds=(-50.0, 50.0)) -> PotentialField:
    return PotentialField(
        lambda q: np.zeros(q.shape[:-1]),
        lambda q: np.zeros(q.shape),
        lambda q: np.zeros(q.shape + (q.shape[-1],)),
        dim,
        bounds,
        "free",
    )


def harmonic_potential(omega: float = 1.0, mass: float = 1.0, center: float = 0.0, bounds=(-50.0, 50.0)) -> PotentialField:
    """``V = m omega^2 (q - center)^2 / 2`` in one dimension."""
    k = mass * omega**2
    return PotentialField(
        lambda q: 0.5 * k * (q[..., 0] - center) ** 2,
        lambda q: k * (q - center),
        lambda q: np.full(q.shape + (1,), k),
        1,
        bounds,
        "harmonic",
    )


def quartic_potential(omega: float = 1.0, quartic: float = 0.1, mass: float = 1.0, bounds=(-50.0, 50.0)) -> PotentialField:
    """Quartic-perturbed oscillator ``m omega^2 q^2/2 + quartic q^4``."""
    k = mass * omega**2
    return PotentialField(
        lambda q: 0.5 * k * q[..., 0] ** 2 + quartic * q[..., 0] ** 4,
        lambda q: k * q + 4 * quartic * q**3,
        lambda q: (k + 12 * quartic * q**2)[..., None],
        1,
        bounds,
        "quartic",
    )


def linear_potential(force: float, bounds=(-50.0, 50.0)) -> PotentialField:
    """Uniform force field, ``V = -force * q``."""
    return PotentialField(
        lambda q: -force * q[..., 0],
        lambda q: np.full(q.shape, -force),
        lambda q: np.zeros(q.shape + (1,)),
        1,
        bounds,
        "linear",
    )


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    mass: float

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")

    def energies(self, V: PotentialField) -> np.ndarray:
        kinetic = 0.5 * np.sum(self.momenta**2, axis=-1) / self.mass
        return kinetic + V.value(self.positions)

    def energy_drift(self, V: PotentialField) -> float:
        e = self.energies(V)
        return float(np.max(np.abs(e - e[0])) / abs(e[0]))


def _step_count(dt: float, T: float) -> int:
    if dt <= 0:
        raise DomainError(f"time step must be positive, got {dt}")
    n = int(round(abs(T) / dt))
    if n == 0 or abs(n * dt - abs(T)) > 1e-9 * max(1.0, abs(T)):
        raise DomainError(f"duration {T} is not a whole number of steps of {dt}")
    return n


def integrate_trajectory(q0, p0, V: PotentialField, dt: float, T: float, mass: float = 1.0) -> Trajectory:
    """Leapfrog trajectory from ``(q0, p0)`` over ``[0, T]``.

    Raises :class:`EscapeError` (with the exit time) if the trajectory leaves
    ``V.bounds``.  A negative ``T`` integrates backwards in time.
    """
    n = _step_count(dt, T)
    h = dt if T > 0 else -dt
    q = np.array(q0, dtype=float).reshape(V.dim)
    p = np.array(p0, dtype=float).reshape(V.dim)
    lo, hi = V.bounds
    qs = np.empty((n + 1, V.dim))
    ps = np.empty((n + 1, V.dim))
    qs[0], ps[0] = q, p
    g = V.gradient(q[None])[0]
    for i in range(1, n + 1):
        p = p - 0.5 * h * g
        q = q + h * p / mass
        if np.any(q < lo) or np.any(q > hi):
            raise EscapeError(f"trajectory left the domain at t={i * h:.6g}", i * h)
        g = V.gradient(q[None])[0]
        p = p - 0.5 * h * g
        qs[i], ps[i] = q, p
    times = np.arange(n + 1) * h
    if h < 0:
        return Trajectory(times[::-1].copy(), qs[::-1].copy(), ps[::-1].copy(), mass)
    return Trajectory(times, qs, ps, mass)


def monodromy(q0, p0, V: PotentialField, dt: float, T: float, mass: float = 1.0) -> np.ndarray:
    """Tangent map ``d(q, p)(T) / d(q, p)(0)`` of the discrete leapfrog flow."""
    n = _step_count(dt, T)
    d = V.dim
    q = np.array(q0, dtype=float).reshape(1, d)
    p = np.array(p0, dtype=float).reshape(1, d)
    M = np.eye(2 * d)
    for _ in range(n):
        H = V.second_derivative(q)[0]
        p = p - 0.5 * dt * V.gradient(q)
        kick1 = np.block([[np.eye(d), np.zeros((d, d))], [-0.5 * dt * H, np.eye(d)]])
        q = q + dt * p / mass
        drift = np.block([[np.eye(d), dt / mass * np.eye(d)], [np.zeros((d, d)), np.eye(d)]])
        H = V.second_derivative(q)[0]
        p = p - 0.5 * dt * V.gradient(q)
        kick2 = np.block([[np.eye(d), np.zeros((d, d))], [-0.5 * dt * H, np.eye(d)]])
        M = kick2 @ drift @ kick1 @ M
    return M


@dataclass
class TrajectoryEnsemble:
    """Weighted family of trajectories recorded at a set of snapshot times.

    ``positions``/``momenta`` have shape ``(n_times, count, dim)`` and
    ``jacobians`` ``(n_times, count)``.  ``tangent_q``/``tangent_p`` hold the
    current ``dq/dq0`` and ``dp/dq0`` so that propagation can be resumed.
    ``initial_density`` is the launch density ``w(q0, 0)`` of each member when
    known; dividing it by the Jacobian gives the transported density.
    """

    times: np.ndarray
    positions: np.ndarray
    momenta: np.ndarray
    jacobians: np.ndarray
    weights: np.ndarray
    mass: float
    tangent_q: np.ndarray
    tangent_p: np.ndarray
    escaped: np.ndarray
    exit_times: np.ndarray
    caustic: np.ndarray
    initial_density: Optional[np.ndarray] = None

    def __post_init__(self):
        total = float(np.sum(self.weights))
        if np.any(self.weights < 0) or abs(total - 1.0) > 1e-12:
            raise DomainError(f"ensemble weights must be non-negative and sum to 1 (sum={total!r})")

    @classmethod
    def launch(cls, q0, p0, mass: float = 1.0, weights=None, dp_dq0=None, initial_density=None) -> TrajectoryEnsemble:
        q0 = np.asarray(q0, dtype=float)
        if q0.ndim == 1:
            q0 = q0[:, None]
        n, d = q0.shape
        p0 = np.asarray(p0, dtype=float).reshape(n, d)
        if weights is None:
            weights = np.full(n, 1.0 / n)
        tq = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        tp = np.zeros((n, d, d)) if dp_dq0 is None else np.asarray(dp_dq0, dtype=float).reshape(n, d, d).copy()
        return cls(
            times=np.zeros(1),
            positions=q0[None].copy(),
            momenta=p0[None].copy(),
            jacobians=np.ones((1, n)),
            weights=np.asarray(weights, dtype=float),
            mass=float(mass),
            tangent_q=tq,
            tangent_p=tp,
            escaped=np.zeros(n, dtype=bool),
            exit_times=np.full(n, np.nan),
            caustic=np.zeros(n, dtype=bool),
            initial_density=None if initial_density is None else np.asarray(initial_density, dtype=float),
        )

    @property
    def count(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.positions.shape[-1]

    @property
    def t(self) -> float:
        return float(self.times[-1])

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise DomainError(f"t={t} is not a recorded snapshot (have {self.times.tolist()})")
        return i

    def member(self, i: int) -> Trajectory:
        return Trajectory(self.times, self.positions[:, i], self.momenta[:, i], self.mass)

    def snapshot(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        i = self.time_index(t)
        return self.positions[i], self.momenta[i]

    def transported_density(self, t: float) -> np.ndarray:
        """Density ``w0(q0) / J`` carried to each member's position at ``t``."""
        if self.initial_density is None:
            raise DomainError("ensemble was launched without an initial density")
        return self.initial_density / self.jacobians[self.time_index(t)]

    def mean_momentum(self, t: float) -> np.ndarray:
        i = self.time_index(t)
        live = ~self.escaped
        w = self.weights[live]
        return np.sum(self.momenta[i][live] * w[:, None], axis=0) / np.sum(w)

    def copy(self) -> TrajectoryEnsemble:
        return TrajectoryEnsemble(
            **{k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        )


def point_ensemble(q0, p0, mass: float = 1.0) -> TrajectoryEnsemble:
    """Single member of weight 1."""
    return TrajectoryEnsemble.launch(np.atleast_1d(np.asarray(q0, dtype=float))[None], np.atleast_1d(p0)[None], mass)


def gaussian_ensemble(
    q_mean: float,
    q_std: float,
    p_mean: float,
    p_std: float,
    count: int,
    seed: int,
    mass: float = 1.0,
) -> TrajectoryEnsemble:
    """Independent Gaussian samples in phase space, equal weights, ``d = 1``."""
    rng = np.random.default_rng(seed)
    q = rng.normal(q_mean, q_std, count)
    p = rng.normal(p_mean, p_std, count)
    return TrajectoryEnsemble.launch(q, p, mass)


def _kick(p, P, grad, hess, Q, h):
    p -= h * grad
    if P.shape[-1] == 1:
        P -= h * hess * Q
    else:
        P -= h * hess @ Q


def propagate_ensemble(
    ensemble: TrajectoryEnsemble,
    V: PotentialField,
    dt: float,
    T: float,
    record_times=None,
) -> TrajectoryEnsemble:
    """Advance every member by ``T`` with leapfrog, tracking Jacobians.

    ``record_times`` are offsets in ``(0, T]`` (multiples of ``dt``) at which
    snapshots are appended; the final time is always recorded.  Members that
    leave ``V.bounds`` are flagged and frozen at their exit point, with their
    weight left untouched.  Returns a new ensemble.
    """
    if ensemble.count == 0:
        raise DomainError("cannot propagate an empty ensemble")
    n = _step_count(dt, T)
    record_steps = {n}
    for r in record_times or ():
        k = _step_count(dt, r) if r > 0 else 0
        if k > n:
            raise DomainError(f"record time {r} beyond duration {T}")
        if k:
            record_steps.add(k)
    d = ensemble.dim
    one_d = d == 1
    q = ensemble.positions[-1].copy()
    p = ensemble.momenta[-1].copy()
    Q = ensemble.tangent_q.copy()
    P = ensemble.tangent_p.copy()
    if one_d:
        Q, P = Q[:, :, 0], P[:, :, 0]
    escaped = ensemble.escaped.copy()
    exit_times = ensemble.exit_times.copy()
    caustic = ensemble.caustic.copy()
    lo, hi = V.bounds
    m = ensemble.mass
    t0 = ensemble.t

    def forces(qq):
        g = V.gradient(qq)
        H = V.second_derivative(qq)
        if one_d:
            H = H[..., 0]
        if not live_all:
            g = np.where(live[:, None], g, 0.0)
            H = H * (live[:, None] if one_d else live[:, None, None])
        return g, H

    times, qs, ps, js = [], [], [], []
    live = ~escaped
    live_all = bool(np.all(live))
    g, H = forces(q)
    for i in range(1, n + 1):
        _kick(p, P, g, H, Q, 0.5 * dt)
        if live_all:
            q += (dt / m) * p
            Q += (dt / m) * P
        else:
            q += (dt / m) * np.where(live[:, None], p, 0.0)
            Q += (dt / m) * P * (live[:, None] if one_d else live[:, None, None])
        out = (q < lo) | (q > hi)
        if out.any():
            out = live & np.any(out, axis=-1)
            if out.any():
                escaped |= out
                exit_times[out] = t0 + i * dt
                live = ~escaped
                live_all = False
        g, H = forces(q)
        _kick(p, P, g, H, Q, 0.5 * dt)
        # the signed determinant starts at 1; any dip below the threshold
        # between snapshots is a focus
        signed = Q[:, 0] if one_d else np.linalg.det(Q)
        caustic |= signed < CAUSTIC_THRESHOLD
        if i in record_steps:
            J = np.abs(signed)
            times.append(t0 + i * dt)
            qs.append(q.copy())
            ps.append(p.copy())
            js.append(J)
    if one_d:
        Q, P = Q[:, :, None], P[:, :, None]
    return TrajectoryEnsemble(
        times=np.concatenate([ensemble.times, times]),
        positions=np.concatenate([ensemble.positions, np.array(qs)]),
        momenta=np.concatenate([ensemble.momenta, np.array(ps)]),
        jacobians=np.concatenate([ensemble.jacobians, np.array(js)]),
        weights=ensemble.weights,
        mass=m,
        tangent_q=Q,
        tangent_p=P,
        escaped=escaped,
        exit_times=exit_times,
        caustic=caustic,
        initial_density=ensemble.initial_density,
    )


def bin_density(ensemble: TrajectoryEnsemble, t: float, grid: GridSpec, tolerance: float = 1e-4) -> DensityField:
    """Histogram the weights of non-escaped members at time ``t``.

    Cells are centred on the grid points.  Raises :class:`CoverageError` when
    more than ``tolerance`` of the live population falls outside the grid.
    """
    if ensemble.dim != 1:
        raise DomainError("binning is implemented for one-dimensional ensembles")
    i = ensemble.time_index(t)
    live = ~ensemble.escaped
    q = ensemble.positions[i][live, 0]
    w = ensemble.weights[live]
    idx = grid.cell_index(q)
    outside = idx < 0
    lost = float(np.sum(w[outside]))
    if lost > tolerance:
        lo, hi = float(np.min(q)), float(np.max(q))
        raise CoverageError(
            f"grid [{grid.lower}, {grid.upper}) misses mass {lost:.3g}; ensemble spans [{lo:.4g}, {hi:.4g}]",
            lost,
        )
    values = np.bincount(idx[~outside], weights=w[~outside], minlength=grid.count) / grid.dq
    return DensityField(grid, values, float(ensemble.times[i]))


def sample_ensemble_from_wavefunction(psi, count: int, seed: int, momentum: str = "phase-gradient") -> TrajectoryEnsemble:
    """Launch ``count`` equal-weight members from a grid wavefunction.

    Positions follow ``|psi|^2`` by inverse-CDF sampling of the piecewise
    constant density on grid cells.  ``momentum`` selects how momenta are
    assigned:

    ``"phase-gradient"``
        ``p = hbar * d(arg psi)/dq`` at the member's position.
    ``"local-spread"``
        the same mean plus Gaussian noise of variance
        ``-(hbar^2/4) d^2 ln|psi|^2 / dq^2`` (clipped at zero), i.e. the first
        two conditional moments of the Wigner function.  For Gaussian packets
        this samples the Wigner function exactly.

    The tangent ``dp/dq0`` is the derivative of the mean momentum field.
    """
    from .correspondence import validity_field  # local: correspondence imports this module

    if count <= 0:
        raise DomainError("count must be positive")
    grid = psi.grid
    amp = psi.psi
    rho = np.abs(amp) ** 2
    mass_cells = rho * grid.dq
    total = float(np.sum(mass_cells))
    if total == 0 or not np.isfinite(total):
        raise DomainError("cannot sample from a wavefunction with zero norm")
    try:
        vf = validity_field(psi)
        if vf.valid_fraction() < 0.5:
            warnings.warn(f"wavefunction is WKB-valid on only {vf.valid_fraction():.1%} of its norm", stacklevel=2)
    except Exception as exc:  # decomposition failures only downgrade to a warning here
        warnings.warn(f"WKB validity could not be assessed: {exc}", stacklevel=2)

    k = grid.wavenumbers
    dpsi = np.fft.ifft(1j * k * np.fft.fft(amp))
    floor = 1e-300
    local_k = np.imag(np.conj(amp) * dpsi) / np.maximum(rho, floor)
    local_p = psi.hbar * local_k
    dlocal_p = np.gradient(local_p, grid.dq)

    rng = np.random.default_rng(seed)
    cdf = np.cumsum(mass_cells / total)
    cdf[-1] = 1.0
    u = rng.random(count)
    cell = np.minimum(np.searchsorted(cdf, u, side="right"), grid.count - 1)
    below = np.where(cell > 0, cdf[cell - 1], 0.0)
    frac = (u - below) / np.maximum(cdf[cell] - below, floor)
    q = grid.points[cell] + (np.clip(frac, 0.0, 1.0) - 0.5) * grid.dq

    pts = grid.points
    p = np.interp(q, pts, local_p)
    dp = np.interp(q, pts, dlocal_p)
    if momentum == "local-spread":
        support = rho > 1e-30 * rho.max()
        lnr = np.log(np.where(support, rho, rho.max() * 1e-30))
        curv = np.zeros_like(lnr)
        curv[1:-1] = (lnr[2:] - 2 * lnr[1:-1] + lnr[:-2]) / grid.dq**2
        var = np.clip(-0.25 * psi.hbar**2 * curv, 0.0, None)
        p = p + np.sqrt(np.interp(q, pts, var)) * rng.standard_normal(count)
    elif momentum != "phase-gradient":
        raise DomainError(f"unknown momentum assignment {momentum!r}")
    w0 = np.interp(q, pts, rho) / total
    return TrajectoryEnsemble.launch(q, p, psi.mass, dp_dq0=dp, initial_density=w0)
