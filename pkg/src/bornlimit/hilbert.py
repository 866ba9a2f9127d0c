"""Spin-j internal Hilbert spaces: quantization axes, basis rotations, overlaps.

Quantum numbers cross the public API as ordinary numbers (``0.5``, ``1``,
``Fraction(3, 2)``) and are stored internally as twice their value so that
equality tests never touch floating point.  Basis vectors are ordered
``sigma = j, j-1, ..., -j``.

Phases follow Condon-Shortley with the z-y-z Euler convention: the spinor
``chi_sigma(n)`` for ``n = (theta, phi)`` is ``D(phi, theta, 0) |j sigma>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, isclose, pi, sqrt

import numpy as np

from .errors import DomainError

__all__ = [
    "Direction",
    "RotationMatrix",
    "SpinState",
    "Z_AXIS",
    "X_AXIS",
    "Y_AXIS",
    "twice",
    "sigma_values",
    "sigma_index",
    "wigner_small_d",
    "wigner_d_matrix",
    "spin_operators",
    "axis_frame",
    "rotation_between",
    "overlap_amplitude",
    "transition_probability",
]


def twice(x) -> int:
    """Return ``2*x`` as an int, refusing anything that is not a half-integer."""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return 2 * int(x)
    y = 2 * float(x)
    n = round(y)
    if not isclose(y, n, abs_tol=1e-9):
        raise DomainError(f"{x!r} is not a half-integer")
    return int(n)


def _check_j(two_j: int) -> None:
    if two_j < 0:
        raise DomainError(f"spin j must be non-negative, got {two_j / 2}")


def _check_sigma(two_j: int, two_sigma: int) -> None:
    if abs(two_sigma) > two_j or (two_j - two_sigma) % 2:
        raise DomainError(
            f"sigma={two_sigma / 2} is not a valid projection for j={two_j / 2}"
        )


def sigma_values(j) -> np.ndarray:
    """Projections ``j, j-1, ..., -j`` as floats."""
    two_j = twice(j)
    _check_j(two_j)
    return np.arange(two_j, -two_j - 1, -2) / 2.0


def sigma_index(j, sigma) -> int:
    """Position of ``sigma`` in the ``j, ..., -j`` ordering."""
    two_j, two_s = twice(j), twice(sigma)
    _check_j(two_j)
    _check_sigma(two_j, two_s)
    return (two_j - two_s) // 2


@dataclass(frozen=True)
class Direction:
    """A unit vector on the sphere stored as polar/azimuthal angles."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        theta, phi = float(self.theta), float(self.phi)
        if not (-1e-12 <= theta <= pi + 1e-12):
            raise DomainError(f"polar angle {theta} outside [0, pi]")
        object.__setattr__(self, "theta", min(max(theta, 0.0), pi))
        object.__setattr__(self, "phi", phi % (2 * pi))

    @property
    def vector(self) -> np.ndarray:
        st = np.sin(self.theta)
        return np.array([st * np.cos(self.phi), st * np.sin(self.phi), np.cos(self.theta)])

    @classmethod
    def from_vector(cls, v) -> Direction:
        v = np.asarray(v, dtype=float)
        r = np.linalg.norm(v)
        if r == 0:
            raise DomainError("zero vector has no direction")
        x, y, z = v / r
        return cls(float(np.arccos(np.clip(z, -1.0, 1.0))), float(np.arctan2(y, x)))

    @classmethod
    def in_plane(cls, angle: float) -> Direction:
        """Direction at ``angle`` from +z towards +x, within the x-z plane."""
        return cls.from_vector([np.sin(angle), 0.0, np.cos(angle)])

    def angle_to(self, other: Direction) -> float:
        c = float(np.dot(self.vector, other.vector))
        return float(np.arccos(np.clip(c, -1.0, 1.0)))


Z_AXIS = Direction(0.0, 0.0)
X_AXIS = Direction(pi / 2, 0.0)
Y_AXIS = Direction(pi / 2, pi / 2)


def wigner_small_d(j, sigma_p, sigma, beta: float) -> float:
    """Wigner small-d element ``<j sigma'| exp(-i beta J_y) |j sigma>``.

    Evaluated from the explicit factorial sum; exact integer arithmetic for
    the prefactors keeps it accurate up to moderately large ``j``.
    """
    two_j, two_mp, two_m = twice(j), twice(sigma_p), twice(sigma)
    _check_j(two_j)
    _check_sigma(two_j, two_mp)
    _check_sigma(two_j, two_m)
    jpm, jmm = (two_j + two_m) // 2, (two_j - two_m) // 2
    jpmp, jmmp = (two_j + two_mp) // 2, (two_j - two_mp) // 2
    mp_m = (two_mp - two_m) // 2
    pref = sqrt(factorial(jpmp) * factorial(jmmp) * factorial(jpm) * factorial(jmm))
    c, s = np.cos(beta / 2), np.sin(beta / 2)
    total = 0.0
    for k in range(max(0, -mp_m), min(jpm, jmmp) + 1):
        den = factorial(jpm - k) * factorial(k) * factorial(jmmp - k) * factorial(k + mp_m)
        total +=(-1) ** (k + mp_m) / den * c ** (two_j - 2 * k - mp_m) * s ** (2 * k + mp_m)
    return float(pref * total)


def wigner_d_matrix(j, beta: float) -> np.ndarray:
    """Full small-d matrix, rows/columns ordered ``j, ..., -j``."""
    sig = sigma_values(j)
    return np.array([[wigner_small_d(j, a, b, beta) for b in sig] for a in sig])


@lru_cache(maxsize=32)
def _spin_operators(two_j: int):
    m = np.arange(two_j, -two_j - 1, -2) / 2.0
    j = two_j / 2.0
    jz = np.diag(m).astype(complex)
    # <m+1|J+|m> sits just above the diagonal in the descending ordering
    jp = np.diag(np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    jm = jp.conj().T
    jx = (jp + jm) / 2
    jy = (jp - jm) / 2j
    for a in (jx, jy, jz):
        a.setflags(write=False)
    return jx, jy, jz


def spin_operators(j):
    """Return ``(Jx, Jy, Jz)`` in the ``j, ..., -j`` basis (units of hbar)."""
    two_j = twice(j)
    _check_j(two_j)
    return _spin_operators(two_j)


def axis_frame(j, axis: Direction) -> np.ndarray:
    """Unitary whose column ``sigma`` holds ``chi_sigma(axis)`` in the z basis."""
    sig = sigma_values(j)
    d = wigner_d_matrix(j, axis.theta)
    return np.exp(-1j * sig * axis.phi)[:, None] * d


@dataclass(frozen=True)
class RotationMatrix:
    """Change of basis for spin-j amplitudes between two quantization axes.

    ``entries @ a`` turns amplitudes ``a`` quantized along ``source`` into
    amplitudes quantized along ``target``.
    """

    two_j: int
    entries: np.ndarray
    source: Direction | None = None
    target: Direction | None = None

    def __post_init__(self):
        e = np.array(self.entries, dtype=complex)
        if e.shape != (self.two_j + 1, self.two_j + 1):
            raise DomainError(f"rotation for j={self.two_j / 2} must be square of size {self.two_j + 1}")
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def j(self) -> float:
        return self.two_j / 2

    def __matmul__(self, other):
        if isinstance(other, RotationMatrix):
            return RotationMatrix(self.two_j, self.entries @ other.entries, other.source, self.target)
        return self.entries @ np.asarray(other)

    def unitarity_defect(self) -> float:
        e = self.entries
        return float(np.max(np.abs(e.conj().T @ e - np.eye(len(e)))))


def rotation_between(j, source: Direction, target: Direction) -> RotationMatrix:
    """Rotation re-expressing ``source``-axis amplitudes in the ``target`` basis."""
    two_j = twice(j)
    _check_j(two_j)
    entries = axis_frame(j, target).conj().T @ axis_frame(j, source)
    return RotationMatrix(two_j, entries, source, target)


@dataclass(frozen=True)
class SpinState:
    """Pure spin-j state given by its amplitudes along ``axis``."""

    two_j: int
    axis: Direction
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        _check_j(self.two_j)
        a = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if a.size != self.two_j + 1:
            raise DomainError(f"expected {self.two_j + 1} amplitudes for j={self.two_j / 2}, got {a.size}")
        norm = float(np.vdot(a, a).real)
        if abs(norm - 1.0) > 1e-12:
            raise DomainError(f"spin state not normalized (|a|^2 = {norm!r})")
        a.setflags(write=False)
        object.__setattr__(self, "amplitudes", a)

    @classmethod
    def basis(cls, j, sigma, axis: Direction = Z_AXIS) -> SpinState:
        """The spinor ``chi_sigma(axis)``."""
        two_j = twice(j)
        a = np.zeros(two_j + 1, dtype=complex)
        a[sigma_index(j, sigma)] = 1.0
        return cls(two_j, axis, a)

    @classmethod
    def from_amplitudes(cls, j, amplitudes, axis: Direction = Z_AXIS, normalize: bool = False) -> SpinState:
        a = np.asarray(amplitudes, dtype=complex)
        if normalize:
            a = a / np.linalg.norm(a)
        return cls(twice(j), axis, a)

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def dim(self) -> int:
        return self.two_j + 1

    def in_basis(self, axis: Direction) -> SpinState:
        a = rotation_between(self.j, self.axis, axis) @ self.amplitudes
        # renormalize away the ~1e-16 drift of the rotation
        return SpinState(self.two_j, axis, a / np.linalg.norm(a))

    def z_vector(self) -> np.ndarray:
        return axis_frame(self.j, self.axis) @ self.amplitudes

    def inner(self, other: SpinState) -> complex:
        """``<self|other>`` independent of the axes the two are stored in."""
        if other.two_j != self.two_j:
            raise DomainError("inner product between different spins")
        return complex(np.vdot(self.z_vector(), other.z_vector()))


def overlap_amplitude(state: SpinState, target_axis: Direction, sigma) -> complex:
    """Component ``c_sigma = <chi_sigma(target_axis)|state>``."""
    idx = sigma_index(state.j, sigma)
    rot = rotation_between(state.j, state.axis, target_axis)
    return complex((rot @ state.amplitudes)[idx])


def transition_probability(rho, n: Direction, sigma, k: Direction, j) -> float:
    """``|<chi_rho(n)|chi_sigma(k)>|^2``."""
    i_rho, i_sig = sigma_index(j, rho), sigma_index(j, sigma)
    rot = rotation_between(j, k, n).entries
    return float(abs(rot[i_rho, i_sig]) ** 2)
