"""Correlated fragment pairs: joint outcome tables and CHSH correlations."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt
from typing import Optional

import numpy as np

from .errors import DomainError, UnsupportedError
from .hilbert import Direction, SpinState, Z_AXIS, rotation_between, sigma_values, twice

__all__ = [
    "PairState",
    "JointTable",
    "ChshSettings",
    "ChshResult",
    "SETTING_KEYS",
    "TSIRELSON",
    "singlet_pair",
    "product_pair",
    "joint_table",
    "correlation",
    "chsh",
    "sampled_chsh",
    "optimal_settings",
]

TSIRELSON = 2 * sqrt(2)
SETTING_KEYS = ("ab", "ab'", "a'b", "a'b'")


@dataclass(frozen=True)
class PairState:
    """Joint internal state ``sum A[i, k] chi_i(m1) (x) chi_k(m2)``.

    Rows and columns follow ``sigma = j, ..., -j``.
    """

    two_j: int
    amplitudes: np.ndarray = field(repr=False)
    axes: tuple = (Z_AXIS, Z_AXIS)

    def __post_init__(self):
        A = np.array(self.amplitudes, dtype=complex)
        d = self.two_j + 1
        if A.shape != (d, d):
            raise DomainError(f"pair amplitudes must be {d}x{d}, got {A.shape}")
        norm = float(np.sum(np.abs(A) ** 2))
        if abs(norm - 1.0) > 1e-12:
            raise DomainError(f"pair state not normalized (Frobenius norm^2 {norm!r})")
        A.setflags(write=False)
        object.__setattr__(self, "amplitudes", A)

    @property
    def j(self) -> float:
        return self.two_j / 2

    def in_axes(self, n1: Direction, n2: Direction) -> np.ndarray:
        """Amplitudes re-expressed along ``(n1, n2)``: ``R1 A R2^T``."""
        R1 = rotation_between(self.j, self.axes[0], n1).entries
        R2 = rotation_between(self.j, self.axes[1], n2).entries
        return R1 @ self.amplitudes @ R2.T


def singlet_pair(axis: Direction = Z_AXIS) -> PairState:
    """``(|+-> - |-+>)/sqrt 2`` along a common ``axis``."""
    A = np.array([[0.0, 1.0], [-1.0, 0.0]]) / sqrt(2)
    return PairState(1, A, (axis, axis))


def product_pair(chi1: SpinState, chi2: SpinState) -> PairState:
    if chi1.two_j != chi2.two_j:
        raise DomainError("fragments must carry the same spin")
    return PairState(chi1.two_j, np.outer(chi1.amplitudes, chi2.amplitudes), (chi1.axis, chi2.axis))


@dataclass(frozen=True)
class JointTable:
    """``P[i, k]`` for outcome ``(sigma_i, sigma_k)`` along ``(n1, n2)``."""

    n1: Direction
    n2: Direction
    two_j: int
    probabilities: np.ndarray = field(repr=False)

    def __post_init__(self):
        P = np.array(self.probabilities, dtype=float)
        if np.any(P < -1e-15) or np.any(P > 1 + 1e-12) or abs(P.sum() - 1.0) > 1e-10:
            raise DomainError("joint probabilities must lie in [0, 1] and sum to 1")
        P.setflags(write=False)
        object.__setattr__(self, "probabilities", P)

    @property
    def sigmas(self) -> np.ndarray:
        return sigma_values(self.two_j / 2)

    def marginal(self, fragment: int) -> np.ndarray:
        return self.probabilities.sum(axis=1 if fragment == 1 else 0)

    def p(self, s1, s2) -> float:
        sig = list(self.sigmas)
        return float(self.probabilities[sig.index(float(s1)), sig.index(float(s2))])


def joint_table(pair: PairState, n1: Direction, n2: Direction) -> JointTable:
    P = np.abs(pair.in_axes(n1, n2)) ** 2
    return JointTable(n1, n2, pair.two_j, P)


def _signs(two_j: int) -> np.ndarray:
    if two_j != 1:
        raise UnsupportedError("correlations are only defined here for spin-1/2 fragments")
    return np.array([1.0, -1.0])


def correlation(pair: PairState, n1: Direction, n2: Direction) -> float:
    """``E = sum sign(s1) sign(s2) P(s1, s2)``."""
    s = _signs(pair.two_j)
    P = joint_table(pair, n1, n2).probabilities
    return float(s @ P @ s)


@dataclass(frozen=True)
class ChshSettings:
    a: Direction
    a_prime: Direction
    b: Direction
    b_prime: Direction

    def pairs(self) -> tuple:
        return ((self.a, self.b), (self.a, self.b_prime), (self.a_prime, self.b), (self.a_prime, self.b_prime))

    @classmethod
    def in_plane_degrees(cls, a, a_prime, b, b_prime) -> ChshSettings:
        return cls(*(Direction.in_plane(np.radians(x)) for x in (a, a_prime, b, b_prime)))


def optimal_settings() -> ChshSettings:
    """Settings that reach ``2 sqrt 2`` for the singlet with the sign pattern ``+ + + -``."""
    return ChshSettings.in_plane_degrees(0.0, 90.0, 45.0, -45.0)


@dataclass(frozen=True)
class ChshResult:
    """Four correlations and ``S = |E(a,b) + E(a,b') + E(a',b) - E(a',b')|``.

    ``errors`` and ``s_error`` are standard errors (``None`` for exact values).
    ``trials`` maps each setting key to an ``(count, 2)`` array of twice-sigma
    outcomes for fragments 1 and 2.
    """

    settings: ChshSettings
    correlations: tuple
    S: float
    errors: Optional[tuple] = None
    s_error: Optional[float] = None
    trials: Optional[dict] = field(default=None, repr=False, compare=False)

    @property
    def violates(self) -> bool:
        return self.S > 2.0

    def margin_in_errors(self) -> float:
        if not self.s_error:
            return float("inf") if self.violates else float("-inf")
        return (self.S - 2.0) / self.s_error


def _s(E) -> float:
    return abs(E[0] + E[1] + E[2] - E[3])


def chsh(pair: PairState, settings: ChshSettings) -> ChshResult:
    E = tuple(correlation(pair, n1, n2) for n1, n2 in settings.pairs())
    return ChshResult(settings, E, _s(E))


def sampled_chsh(pair: PairState, settings: ChshSettings, count: int, seed: int) -> ChshResult:
    """Estimate the four correlations from ``count`` sampled pairs per setting.

    Each setting draws from its own stream spawned off ``seed``.  The
    standard error of each ``E`` is ``sqrt((1 - E^2)/count)``; ``S``'s
    combines them in quadrature.
    """
    if count < 1000:
        raise DomainError(f"count must be at least 1000, got {count}")
    s = _signs(pair.two_j)
    two = np.array([twice(x) for x in sigma_values(pair.j)])
    streams = np.random.SeedSequence(seed).spawn(4)
    E, err, trials = [], [], {}
    for key, (n1, n2), ss in zip(SETTING_KEYS, settings.pairs(), streams):
        P = joint_table(pair, n1, n2).probabilities.ravel()
        P = np.clip(P, 0.0, None)
        cells = np.random.default_rng(ss).choice(P.size, size=count, p=P / P.sum())
        i, k = np.divmod(cells, pair.two_j + 1)
        e = float(np.mean(s[i] * s[k]))
        E.append(e)
        err.append(sqrt(max(1.0 - e * e, 0.0) / count))
        trials[key] = np.stack([two[i], two[k]], axis=1)
    return ChshResult(settings, tuple(E), _s(E), tuple(err), sqrt(sum(x * x for x in err)), trials)
