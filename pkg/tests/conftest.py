import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy.linalg import expm

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def ladder_spin_matrices(j):
    """Jx, Jy, Jz in the basis m = j, ..., -j, built from <m+1|J+|m>."""
    m = np.arange(j, -j - 1, -1)
    jp = np.zeros((m.size, m.size))
    for k in range(1, m.size):
        jp[k - 1, k] = np.sqrt(j * (j + 1) - m[k] * (m[k] + 1))
    jx = (jp + jp.T) / 2
    jy = (jp - jp.T) / 2j
    return jx, jy, np.diag(m).astype(complex)


def oracle_spinor(j, mu, theta, phi):
    """chi_mu along (theta, phi), in z components, by exponentiating generators."""
    _, jy, jz = ladder_spin_matrices(j)
    m = np.arange(j, -j - 1, -1)
    e = np.zeros(m.size, dtype=complex)
    e[int(round(j - mu))] = 1.0
    return expm(-1j * phi * jz) @ expm(-1j * theta * jy) @ e


def oracle_probability(j, sigma, n, mu, m):
    """|<chi_sigma(n)|chi_mu(m)>|^2 with directions given as (theta, phi)."""
    a = oracle_spinor(j, sigma, *n)
    b = oracle_spinor(j, mu, *m)
    return abs(np.vdot(a, b)) ** 2


def random_direction(rng):
    from bornlimit.hilbert import Direction

    return Direction(float(np.arccos(rng.uniform(-1, 1))), float(rng.uniform(0, 2 * np.pi)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
