import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bornlimit.classical import PotentialField, free_potential, harmonic_potential, linear_potential
from bornlimit.errors import BasisMismatchError, DomainError, StepSizeError
from bornlimit.grid import GridSpec
from bornlimit.hilbert import X_AXIS, Z_AXIS, Direction, SpinState, sigma_values, transition_probability
from bornlimit.quantum import (
    SpinPotential,
    SplitOperator,
    density,
    evolve,
    evolve_spinor,
    gaussian_packet,
    product_state,
    rebase_spinor,
    step_spinor,
    step_split_operator,
)

G = GridSpec(-20.0, 20.0, 1024)


def test_packet_preconditions():
    with pytest.raises(DomainError):
        gaussian_packet(G, 0.0, 0.0, 2 * G.dq)
    with pytest.raises(DomainError):
        gaussian_packet(G, 18.0, 0.0, 1.0)


def test_zero_momentum_packet_real_and_symmetric():
    psi = gaussian_packet(G, 0.0, 0.0, 1.0)
    assert np.max(np.abs(psi.psi.imag)) == 0.0
    a = psi.psi.real
    # grid point i and 1024 - i sit symmetrically about 0
    assert np.allclose(a[1:], a[1:][::-1], atol=1e-15)


@given(st.floats(-3, 3), st.floats(-2, 2), st.floats(0.5, 2.0), st.floats(0.1, 1.0))
def test_packet_norm_and_momentum(q0, p0, s, hbar):
    psi = gaussian_packet(G, q0, p0, s, hbar)
    assert abs(psi.norm() - 1) < 1e-12
    assert psi.mean_momentum() == pytest.approx(p0, abs=1e-8)


def test_density_examples():
    psi = gaussian_packet(G, 1.0, 0.5, 0.8)
    d = density(psi)
    assert abs(d.integral() - 1) < 1e-10
    assert d.variance() == pytest.approx(0.64, rel=1e-10)
    rotated = density(type(psi)(G, psi.psi * np.exp(0.7j), psi.hbar, psi.mass))
    assert np.allclose(d.values, rotated.values, rtol=1e-14, atol=0)


def test_free_spreading_matches_analytic_width():
    s, hbar, m, t = 1.0, 1.0, 1.0, 2.0
    psi = gaussian_packet(G, 0.0, 0.0, s, hbar, m)
    out = evolve(psi, free_potential(bounds=(-20, 20)), 0.01, 200)
    want = s * np.sqrt(1 + (hbar * t / (2 * m * s**2)) ** 2)
    assert np.sqrt(out.position_variance()) == pytest.approx(want, abs=1e-6)


def test_galilean_shift():
    p0, t = 1.5, 2.0
    psi = gaussian_packet(G, -3.0, p0, 1.0)
    out = evolve(psi, free_potential(bounds=(-20, 20)), 0.01, 200)
    assert out.mean_position() - psi.mean_position() == pytest.approx(p0 * t, abs=1e-6)


def test_harmonic_refocusing():
    T = 2 * np.pi
    psi = gaussian_packet(G, 2.0, 0.0, np.sqrt(0.5))  # coherent state for m = omega = hbar = 1
    out = evolve(psi, harmonic_potential(bounds=(-20, 20)), T / 6000, 6000)
    assert abs(psi.inner(out)) > 1 - 1e-6


def test_norm_drift_over_many_steps():
    psi = gaussian_packet(G, 0.0, 1.0, 1.0)
    out = evolve(psi, harmonic_potential(0.3, bounds=(-20, 20)), 0.01, 10_000)
    assert abs(out.norm() - psi.norm()) < 1e-9


def test_single_step_unitary():
    psi = gaussian_packet(G, 0.0, 1.0, 1.0)
    out = step_split_operator(psi, harmonic_potential(bounds=(-20, 20)), 0.01)
    assert abs(out.norm() - psi.norm()) < 1e-12


def test_phase_wrap_guard():
    psi = gaussian_packet(G, 0.0, 0.0, 1.0)
    steep = linear_potential(-100.0, bounds=(-20, 20))
    with pytest.raises(StepSizeError):
        step_split_operator(psi, steep, 0.01)


def test_strang_second_order():
    psi = gaussian_packet(G, 1.0, 0.5, 1.0)
    V = PotentialField(
        lambda q: 0.5 * q[..., 0] ** 2 + 0.01 * q[..., 0] ** 4,
        lambda q: q + 0.04 * q**3,
        None,
        1,
        (-20, 20),
        "anharmonic",
        self_test=False,
    )
    base, steps = 0.0025, 400
    ref = evolve(psi, V, base / 16, 16 * steps).psi
    errs = [np.linalg.norm(evolve(psi, V, base / k, k * steps).psi - ref) for k in (1, 2)]
    assert errs[0] / errs[1] == pytest.approx(4.0, abs=0.5)


class TestSpinors:
    psi = gaussian_packet(GridSpec(-10, 10, 512), 0.0, 0.0, 1.0)

    def test_zero_field_keeps_relative_norms(self):
        spin = SpinState.from_amplitudes(1, [0.6, 0.0, 0.8])
        sp = product_state(self.psi, spin)
        out = evolve_spinor(sp, free_potential(bounds=(-10, 10)), SpinPotential.zero(1, Z_AXIS), 0.01, 100)
        assert np.allclose(out.component_norms(), [0.36, 0.0, 0.64], atol=1e-12)

    def test_basis_mismatch_raises(self):
        sp = product_state(self.psi, SpinState.basis(0.5, 0.5, Z_AXIS))
        with pytest.raises(BasisMismatchError):
            step_spinor(sp, None, SpinPotential.zero(0.5, X_AXIS), 0.01)

    def test_linear_field_opposite_forces(self):
        g = 0.5
        sp = product_state(self.psi, SpinState.basis(0.5, 0.5, X_AXIS))
        sp = rebase_spinor(sp, Z_AXIS)
        H = SpinPotential.from_rule(0.5, Z_AXIS, lambda s: linear_potential(s * g, bounds=(-10, 10)))
        t = 1.0
        out = evolve_spinor(sp, None, H, 0.01, 100)
        up, down = out.component(0.5).normalized(), out.component(-0.5).normalized()
        # Ehrenfest with constant force +-g/2
        assert up.mean_momentum() == pytest.approx(0.5 * g * t, abs=1e-8)
        assert down.mean_momentum() == pytest.approx(-0.5 * g * t, abs=1e-8)
        assert np.allclose(out.component_norms(), [0.5, 0.5], atol=1e-10)

    def test_rebase_identity_and_round_trip(self):
        sp = product_state(self.psi, SpinState.basis(1, 0, Direction(0.4, 1.0)))
        same = rebase_spinor(sp, sp.axis)
        assert np.max(np.abs(same.components - sp.components)) < 1e-12
        back = rebase_spinor(rebase_spinor(sp, X_AXIS), sp.axis)
        fidelity = abs(np.vdot(back.components, sp.components) * sp.grid.dq)
        assert fidelity == pytest.approx(1.0, abs=1e-10)

    def test_rebase_component_norms_are_transition_probabilities(self):
        m, n = Direction(0.9, 0.2), Direction(2.1, 3.0)
        sp = product_state(self.psi, SpinState.basis(1, -1, m))
        out = rebase_spinor(sp, n)
        want = [transition_probability(s, n, -1, m, 1) for s in sigma_values(1)]
        assert np.allclose(out.component_norms(), want, atol=1e-12)
        assert abs(out.norm() - sp.norm()) < 1e-12

    def test_project_recovers_spatial_state(self):
        spin = SpinState.basis(0.5, 0.5, Direction(1.0, 0.5))
        sp = rebase_spinor(product_state(self.psi, spin), Z_AXIS)
        proj = sp.project(spin)
        assert abs(proj.inner(self.psi)) == pytest.approx(1.0, abs=1e-12)


def test_split_operator_object_reusable():
    psi = gaussian_packet(G, 0.0, 1.0, 1.0)
    op = SplitOperator(G, harmonic_potential(bounds=(-20, 20)).on_grid(G), 0.01, 1.0, 1.0)
    a = op.advance(psi.psi, 10)
    b = op.advance(op.advance(psi.psi, 5), 5)
    assert np.allclose(a, b, atol=1e-13)
