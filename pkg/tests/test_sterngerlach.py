import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bornlimit.classical import sample_ensemble_from_wavefunction
from bornlimit.errors import DomainError, EmptyBranchError, PrematureLabelError, SeparationError
from bornlimit.grid import GridSpec
from bornlimit.hilbert import X_AXIS, Z_AXIS, Direction, SpinState, sigma_values
from bornlimit.quantum import gaussian_packet, product_state
from bornlimit.sterngerlach import (
    Apparatus,
    Stage,
    analytic_cascade,
    build_sg_potential,
    cascade,
    envelope,
    filter_branch,
    label_specimen,
    recentre,
    run_apparatus_exact,
    run_apparatus_semiclassical,
    sample_cascade,
    sample_specimens,
)

from conftest import oracle_probability

# small beam that separates within T = 6 (see the module fixture)
GRID = GridSpec(-8.0, 40.0, 4096)
HBAR, DT, T = 0.05, 2.5e-3, 6.0


def _beam():
    return gaussian_packet(GRID, -4.0, 5.0, 0.35, HBAR)


def _app(axis=Z_AXIS, g=15.0):
    return Apparatus(axis, region=(0.0, 12.0), ramp=1.0, gradient=g)


@pytest.fixture(scope="module")
def split_x():
    """x+ beam through a z apparatus: two equal branches."""
    chi = SpinState.basis(0.5, 0.5, X_AXIS)
    return run_apparatus_exact(product_state(_beam(), chi), _app(), DT, T, record_every=40)


class TestPotential:
    def test_envelope_shape(self):
        q = np.array([-1.0, 0.0, 0.5, 1.0, 6.0, 11.0, 11.5, 12.0, 13.0])
        f, _, _ = envelope(q, (0.0, 12.0), 1.0)
        assert f.tolist()[:2] == [0.0, 0.0] and f[-2:].tolist() == [0.0, 0.0]
        assert f[2] == pytest.approx(0.5) and f[6] == pytest.approx(0.5)
        assert f[3] == f[4] == f[5] == 1.0

    def test_envelope_continuously_differentiable(self):
        h = 1e-7
        for edge in (0.0, 1.0, 11.0, 12.0):
            lo, hi = envelope(np.array([edge - h, edge + h]), (0.0, 12.0), 1.0, order=1)[:2]
            assert abs(lo[1] - lo[0]) < 1e-6
            assert abs(hi[1] - hi[0]) < 1e-5

    def test_envelope_derivative_matches_difference(self):
        q = np.linspace(-0.5, 12.5, 1001)
        h = 1e-6
        f1 = envelope(q, (0.0, 12.0), 1.0)[1]
        fd = (envelope(q + h, (0.0, 12.0), 1.0)[0] - envelope(q - h, (0.0, 12.0), 1.0)[0]) / (2 * h)
        assert np.max(np.abs(f1 - fd)) < 1e-6

    def test_zero_sigma_is_field_free(self):
        V = build_sg_potential(_app(), 0.0)
        q = np.linspace(-3, 15, 200)[:, None]
        assert np.all(V.value(q) == 0.0)
        assert np.all(V.gradient(q) == 0.0)

    @given(st.sampled_from([0.5, 1.0, 1.5]), st.floats(-3, 15))
    def test_opposite_branches_antisymmetric(self, s, q):
        a, b = build_sg_potential(_app(), s), build_sg_potential(_app(), -s)
        x = np.array([[q]])
        assert a.value(x)[0] == pytest.approx(-b.value(x)[0], abs=1e-12)

    def test_region_validation(self):
        with pytest.raises(DomainError):
            Apparatus(Z_AXIS, region=(0.0, 1.0), ramp=1.0)


class TestExact:
    def test_equal_split_and_separation(self, split_x):
        assert split_x.fractions == pytest.approx([0.5, 0.5], abs=1e-12)
        assert split_x.separated
        assert split_x.entry_time < split_x.separation_time

    def test_branch_norms_constant(self, split_x):
        drift = np.abs(split_x.history["norms"] - split_x.history["norms"][0])
        assert drift.max() < 1e-10

    def test_residual_collapses_after_separation(self, split_x):
        # before separation the cross term is 1 - sum |c|^4 = 0.5
        assert split_x.history["residual"][0] == pytest.approx(0.5, abs=1e-10)
        assert split_x.residual_after_separation() < 1e-3
        assert split_x.residual_before_separation() > split_x.residual_after_separation()

    def test_fast_branch_ahead(self, split_x):
        up, down = (split_x.final.component(s).normalized() for s in (0.5, -0.5))
        assert up.mean_position() > down.mean_position() + 3.0

    @pytest.mark.parametrize("j", [0.5, 1.0, 1.5])
    def test_fractions_match_oracle(self, j):
        m, n = Direction(1.1, 0.4), Direction(0.5, 2.0)
        chi = SpinState.basis(j, j - 1 if j > 0.5 else j, m)
        app = Apparatus(n, region=(0.0, 4.0), ramp=1.0, gradient=7.5 / j)
        psi = gaussian_packet(GridSpec(-8, 24, 1024), -4.0, 5.0, 0.5, 0.1)
        bs = run_apparatus_exact(product_state(psi, chi), app, 4e-3, 0.4, record_every=20)
        want = [oracle_probability(j, s, (n.theta, n.phi), chi_mu(chi), (m.theta, m.phi)) for s in sigma_values(j)]
        assert np.allclose(bs.fractions, want, atol=1e-10)

    def test_unnormalized_input_rejected(self):
        sp = product_state(_beam(), SpinState.basis(0.5, 0.5, Z_AXIS))
        from dataclasses import replace

        with pytest.raises(DomainError):
            run_apparatus_exact(replace(sp, components=2 * sp.components), _app(), DT, 1.0)

    def test_fractional_duration_rejected(self):
        sp = product_state(_beam(), SpinState.basis(0.5, 0.5, Z_AXIS))
        with pytest.raises(DomainError):
            run_apparatus_exact(sp, _app(), DT, 1.0001)


def chi_mu(chi):
    return chi.j - 1 if chi.j > 0.5 else chi.j


class TestFilter:
    def test_filtered_beam(self, split_x):
        out = filter_branch(split_x, -0.5)
        assert out.kept_fraction == pytest.approx(0.5, abs=1e-12)
        assert out.discarded_fraction == pytest.approx(0.5, abs=1e-12)
        assert out.beam.norm() == pytest.approx(1.0, abs=1e-12)
        assert out.beam.component_norms()[0] == 0.0
        assert out.spin.axis == Z_AXIS

    def test_unseparated_refused(self):
        sp = product_state(_beam(), SpinState.basis(0.5, 0.5, X_AXIS))
        early = run_apparatus_exact(sp, _app(), DT, 0.5, record_every=40)
        assert not early.separated
        with pytest.raises(SeparationError):
            filter_branch(early, 0.5)

    def test_empty_branch_refused(self):
        sp = product_state(_beam(), SpinState.basis(0.5, 0.5, Z_AXIS))
        bs = run_apparatus_exact(sp, _app(), DT, T, record_every=200)
        with pytest.raises(EmptyBranchError):
            filter_branch(bs, -0.5)

    def test_recentre_keeps_populations(self, split_x):
        beam = filter_branch(split_x, 0.5).beam
        moved = recentre(beam, -4.0, rewind=T)
        up = moved.component(0.5).normalized()
        assert up.mean_position() == pytest.approx(-4.0, abs=1e-9)
        assert np.allclose(moved.component_norms(), beam.component_norms(), atol=1e-13)


class TestCascade:
    def test_analytic_z_x_z(self):
        up = SpinState.basis(0.5, 0.5, Z_AXIS)
        stages = [Stage(_app(Z_AXIS), 0.5), Stage(_app(X_AXIS), 0.5), Stage(_app(Z_AXIS))]
        res = analytic_cascade(up, stages)
        assert res.final_fractions() == pytest.approx({0.5: 0.25, -0.5: 0.25}, abs=1e-14)

    @given(st.floats(0.0, 3.0), st.floats(0.0, np.pi))
    def test_analytic_products_of_overlaps(self, a, b):
        up = SpinState.basis(0.5, 0.5, Z_AXIS)
        n1, n2 = Direction(a, 0.0), Direction(b, 1.0)
        res = analytic_cascade(up, [Stage(_app(n1), 0.5), Stage(_app(n2))])
        p1 = oracle_probability(0.5, 0.5, (a, 0.0), 0.5, (0.0, 0.0))
        p2 = oracle_probability(0.5, 0.5, (b, 1.0), 0.5, (a, 0.0))
        assert res.final_fractions()[0.5] == pytest.approx(p1 * p2, abs=1e-12)

    def test_same_axis_repeat_is_certain(self):
        chi = SpinState.basis(0.5, 0.5, X_AXIS)
        res, sets = cascade(_beam(), chi, [Stage(_app(), 0.5), Stage(_app())], DT, T, record_every=200)
        assert res.stages[1].fractions == pytest.approx((1.0, 0.0), abs=1e-12)
        assert res.final_fractions()[0.5] == pytest.approx(0.5, abs=1e-12)
        assert all(bs.separated for bs in sets[:1])

    def test_last_stage_only_may_keep_all(self):
        with pytest.raises(DomainError):
            analytic_cascade(SpinState.basis(0.5, 0.5, Z_AXIS), [Stage(_app()), Stage(_app())])
        with pytest.raises(DomainError):
            analytic_cascade(SpinState.basis(0.5, 0.5, Z_AXIS), [])


class TestSpecimens:
    def test_label_requires_separation(self, split_x):
        with pytest.raises(PrematureLabelError):
            label_specimen(split_x, 0, 0.5, seed=1, time=split_x.separation_time - 0.1)
        rec = label_specimen(split_x, 0, -0.5, seed=1)
        assert rec.sigma == -0.5 and rec.time == split_x.separation_time

    def test_sampling_requires_separation(self):
        sp = product_state(_beam(), SpinState.basis(0.5, 0.5, X_AXIS))
        early = run_apparatus_exact(sp, _app(), DT, 0.5, record_every=40)
        with pytest.raises(PrematureLabelError):
            sample_specimens(early, 10, seed=0)

    def test_deterministic_and_within_binomial_bound(self, split_x):
        a = sample_specimens(split_x, 20_000, seed=42)
        b = sample_specimens(split_x, 20_000, seed=42)
        assert [r.two_sigma for r in a.records] == [r.two_sigma for r in b.records]
        assert a.flagged == ()
        assert abs(a.empirical_fraction(0.5) - 0.5) < 4 * np.sqrt(0.25 / 20_000)

    def test_certain_outcome(self):
        res = analytic_cascade(SpinState.basis(0.5, 0.5, Z_AXIS), [Stage(_app())])
        sample = sample_cascade(res, 1000, seed=3)
        assert sample.empirical == (1.0, 0.0)
        assert sample.flagged == ()

    def test_cascade_specimens_track_survivors(self):
        stages = [Stage(_app(Z_AXIS), 0.5), Stage(_app(X_AXIS), 0.5), Stage(_app(Z_AXIS))]
        res = analytic_cascade(SpinState.basis(0.5, 0.5, Z_AXIS), stages)
        sample = sample_cascade(res, 40_000, seed=8)
        se = np.sqrt(0.25 * 0.75 / 40_000)
        assert all(abs(e - 0.25) < 4 * se for e in sample.empirical)
        reached_last = {r.specimen_id for r in sample.records if r.stage == 2}
        assert abs(len(reached_last) / 40_000 - 0.5) < 4 * np.sqrt(0.25 / 40_000)


class TestSemiclassical:
    def test_zero_gradient_branches_coincide(self):
        psi = _beam()
        ens = sample_ensemble_from_wavefunction(psi, 20_000, 0, "local-spread")
        chi = SpinState.basis(0.5, 0.5, X_AXIS)
        bs = run_apparatus_semiclassical(ens, chi, _app(g=0.0), 1e-2, 2.0, GRID, coarsen=16)
        assert np.array_equal(bs.densities[0].values, bs.densities[1].values)
        assert not bs.separated

    @pytest.mark.filterwarnings("ignore:wavefunction is WKB-valid")
    def test_plateau_momentum_matches_exact(self):
        # inside the plateau each branch carries sqrt(p0^2 + 2 sigma g)
        psi = _beam()
        chi = SpinState.basis(0.5, 0.5, X_AXIS)
        ex = run_apparatus_exact(product_state(psi, chi), _app(), DT, 2.0, record_every=800)
        ens = sample_ensemble_from_wavefunction(psi, 100_000, 3, "local-spread")
        sc = run_apparatus_semiclassical(ens, chi, _app(), 1e-2, 2.0, GRID, coarsen=16)
        for i, s in enumerate((0.5, -0.5)):
            exact_p = ex.final.component(s).normalized().mean_momentum()
            e = sc.ensembles[i]
            semi_p = float(np.sum(e.weights * e.momenta[-1, :, 0]))
            assert abs(exact_p - semi_p) < 1e-3
            assert exact_p == pytest.approx(np.sqrt(25 + 30 * s), abs=1e-2)
