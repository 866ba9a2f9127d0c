"""Acceptance suite.

Each criterion prints one ``[acceptance k] PASS|FAIL ...`` line at its stated
tolerance and then asserts.  Criteria 3, 5 and 9 share one session run of the
shipped scenarios through the command line.
"""

import csv
import hashlib

import numpy as np
import pytest

from bornlimit.classical import (
    bin_density,
    free_potential,
    harmonic_potential,
    integrate_trajectory,
    propagate_ensemble,
    quartic_potential,
    sample_ensemble_from_wavefunction,
)
from bornlimit.cli import main
from bornlimit.correspondence import compare
from bornlimit.epr import ChshSettings, chsh, optimal_settings, sampled_chsh, singlet_pair
from bornlimit.grid import GridSpec
from bornlimit.hilbert import X_AXIS, Z_AXIS, Direction, SpinState, sigma_values
from bornlimit.classical import PotentialField
from bornlimit.quantum import density, evolve, gaussian_packet, product_state
from bornlimit.sterngerlach import EPS_SEP, Apparatus, Stage, analytic_cascade, run_apparatus_exact, sample_cascade

from conftest import SCENARIOS, oracle_probability, random_direction

pytestmark = pytest.mark.slow

SHIPPED = sorted(SCENARIOS.glob("*.json"))


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {k}] {'PASS' if ok else 'FAIL'} {detail}")
        assert ok, detail

    return emit


def _digest(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.iterdir())}


@pytest.fixture(scope="session")
def shipped_runs(tmp_path_factory):
    """Every shipped scenario run with one and with four threads."""
    out = {}
    for threads in (1, 4):
        for path in SHIPPED:
            d = tmp_path_factory.mktemp(f"{path.stem}-t{threads}")
            rc = main(["run", str(path), "--out-dir", str(d), "--threads", str(threads)])
            out[(path.stem, threads)] = (rc, d)
    return out


def _read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_1_born_rule_fractions(report, rng):
    grid = GridSpec(-8.0, 24.0, 1024)
    beam = gaussian_packet(grid, -4.0, 5.0, 0.5, 0.1)
    worst, runs = 0.0, 0
    for j in (0.5, 1.0):
        for _ in range(20):
            m, n = random_direction(rng), random_direction(rng)
            mu = float(rng.choice(sigma_values(j)))
            app = Apparatus(n, region=(0.0, 8.0), ramp=1.0, gradient=7.5 / j)
            bs = run_apparatus_exact(product_state(beam, SpinState.basis(j, mu, m)), app, 4e-3, 3.0, record_every=50)
            want = np.array([oracle_probability(j, s, (n.theta, n.phi), mu, (m.theta, m.phi)) for s in sigma_values(j)])
            worst = max(worst, float(np.max(np.abs(bs.history["norms"] - want))))
            runs += 1
    report(1, worst < 1e-8, f"max |fraction - oracle| = {worst:.2e} over {runs} runs and all recorded times (tol 1e-8)")


def test_2_sequential_fractions(report):
    thetas = [0.0, np.pi / 6, np.pi / 4, np.pi / 3, np.pi / 2, np.pi]
    incident = SpinState.basis(0.5, 0.5, X_AXIS)
    count = 100_000
    worst_analytic, worst_z, ok = 0.0, 0.0, True
    for k, th in enumerate(thetas):
        stages = [Stage(Apparatus(Z_AXIS), 0.5), Stage(Apparatus(Direction(th, 0.0)))]
        res = analytic_cascade(incident, stages)
        want = np.cos(th / 2) ** 2
        worst_analytic = max(worst_analytic, abs(res.stages[1].fractions[0] - want))
        sample = sample_cascade(res, count, seed=1000 + k)
        second = [r for r in sample.records if r.stage == 1]
        n = len(second)
        p_hat = sum(r.two_sigma == 1 for r in second) / n
        se = np.sqrt(want * (1 - want) / n)
        if se == 0.0:
            ok &= p_hat == want
        else:
            z = abs(p_hat - want) / se
            worst_z = max(worst_z, z)
            ok &= z < 4
    ok &= worst_analytic < 1e-8
    report(2, ok, f"analytic max error {worst_analytic:.1e} (tol 1e-8); sampled max |z| = {worst_z:.2f} at 1e5 specimens (tol 4)")


def test_3_branch_norm_conservation(report, shipped_runs):
    worst, files = 0.0, 0
    for path in SHIPPED:
        rc, d = shipped_runs[(path.stem, 1)]
        assert rc == 0
        for hist in list(d.glob("*_exact_history.csv")) + list(d.glob("*_stage*_history.csv")):
            rows = _read_rows(hist)
            cols = [c for c in rows[0] if c.startswith("norm[")]
            norms = np.array([[float(r[c]) for c in cols] for r in rows])
            worst = max(worst, float(np.max(np.abs(norms - norms[0]))))
            files += 1
    report(3, files > 0 and worst < 1e-10, f"max per-branch norm drift {worst:.2e} across {files} shipped histories (tol 1e-10)")


@pytest.mark.filterwarnings("ignore:wavefunction is WKB-valid")
def test_4_quadratic_classical_limit(report):
    grid = GridSpec(-20.0, 20.0, 512)
    psi = gaussian_packet(grid, -2.0, 1.0, 0.7, 1.0)
    ens = sample_ensemble_from_wavefunction(psi, 1_000_000, 7, "local-spread")
    cases = (
        ("free", free_potential(bounds=(-20, 20)), 0.01, [0.0, 1.0, 2.0, 4.0]),
        ("harmonic", harmonic_potential(bounds=(-20, 20)), np.pi / 400, [0.0, np.pi / 4, np.pi / 2, np.pi, 2 * np.pi]),
    )
    worst, where = 0.0, ""
    for name, V, dt, times in cases:
        out = propagate_ensemble(ens, V, dt, times[-1], record_times=times[1:-1])
        for t in times:
            exact = density(evolve(psi, V, dt, int(round(t / dt)))) if t else density(psi)
            k = int(np.argmin(np.abs(out.times - t)))
            l1 = compare(bin_density(out, out.times[k], grid).coarsen(4), exact.coarsen(4))
            if l1 > worst:
                worst, where = l1, f"{name} t={t:.3g}"
    report(4, worst < 0.01, f"max L1 = {worst:.4f} ({where}) with 1e6 members (tol 0.01)")


def test_5_hbar_convergence(report, shipped_runs):
    rc, d = shipped_runs[("correspondence-sweep", 1)]
    assert rc == 0
    rows = _read_rows(d / "correspondence-sweep.csv")
    hbar = [float(r["hbar"]) for r in rows]
    l1 = np.array([float(r["l1_distance"]) for r in rows])
    val = np.array([float(r["validity_fraction"]) for r in rows])
    halved = np.allclose(np.array(hbar[1:]) / np.array(hbar[:-1]), 0.5)
    ok = len(rows) >= 4 and halved and bool(np.all(l1[1:] <= 1.1 * l1[:-1])) and bool(np.all(np.diff(val) >= 0))
    report(
        5,
        ok,
        "L1 = [" + ", ".join(f"{x:.4f}" for x in l1) + "], validity = [" + ", ".join(f"{x:.3f}" for x in val) + f"] over hbar {hbar}",
    )


def test_6_mixture_after_separation(report):
    grid = GridSpec(-8.0, 40.0, 4096)
    beam = gaussian_packet(grid, -4.0, 5.0, 0.35, 0.05)
    app = Apparatus(Z_AXIS, region=(0.0, 12.0), ramp=1.0, gradient=15.0)
    chi = SpinState.basis(0.5, 0.5, Direction(1.2, 0.3))
    bs = run_apparatus_exact(product_state(beam, chi), app, 2.5e-3, 6.0, record_every=40)
    after, before = bs.residual_after_separation(), bs.residual_before_separation()
    total = np.sum(np.abs(bs.final.components) ** 2, axis=0)
    mixture = sum(f * d.values for f, d in zip(bs.fractions, bs.densities) if d is not None)
    literal = float(np.sum(np.abs(total - mixture)) * grid.dq)
    ok = bs.separated and after < 10 * EPS_SEP and before > after
    report(
        6,
        ok,
        f"cross-term residual {after:.2e} after separation (tol {10 * EPS_SEP:.0e}), {before:.3f} before; "
        f"|rho - sum |c|^2 w|_1 = {literal:.1e}",
    )


def test_7_chsh(report, rng):
    pair = singlet_pair()
    exact = chsh(pair, optimal_settings())
    sampled = sampled_chsh(pair, optimal_settings(), 100_000, seed=20240611)
    band = abs(sampled.S - 2 * np.sqrt(2)) <= 4 * sampled.s_error
    margin = sampled.margin_in_errors()
    top = max(chsh(pair, ChshSettings(*(random_direction(rng) for _ in range(4)))).S for _ in range(10_000))
    ok = abs(exact.S - 2 * np.sqrt(2)) < 1e-9 and band and margin >= 4 and top <= 2 * np.sqrt(2) + 1e-12
    report(
        7,
        ok,
        f"analytic S = {exact.S:.12f}; sampled S = {sampled.S:.4f} +- {sampled.s_error:.4f} ({margin:.0f} SE above 2); "
        f"max S over 1e4 random settings = {top:.6f}",
    )


def test_8_solver_hygiene(report):
    grid = GridSpec(-20.0, 20.0, 1024)
    psi = gaussian_packet(grid, 0.0, 1.0, 1.0)
    norm_drift = abs(evolve(psi, harmonic_potential(0.3, bounds=(-20, 20)), 0.01, 10_000).norm() - psi.norm())

    V = quartic_potential(1.0, 0.5)
    energy_drift = integrate_trajectory(1.0, 0.0, V, 1e-3, 10.0).energy_drift(V)

    def leap(dt):
        tr = integrate_trajectory(1.0, 0.0, V, dt, 2.0)
        return np.array([tr.positions[-1, 0], tr.momenta[-1, 0]])

    ref = leap(2e-5)
    leap_ratio = np.linalg.norm(leap(0.02) - ref) / np.linalg.norm(leap(0.01) - ref)

    anh = PotentialField(
        lambda q: 0.5 * q[..., 0] ** 2 + 0.01 * q[..., 0] ** 4, lambda q: q + 0.04 * q**3, None, 1, (-20, 20), "anharmonic"
    )
    wave = gaussian_packet(grid, 1.0, 0.5, 1.0)
    exact = evolve(wave, anh, 0.0025 / 16, 16 * 400).psi
    e1 = np.linalg.norm(evolve(wave, anh, 0.0025, 400).psi - exact)
    e2 = np.linalg.norm(evolve(wave, anh, 0.00125, 800).psi - exact)
    split_ratio = e1 / e2
    ok = norm_drift < 1e-9 and energy_drift < 1e-6 and abs(leap_ratio - 4) <= 0.5 and abs(split_ratio - 4) <= 0.5
    report(
        8,
        ok,
        f"norm drift {norm_drift:.1e} (tol 1e-9); energy drift {energy_drift:.1e} (tol 1e-6); "
        f"dt-halving ratio leapfrog {leap_ratio:.3f}, split-operator {split_ratio:.3f} (4 +- 0.5)",
    )


def test_9_determinism(report, shipped_runs):
    mismatched, files = [], 0
    for path in SHIPPED:
        rc1, d1 = shipped_runs[(path.stem, 1)]
        rc4, d4 = shipped_runs[(path.stem, 4)]
        a, b = _digest(d1), _digest(d4)
        files += len(a)
        if rc1 or rc4 or a != b:
            mismatched.append(path.stem)
    report(9, not mismatched, f"{files} output files from {len(SHIPPED)} scenarios hash identically at 1 and 4 threads; mismatches: {mismatched}")
