"""Stern-Gerlach beams: branching, populations, filters, cascades, specimens.

The apparatus potential is diagonal along its axis ``n`` with eigenvalue
potentials ``V_sigma(q) = -sigma * g * envelope(q)``.  The envelope is a
plateau with sine-squared ramps (C1, exactly zero outside the field region).
A beam crossing the region along ``q`` is sped up or slowed down according
to ``sigma``; after it leaves, the branches ride the same speed but are
displaced by their different transit times, which is what separates them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .classical import (
    PotentialField,
    TrajectoryEnsemble,
    bin_density,
    propagate_ensemble,
)
from .errors import DomainError, EmptyBranchError, PrematureLabelError, SeparationError
from .grid import DensityField, GridSpec
from .hilbert import (
    Direction,
    SpinState,
    overlap_amplitude,
    rotation_between,
    sigma_index,
    sigma_values,
    twice,
)
from .quantum import (
    GridWaveFunction,
    SpinorWaveFunction,
    SpinPotential,
    evolve_spinor,
    product_state,
    rebase_spinor,
)

__all__ = [
    "Apparatus",
    "BranchSet",
    "FilteredBeam",
    "SpecimenRecord",
    "SpecimenSample",
    "Stage",
    "StageResult",
    "CascadeResult",
    "EPS_SEP",
    "envelope",
    "build_sg_potential",
    "spin_potential",
    "run_apparatus_exact",
    "run_apparatus_semiclassical",
    "filter_branch",
    "cascade",
    "analytic_cascade",
    "sample_specimens",
    "sample_cascade",
    "label_specimen",
    "recentre",
]

EPS_SEP = 1e-4
REGION_THRESHOLD = 1e-6


@dataclass(frozen=True)
class Apparatus:
    """Field region ``[q_a, q_b]`` whose potential is diagonal along ``axis``."""

    axis: Direction
    region: tuple = (0.0, 16.0)
    ramp: float = 2.0
    gradient: float = 15.0

    def __post_init__(self):
        qa, qb = (float(x) for x in self.region)
        object.__setattr__(self, "region", (qa, qb))
        if self.ramp <= 0 or qb - qa < 2 * self.ramp:
            raise DomainError(f"region {self.region} too short for ramps of width {self.ramp}")

    def envelope(self, q) -> np.ndarray:
        return envelope(q, self.region, self.ramp)[0]


def envelope(q, region, ramp, order: int = 2):
    """Envelope and derivatives up to ``order``: ``(f, f', f'')``.

    Trigonometry is only evaluated inside the two ramps; the plateau is 1
    and everything outside the region is exactly 0.
    """
    q = np.asarray(q, dtype=float)
    qa, qb = region
    k = np.pi / (2 * ramp)
    out = [np.zeros(q.shape) for _ in range(order + 1)]
    out[0][(q >= qa + ramp) & (q <= qb - ramp)] = 1.0
    for edge, sign in ((qa, 1.0), (qb, -1.0)):
        s = sign * (q - edge) / ramp
        idx = np.nonzero((s > 0) & (s < 1))
        if not idx[0].size:
            continue
        x = np.pi * s[idx]
        out[0][idx] = np.sin(0.5 * x) ** 2
        if order >= 1:
            out[1][idx] = sign * k * np.sin(x)
        if order >= 2:
            out[2][idx] = 2 * k * k * np.cos(x)
    return tuple(out)


def build_sg_potential(app: Apparatus, sigma, bounds=None) -> PotentialField:
    """Branch potential ``V_sigma(q) = -sigma * g * envelope(q)``.

    ``bounds`` default to the field region padded by ten region lengths.
    """
    if bounds is None:
        qa, qb = app.region
        bounds = (qa - 10 * (qb - qa), qb + 10 * (qb - qa))
    c = -float(twice(sigma)) / 2 * app.gradient
    region, ramp = app.region, app.ramp
    return PotentialField(
        lambda q: c * envelope(q[..., 0], region, ramp, 0)[0],
        lambda q: c * envelope(q, region, ramp, 1)[1],
        lambda q: (c * envelope(q, region, ramp, 2)[2])[..., None],
        1,
        bounds,
        f"sg[{sigma}]",
    )


def spin_potential(app: Apparatus, j, bounds=None) -> SpinPotential:
    return SpinPotential.from_rule(j, app.axis, lambda s: build_sg_potential(app, s, bounds))


def _region_mass(density: np.ndarray, grid: GridSpec, region) -> float:
    q = grid.points
    inside = (q >= region[0]) & (q <= region[1])
    return float(np.sum(density[inside]) * grid.dq)


def _pair_overlap(amps: Sequence[np.ndarray], dq: float) -> float:
    """Largest ``int |psi_a| |psi_b| dq`` over pairs of normalized branch amplitudes."""
    worst = 0.0
    for a in range(len(amps)):
        for b in range(a + 1, len(amps)):
            worst = max(worst, float(np.sum(amps[a] * amps[b]) * dq))
    return worst


@dataclass
class BranchSet:
    """Outcome of one apparatus: per-branch populations and spatial densities.

    ``fractions[i]`` is ``|c_sigma|^2`` for the i-th ``sigma`` in
    ``j, ..., -j``; ``densities[i]`` is the branch density normalized to one
    (``None`` when the branch is empty).  ``history`` holds the recorded
    times with per-branch norms, the largest pairwise overlap and the
    interference residual.
    """

    kind: str
    two_j: int
    axis: Direction
    amplitudes: np.ndarray
    fractions: np.ndarray
    densities: list
    separated: bool
    separation_time: Optional[float]
    entry_time: Optional[float]
    exit_time: Optional[float]
    history: dict
    grid: GridSpec
    analysis_state: SpinState
    final: Optional[SpinorWaveFunction] = None
    ensembles: Optional[list] = None
    t: float = 0.0

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def sigmas(self) -> np.ndarray:
        return sigma_values(self.j)

    def fraction(self, sigma) -> float:
        return float(self.fractions[sigma_index(self.j, sigma)])

    def occupied(self) -> list:
        return [i for i, f in enumerate(self.fractions) if f > 1e-14]

    def combined_density(self) -> DensityField:
        """Mixture ``sum_sigma |c_sigma|^2 w_sigma``."""
        vals = np.zeros(self.grid.count)
        for f, d in zip(self.fractions, self.densities):
            if d is not None:
                vals += f * d.values
        return DensityField(self.grid, vals, self.t)

    def residual_before_separation(self) -> float:
        """Largest recorded interference residual before the separation time."""
        h = self.history
        times, res = np.asarray(h["times"]), np.asarray(h["residual"])
        cut = np.inf if self.separation_time is None else self.separation_time
        pre = res[times < cut]
        return float(pre.max()) if pre.size else float("nan")

    def residual_after_separation(self) -> float:
        h = self.history
        if self.separation_time is None:
            return float("nan")
        times, res = np.asarray(h["times"]), np.asarray(h["residual"])
        return float(res[times >= self.separation_time].max())


def _dominant_spin(psi: SpinorWaveFunction) -> SpinState:
    """Leading eigenvector of the reduced internal density matrix."""
    C = psi.components
    rho = C @ C.conj().T * psi.grid.dq
    w, v = np.linalg.eigh(rho)
    vec = v[:, -1]
    k = int(np.argmax(np.abs(vec)))
    vec = vec * np.exp(-1j * np.angle(vec[k]))
    return SpinState(psi.two_j, psi.axis, vec / np.linalg.norm(vec))


def _interference_residual(comps: np.ndarray, weights: np.ndarray, dq: float) -> float:
    """L1 gap between the density projected on an analysis state and its mixture form.

    ``weights`` are ``<chi_a|chi_sigma(n)>``; ``comps`` are the unnormalized
    branch amplitudes ``c_sigma psi_sigma``.
    """
    coherent = np.abs(weights @ comps) ** 2
    mixture = np.abs(weights) ** 2 @ (np.abs(comps) ** 2)
    return float(np.sum(np.abs(coherent - mixture)) * dq)


def run_apparatus_exact(
    psi_in: SpinorWaveFunction,
    app: Apparatus,
    dt: float,
    T: float,
    V0: Optional[PotentialField] = None,
    record_every: int = 10,
    eps_sep: float = EPS_SEP,
    threads: int = 1,
) -> BranchSet:
    """Carry a spinor beam through ``app`` with the exact solver.

    The spinor is rebased to the apparatus axis and each component evolved
    under ``V0 + V_sigma``.  Every ``record_every`` steps we log the branch
    norms, the largest pairwise overlap ``int |psi_s||psi_s'|`` of the
    normalized branches, and the interference residual of the density
    projected on the incoming internal state.  The branches count as
    separated once that overlap drops below ``eps_sep``.
    """
    steps = int(round(T / dt))
    if steps <= 0 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise DomainError(f"duration {T} is not a whole number of steps of {dt}")
    norm = psi_in.norm()
    if abs(norm - 1.0) > 1e-10:
        raise DomainError(f"incident spinor not normalized (norm {norm!r})")
    chi_a = _dominant_spin(psi_in)
    psi = rebase_spinor(psi_in, app.axis)
    c = rotation_between(psi.j, chi_a.axis, app.axis).entries @ chi_a.amplitudes
    weights = c.conj()  # <chi_a|chi_sigma(n)>
    H = spin_potential(app, psi.j)
    dq = psi.grid.dq

    hist = {"times": [], "norms": [], "overlap": [], "residual": [], "region_mass": []}

    def record(state: SpinorWaveFunction):
        comps = state.components
        norms = np.sum(np.abs(comps) ** 2, axis=1) * dq
        amps = [np.abs(comps[i]) / np.sqrt(norms[i]) for i in range(len(norms)) if norms[i] > 1e-14]
        hist["times"].append(state.t)
        hist["norms"].append(norms)
        hist["overlap"].append(_pair_overlap(amps, dq))
        hist["residual"].append(_interference_residual(comps, weights, dq))
        hist["region_mass"].append(_region_mass(np.sum(np.abs(comps) ** 2, axis=0), state.grid, app.region))

    record(psi)
    final = evolve_spinor(psi, V0, H, dt, steps, record_every=record_every, callback=record)
    hist = {k: np.array(v) for k, v in hist.items()}
    sep = hist["overlap"] < eps_sep
    sep_time = float(hist["times"][np.argmax(sep)]) if sep.any() else None
    inside = hist["region_mass"] > REGION_THRESHOLD
    entry = float(hist["times"][np.argmax(inside)]) if inside.any() else None
    exit_ = float(hist["times"][len(inside) - 1 - np.argmax(inside[::-1])]) if inside.any() else None
    fractions = final.component_norms()
    densities = [
        DensityField(final.grid, np.abs(final.components[i]) ** 2 / fractions[i], final.t) if fractions[i] > 1e-14 else None
        for i in range(len(fractions))
    ]
    return BranchSet(
        kind="exact",
        two_j=psi.two_j,
        axis=app.axis,
        amplitudes=c,
        fractions=fractions,
        densities=densities,
        separated=bool(sep[-1]),
        separation_time=sep_time,
        entry_time=entry,
        exit_time=exit_,
        history=hist,
        grid=final.grid,
        analysis_state=chi_a,
        final=final,
        t=final.t,
    )


def run_apparatus_semiclassical(
    ensemble_in: TrajectoryEnsemble,
    chi_in: SpinState,
    app: Apparatus,
    dt: float,
    T: float,
    grid: GridSpec,
    V0: Optional[PotentialField] = None,
    record_every: int = 0,
    eps_sep: float = EPS_SEP,
    coarsen: int = 1,
) -> BranchSet:
    """Semiclassical counterpart of :func:`run_apparatus_exact`.

    Populations come from the internal-state overlaps; each occupied branch
    propagates its own copy of the incident ensemble under ``V_sigma``.
    Densities are binned on ``grid`` and separation is judged from the
    overlap of ``sqrt(w_s w_s')`` on the grid coarsened by ``coarsen``.
    """
    j = chi_in.j
    sig = sigma_values(j)
    c = np.array([overlap_amplitude(chi_in, app.axis, s) for s in sig])
    fractions = np.abs(c) ** 2
    steps = int(round(T / dt))
    rec = [] if record_every <= 0 else [k * dt for k in range(record_every, steps, record_every)]
    ensembles = []
    for s, f in zip(sig, fractions):
        if f <= 1e-14:
            ensembles.append(None)
            continue
        V = build_sg_potential(app, s, bounds=_ens_bounds(grid))
        if V0 is not None:
            V = V + V0
        ensembles.append(propagate_ensemble(ensemble_in, V, dt, T, record_times=rec))
    t0 = ensemble_in.t
    times = [t0] + [t0 + r for r in rec] + [t0 + T]
    overlaps, region = [], []
    for t in times:
        dens = [bin_density(e, t, grid).coarsen(coarsen) for e in ensembles if e is not None]
        amps = [np.sqrt(d.values) for d in dens]
        overlaps.append(_pair_overlap(amps, dens[0].grid.dq))
        occ = [f for f in fractions if f > 1e-14]
        total = sum(f * d.values for f, d in zip(occ, dens))
        region.append(_region_mass(total, dens[0].grid, app.region))
    overlaps, region = np.array(overlaps), np.array(region)
    sep = overlaps < eps_sep
    inside = region > REGION_THRESHOLD
    densities = [None if e is None else bin_density(e, t0 + T, grid) for e in ensembles]
    return BranchSet(
        kind="semiclassical",
        two_j=chi_in.two_j,
        axis=app.axis,
        amplitudes=c,
        fractions=fractions,
        densities=densities,
        separated=bool(sep[-1]),
        separation_time=float(np.array(times)[np.argmax(sep)]) if sep.any() else None,
        entry_time=float(np.array(times)[np.argmax(inside)]) if inside.any() else None,
        exit_time=float(np.array(times)[len(inside) - 1 - np.argmax(inside[::-1])]) if inside.any() else None,
        history={
            "times": np.array(times),
            "norms": np.tile(fractions, (len(times), 1)),
            "overlap": overlaps,
            "residual": np.full(len(times), np.nan),
            "region_mass": region,
        },
        grid=grid,
        analysis_state=chi_in,
        ensembles=ensembles,
        t=t0 + T,
    )


def _ens_bounds(grid: GridSpec):
    return (grid.lower - 0.5 * grid.dq, grid.upper - 0.5 * grid.dq)


@dataclass(frozen=True)
class FilteredBeam:
    """A single surviving branch with its internal state ``chi_rho(n)``."""

    beam: object
    spin: SpinState
    kept_fraction: float
    discarded_fraction: float


def filter_branch(branches: BranchSet, rho) -> FilteredBeam:
    """Keep only branch ``rho``, renormalized; refuse unseparated input."""
    if not branches.separated:
        raise SeparationError("branches have not separated; filtering would remove interference terms")
    i = sigma_index(branches.j, rho)
    kept = float(branches.fractions[i])
    if kept < 1e-14:
        raise EmptyBranchError(f"branch sigma={rho} carries no population")
    spin = SpinState.basis(branches.j, rho, branches.axis)
    if branches.kind == "exact":
        comps = np.zeros_like(branches.final.components)
        comps[i] = branches.final.components[i] / np.sqrt(kept)
        beam = replace(branches.final, components=comps)
    else:
        beam = branches.ensembles[i]
    return FilteredBeam(beam, spin, kept, 1.0 - kept)


def recentre(psi: SpinorWaveFunction, position: float, rewind: float = 0.0) -> SpinorWaveFunction:
    """Beam optics between two apparatuses.

    Undo ``rewind`` time units of free flight (the free propagator run
    backwards), then translate the spinor rigidly so its mean position sits
    at ``position``.  Both are spectral, unitary, and act identically on
    every internal component, so branch populations are untouched.
    """
    k = psi.grid.wavenumbers
    spec = np.fft.fft(psi.components, axis=1)
    if rewind:
        spec = spec * np.exp(0.5j * psi.hbar * k**2 * rewind / psi.mass)
    comps = np.fft.ifft(spec, axis=1)
    dens = np.sum(np.abs(comps) ** 2, axis=0)
    mean = float(np.sum(psi.grid.points * dens) / np.sum(dens))
    spec = np.fft.fft(comps, axis=1) * np.exp(-1j * k * (position - mean))
    return replace(psi, components=np.fft.ifft(spec, axis=1))


@dataclass(frozen=True)
class Stage:
    """An apparatus plus the branch kept afterwards (``None``: keep all, final stage)."""

    apparatus: Apparatus
    keep: Optional[float] = None


@dataclass(frozen=True)
class StageResult:
    apparatus: Apparatus
    keep: Optional[float]
    sigmas: tuple
    fractions: tuple
    cumulative: tuple
    separation_time: Optional[float] = None
    residual_before: float = float("nan")
    residual_after: float = float("nan")


@dataclass(frozen=True)
class CascadeResult:
    mode: str
    stages: tuple

    def final_fractions(self) -> dict:
        last = self.stages[-1]
        return dict(zip(last.sigmas, last.cumulative))


def analytic_cascade(spin: SpinState, stages: Sequence[Stage]) -> CascadeResult:
    """Stage fractions from internal-state overlaps alone."""
    _check_stages(stages)
    results, surviving = [], 1.0
    for st in stages:
        sig = tuple(float(s) for s in sigma_values(spin.j))
        fr = tuple(abs(overlap_amplitude(spin, st.apparatus.axis, s)) ** 2 for s in sig)
        results.append(StageResult(st.apparatus, st.keep, sig, fr, tuple(surviving * f for f in fr)))
        if st.keep is not None:
            k = sigma_index(spin.j, st.keep)
            if fr[k] < 1e-14:
                raise EmptyBranchError(f"branch sigma={st.keep} carries no population")
            surviving *= fr[k]
            spin = SpinState.basis(spin.j, st.keep, st.apparatus.axis)
    return CascadeResult("analytic", tuple(results))


def _check_stages(stages):
    if not stages:
        raise DomainError("a cascade needs at least one apparatus")
    for st in stages[:-1]:
        if st.keep is None:
            raise DomainError("every stage but the last must name the branch it keeps")


def cascade(
    beam: GridWaveFunction,
    spin: SpinState,
    stages: Sequence[Stage],
    dt: float,
    T: float,
    V0: Optional[PotentialField] = None,
    record_every: int = 10,
    eps_sep: float = EPS_SEP,
) -> tuple[CascadeResult, list]:
    """Exact-pipeline cascade.

    Between stages the kept branch is passed through :func:`recentre`: the
    free spreading of one stage duration is undone and the beam is moved back
    to the incident mean position, standing in for beam optics on the way to
    the next apparatus.
    Returns the fraction table and the per-stage :class:`BranchSet` list.
    """
    _check_stages(stages)
    start = beam.mean_position()
    psi = product_state(beam, spin)
    results, sets, surviving = [], [], 1.0
    for k, st in enumerate(stages):
        if k:
            psi = recentre(psi, start, rewind=T)
        bs = run_apparatus_exact(psi, st.apparatus, dt, T, V0, record_every, eps_sep)
        sets.append(bs)
        sig = tuple(float(s) for s in bs.sigmas)
        fr = tuple(float(f) for f in bs.fractions)
        results.append(
            StageResult(
                st.apparatus,
                st.keep,
                sig,
                fr,
                tuple(surviving * f for f in fr),
                bs.separation_time,
                bs.residual_before_separation(),
                bs.residual_after_separation(),
            )
        )
        if st.keep is not None:
            out = filter_branch(bs, st.keep)
            surviving *= out.kept_fraction
            psi = out.beam
    return CascadeResult("exact", tuple(results)), sets


@dataclass(frozen=True)
class SpecimenRecord:
    """Where one specimen ended up.  ``time`` is when its label was read off."""

    specimen_id: int
    stage: int
    two_sigma: Optional[int]
    seed: int
    time: float
    member: int = -1

    @property
    def sigma(self) -> Optional[float]:
        return None if self.two_sigma is None else self.two_sigma / 2


def label_specimen(branches: BranchSet, specimen_id: int, sigma, seed: int, time: Optional[float] = None, stage: int = 0, member: int = -1) -> SpecimenRecord:
    """Attach a branch label, which only exists once the branches have separated."""
    if not branches.separated or branches.separation_time is None:
        raise PrematureLabelError("no branch label exists before the beams separate")
    t = branches.separation_time if time is None else float(time)
    if t < branches.separation_time:
        raise PrematureLabelError(f"label requested at t={t}, before separation at t={branches.separation_time}")
    return SpecimenRecord(specimen_id, stage, twice(sigma), seed, t, member)


@dataclass(frozen=True)
class SpecimenSample:
    records: tuple
    sigmas: tuple
    expected: tuple
    empirical: tuple
    count: int
    flagged: tuple = ()

    def empirical_fraction(self, sigma) -> float:
        return dict(zip(self.sigmas, self.empirical))[float(sigma)]


def _binomial_flags(expected, empirical, count) -> tuple:
    flags = []
    for s, p, e in expected_empirical(expected, empirical):
        bound = 4 * np.sqrt(p * (1 - p) / count)
        if abs(e - p) > bound and not (p in (0.0, 1.0) and e == p):
            flags.append(s)
    return tuple(flags)


def expected_empirical(expected, empirical):
    return [(s, p, empirical[s]) for s, p in expected.items()]


def sample_specimens(branches: BranchSet, count: int, seed: int, stage: int = 0) -> SpecimenSample:
    """Send ``count`` specimens through, one at a time, each landing in one branch.

    Every specimen is labelled at the separation time with branch ``sigma``
    drawn with probability ``|c_sigma|^2``.  For semiclassical branch sets it
    is also assigned one member trajectory of that branch, drawn by weight.
    """
    if count <= 0:
        raise DomainError("count must be positive")
    if not branches.separated:
        raise PrematureLabelError("specimens cannot be labelled before the branches separate")
    rng = np.random.default_rng(seed)
    p = np.clip(branches.fractions, 0.0, None)
    p = p / p.sum()
    sig = branches.sigmas
    outcome = rng.choice(len(p), size=count, p=p)
    members = np.full(count, -1)
    if branches.ensembles is not None:
        for i, ens in enumerate(branches.ensembles):
            hit = np.flatnonzero(outcome == i)
            if ens is not None and hit.size:
                members[hit] = rng.choice(ens.count, size=hit.size, p=ens.weights)
    t = branches.separation_time
    two = [twice(s) for s in sig]
    records = tuple(
        SpecimenRecord(int(n), stage, two[o], seed, t, int(m)) for n, (o, m) in enumerate(zip(outcome, members))
    )
    emp = np.bincount(outcome, minlength=len(p)) / count
    expected = {float(s): float(f) for s, f in zip(sig, p)}
    empirical = {float(s): float(e) for s, e in zip(sig, emp)}
    return SpecimenSample(
        records,
        tuple(float(s) for s in sig),
        tuple(expected.values()),
        tuple(empirical.values()),
        count,
        _binomial_flags(expected, empirical, count),
    )


def sample_cascade(result: CascadeResult, count: int, seed: int) -> SpecimenSample:
    """Specimen-level run of a cascade table.

    Each specimen passes the stages in order; at every stage it lands in a
    branch with that stage's relative fraction and is absorbed unless it
    lands in the kept branch.  Records are written for every stage a specimen
    reaches; the empirical fractions are final-stage counts over ``count``.
    """
    rng = np.random.default_rng(seed)
    alive = np.ones(count, dtype=bool)
    records = []
    final = None
    for k, st in enumerate(result.stages):
        p = np.clip(np.array(st.fractions), 0.0, None)
        p = p / p.sum()
        out = rng.choice(len(p), size=count, p=p)
        idx = np.flatnonzero(alive)
        t = st.separation_time if st.separation_time is not None else float("nan")
        for n in idx:
            records.append(SpecimenRecord(int(n), k, twice(st.sigmas[out[n]]), seed, t))
        if st.keep is not None:
            alive &= out == sigma_index(max(abs(s) for s in st.sigmas), st.keep)
        else:
            final = out
    if final is None:
        final = np.full(count, -1)
    last = result.stages[-1]
    counts = np.array([np.sum(alive & (final == i)) for i in range(len(last.sigmas))])
    emp = counts / count
    expected = {s: float(c) for s, c in zip(last.sigmas, last.cumulative)}
    empirical = {s: float(e) for s, e in zip(last.sigmas, emp)}
    return SpecimenSample(
        tuple(records),
        last.sigmas,
        tuple(expected.values()),
        tuple(empirical.values()),
        count,
        _binomial_flags(expected, empirical, count),
    )
