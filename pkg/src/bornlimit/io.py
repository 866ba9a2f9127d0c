"""Serialization: CSV for fields and tables, JSON for structured results,
little-endian float64 binaries for wavefunction and ensemble snapshots.

Numbers are written with ``repr`` so files are locale independent and
round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .classical import TrajectoryEnsemble
from .correspondence import SweepReport
from .epr import SETTING_KEYS, ChshResult
from .grid import DensityField, GridSpec
from .hilbert import Direction
from .quantum import GridWaveFunction
from .sterngerlach import CascadeResult, SpecimenSample

__all__ = [
    "write_density_csv",
    "read_density_csv",
    "write_wavefunction_csv",
    "write_wavefunction_binary",
    "read_wavefunction_binary",
    "write_ensemble_binary",
    "read_ensemble_binary",
    "write_sweep_csv",
    "write_specimens_csv",
    "cascade_to_dict",
    "chsh_to_dict",
    "write_json",
    "SWEEP_HEADER",
]

SWEEP_HEADER = ("hbar", "l1_distance", "validity_fraction", "wall_time_seconds")
_F64 = np.dtype("<f8")


def _fmt(x) -> str:
    return repr(float(x))


def _writer(path):
    f = open(path, "w", newline="", encoding="utf-8")
    return f, csv.writer(f, lineterminator="\n")


def write_density_csv(path, field: DensityField) -> None:
    f, w = _writer(path)
    with f:
        w.writerow(("q", "value"))
        for q, v in zip(field.grid.points, field.values):
            w.writerow((_fmt(q), _fmt(v)))


def read_density_csv(path, grid: GridSpec, t: float = 0.0) -> DensityField:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] != grid.count or not np.allclose(data[:, 0], grid.points, rtol=0, atol=1e-9 * grid.width):
        raise ValueError(f"{path}: sample points do not match {grid}")
    return DensityField(grid, data[:, 1], t)


def write_wavefunction_csv(path, psi: GridWaveFunction) -> None:
    f, w = _writer(path)
    with f:
        w.writerow(("q", "re", "im"))
        for q, z in zip(psi.grid.points, psi.psi):
            w.writerow((_fmt(q), _fmt(z.real), _fmt(z.imag)))


def write_wavefunction_binary(path, psi: GridWaveFunction) -> None:
    """Header ``(lower, upper, n, hbar, mass, t)`` then interleaved re/im."""
    g = psi.grid
    head = np.array([g.lower, g.upper, g.count, psi.hbar, psi.mass, psi.t], dtype=_F64)
    body = np.empty(2 * g.count, dtype=_F64)
    body[0::2], body[1::2] = psi.psi.real, psi.psi.imag
    Path(path).write_bytes(head.tobytes() + body.tobytes())


def read_wavefunction_binary(path) -> GridWaveFunction:
    raw = np.frombuffer(Path(path).read_bytes(), dtype=_F64)
    lower, upper, n, hbar, mass, t = raw[:6]
    n = int(n)
    body = raw[6:]
    if body.size != 2 * n:
        raise ValueError(f"{path}: expected {2 * n} values after the header, found {body.size}")
    return GridWaveFunction(GridSpec(lower, upper, n), body[0::2] + 1j * body[1::2], float(hbar), float(mass), float(t))


def write_ensemble_binary(path, ens: TrajectoryEnsemble) -> None:
    """Header ``(d, count, n_times, mass, times...)`` then positions, momenta, jacobians, weights."""
    nt, n, d = ens.positions.shape
    head = np.concatenate([[d, n, nt, ens.mass], ens.times]).astype(_F64)
    parts = [head, ens.positions.ravel(), ens.momenta.ravel(), ens.jacobians.ravel(), ens.weights]
    Path(path).write_bytes(b"".join(np.ascontiguousarray(p, dtype=_F64).tobytes() for p in parts))


def read_ensemble_binary(path) -> dict:
    raw = np.frombuffer(Path(path).read_bytes(), dtype=_F64)
    d, n, nt, mass = (int(raw[0]), int(raw[1]), int(raw[2]), float(raw[3]))
    at = 4
    times = raw[at : at + nt]
    at += nt
    out = {"times": times.copy(), "mass": mass}
    for name, size, shape in (
        ("positions", nt * n * d, (nt, n, d)),
        ("momenta", nt * n * d, (nt, n, d)),
        ("jacobians", nt * n, (nt, n)),
        ("weights", n, (n,)),
    ):
        out[name] = raw[at : at + size].reshape(shape).copy()
        at += size
    if at != raw.size:
        raise ValueError(f"{path}: {raw.size - at} trailing values")
    return out


def write_sweep_csv(path, report: SweepReport, include_timing: bool = False) -> None:
    """Sweep table.  Wall time is written as ``nan`` unless ``include_timing``."""
    f, w = _writer(path)
    with f:
        w.writerow(SWEEP_HEADER)
        for r in report.rows:
            wt = r.wall_time_seconds if include_timing else math.nan
            w.writerow((_fmt(r.hbar), _fmt(r.l1_distance), _fmt(r.validity_fraction), _fmt(wt)))


def write_specimens_csv(path, sample: SpecimenSample) -> None:
    f, w = _writer(path)
    with f:
        w.writerow(("id", "stage", "sigma", "seed"))
        for rec in sample.records:
            w.writerow((rec.specimen_id, rec.stage, _half(rec.two_sigma), rec.seed))


def _half(two) -> str:
    if two is None:
        return ""
    return str(two // 2) if two % 2 == 0 else f"{two}/2"


def _direction(d: Direction) -> dict:
    return {"theta": d.theta, "phi": d.phi}


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def cascade_to_dict(result: CascadeResult) -> dict:
    stages = []
    for st in result.stages:
        app = st.apparatus
        stages.append(
            {
                "apparatus": {
                    "axis": _direction(app.axis),
                    "gradient": app.gradient,
                    "region": list(app.region),
                    "ramp": app.ramp,
                },
                "keep": st.keep,
                "sigmas": list(st.sigmas),
                "fractions": [float(x) for x in st.fractions],
                "cumulative": [float(x) for x in st.cumulative],
                "separation_time": _num(st.separation_time),
                "residual_before_separation": _num(st.residual_before),
                "residual_after_separation": _num(st.residual_after),
            }
        )
    return {"mode": result.mode, "stages": stages}


def chsh_to_dict(result: ChshResult) -> dict:
    s = result.settings
    names = ("a", "a'", "b", "b'")
    dirs = (s.a, s.a_prime, s.b, s.b_prime)
    out = {
        "settings": {k: _direction(d) for k, d in zip(names, dirs)},
        "correlations": dict(zip(SETTING_KEYS, (float(e) for e in result.correlations))),
        "S": float(result.S),
        "violation": bool(result.violates),
    }
    if result.errors is not None:
        out["standard_errors"] = dict(zip(SETTING_KEYS, (float(e) for e in result.errors)))
        out["S_standard_error"] = float(result.s_error)
    return out


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
