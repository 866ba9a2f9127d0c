"""Command-line runner: ``bornlimit run|validate|version``.

Exit codes: 0 success, 1 validation found rule violations, 2 schema error,
3 numerical contract violation, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .classical import sample_ensemble_from_wavefunction
from .correspondence import compare, hbar_sweep
from .epr import ChshSettings, chsh, sampled_chsh, singlet_pair
from .errors import ContractError
from .io import cascade_to_dict, chsh_to_dict, write_json, write_specimens_csv, write_sweep_csv
from .quantum import gaussian_packet, product_state
from .scenario import (
    SchemaError,
    build_apparatus,
    build_grid,
    build_spin,
    build_stages,
    build_sweep,
    derive_seed,
    load_spec,
    validate_spec,
)
from .sterngerlach import (
    analytic_cascade,
    cascade,
    run_apparatus_exact,
    run_apparatus_semiclassical,
    sample_cascade,
    sample_specimens,
)

__all__ = ["main", "run_spec", "RunResult"]

EXIT_OK, EXIT_VIOLATIONS, EXIT_SCHEMA, EXIT_CONTRACT, EXIT_IO = 0, 1, 2, 3, 4


@dataclass
class RunResult:
    summary: str
    files: list = field(default_factory=list)


def _fmt(x) -> str:
    return repr(float(x))


def _beam(p):
    b = p["beam"]
    grid = build_grid(p["grid"])
    return gaussian_packet(grid, b["q0"], b["p0"], b["sigma_q"], p["hbar"], b.get("mass", 1.0))


def _steps(p):
    return p["dt"], int(round(p["duration"] / p["dt"]))


def _run_epr(spec, seed, out, prefix, threads):
    p = spec["params"]
    s = p["settings_deg"]
    settings = ChshSettings.in_plane_degrees(s["a"], s["a_prime"], s["b"], s["b_prime"])
    pair = singlet_pair()
    exact = chsh(pair, settings)
    payload = {"analytic": chsh_to_dict(exact)}
    files = []
    summary = f"S = {exact.S:.6f}"
    count = p.get("count", 0)
    if count:
        sampled = sampled_chsh(pair, settings, count, derive_seed(seed, 0))
        payload["sampled"] = chsh_to_dict(sampled)
        payload["sampled"]["count"] = count
        summary += f" (sampled {sampled.S:.4f} +- {sampled.s_error:.4f})"
        path = out / f"{prefix}_trials.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("setting", "trial", "sigma1", "sigma2"))
            for key, arr in sampled.trials.items():
                for n, (a, b) in enumerate(arr):
                    w.writerow((key, n, _half(a), _half(b)))
        files.append(path)
    path = out / f"{prefix}.json"
    write_json(path, payload)
    return RunResult(summary, [path] + files)


def _half(two) -> str:
    two = int(two)
    return str(two // 2) if two % 2 == 0 else f"{two}/2"


def _write_history(path, bs):
    h = bs.history
    sig = [_half(round(2 * s)) for s in bs.sigmas]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t"] + [f"norm[{s}]" for s in sig] + ["max_overlap", "residual", "region_mass"])
        for i, t in enumerate(h["times"]):
            w.writerow([_fmt(t)] + [_fmt(x) for x in h["norms"][i]] + [_fmt(h["overlap"][i]), _fmt(h["residual"][i]), _fmt(h["region_mass"][i])])


def _write_densities(path, bs):
    sig = [_half(round(2 * s)) for s in bs.sigmas]
    total = bs.combined_density().values
    cols = [d.values if d is not None else np.zeros(bs.grid.count) for d in bs.densities]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["q", "combined"] + [f"w[{s}]" for s in sig])
        for i, q in enumerate(bs.grid.points):
            w.writerow([_fmt(q), _fmt(total[i])] + [_fmt(c[i]) for c in cols])


def _branch_summary(bs) -> dict:
    return {
        "pipeline": bs.kind,
        "sigmas": [float(s) for s in bs.sigmas],
        "fractions": [float(f) for f in bs.fractions],
        "separated": bs.separated,
        "separation_time": bs.separation_time,
        "entry_time": bs.entry_time,
        "exit_time": bs.exit_time,
        "residual_before_separation": _finite(bs.residual_before_separation()),
        "residual_after_separation": _finite(bs.residual_after_separation()),
    }


def _finite(x):
    return float(x) if np.isfinite(x) else None


def _run_sg(spec, seed, out, prefix, threads):
    p = spec["params"]
    psi = _beam(p)
    chi = build_spin(p["spin"])
    app = build_apparatus(p["apparatus"])
    dt, steps = _steps(p)
    rec = p.get("record_every", 10)
    files, payload = [], {"branches": {}}
    sets = {}
    for kind in p.get("pipelines", ["exact"]):
        if kind == "exact":
            bs = run_apparatus_exact(product_state(psi, chi), app, dt, p["duration"], record_every=rec)
        else:
            ens = sample_ensemble_from_wavefunction(psi, p.get("ensemble_count", 100_000), derive_seed(seed, 0), "local-spread")
            cdt = p.get("classical_dt", dt)
            bs = run_apparatus_semiclassical(
                ens, chi, app, cdt, p["duration"], psi.grid, record_every=max(1, round(rec * dt / cdt)), coarsen=p.get("coarsen", 1)
            )
        sets[kind] = bs
        payload["branches"][kind] = _branch_summary(bs)
        for suffix, writer in (("densities", _write_densities), ("history", _write_history)):
            path = out / f"{prefix}_{kind}_{suffix}.csv"
            writer(path, bs)
            files.append(path)
    if "exact" in sets and "semiclassical" in sets:
        c = p.get("coarsen", 1)
        payload["l1_semiclassical_vs_exact"] = compare(
            sets["semiclassical"].combined_density().coarsen(c), sets["exact"].combined_density().coarsen(c)
        )
    lead = sets.get("exact") or sets["semiclassical"]
    if p.get("specimens", 0):
        sample = sample_specimens(lead, p["specimens"], derive_seed(seed, 1))
        payload["specimens"] = {
            "count": sample.count,
            "empirical": list(sample.empirical),
            "expected": list(sample.expected),
            "flagged": list(sample.flagged),
        }
        path = out / f"{prefix}_specimens.csv"
        write_specimens_csv(path, sample)
        files.append(path)
    path = out / f"{prefix}.json"
    write_json(path, payload)
    fr = ", ".join(f"{f:.6f}" for f in lead.fractions)
    sep = f"separated at t = {lead.separation_time:g}" if lead.separated else "not separated"
    return RunResult(f"fractions = {fr}; {sep}", [path] + files)


def _run_cascade(spec, seed, out, prefix, threads):
    p = spec["params"]
    chi = build_spin(p["spin"])
    stages = build_stages(p)
    if p.get("mode", "exact") == "analytic":
        result = analytic_cascade(chi, stages)
    else:
        dt, _ = _steps(p)
        result, sets = cascade(_beam(p), chi, stages, dt, p["duration"], record_every=p.get("record_every", 10))
    payload = cascade_to_dict(result)
    files = []
    if p.get("mode", "exact") == "exact":
        for k, bs in enumerate(sets):
            path = out / f"{prefix}_stage{k}_history.csv"
            _write_history(path, bs)
            files.append(path)
    if p.get("specimens", 0):
        sample = sample_cascade(result, p["specimens"], derive_seed(seed, 1))
        payload["specimens"] = {
            "count": sample.count,
            "empirical": list(sample.empirical),
            "expected": list(sample.expected),
            "flagged": list(sample.flagged),
        }
        path = out / f"{prefix}_specimens.csv"
        write_specimens_csv(path, sample)
        files.append(path)
    path = out / f"{prefix}.json"
    write_json(path, payload)
    fr = ", ".join(f"{f:.6f}" for f in result.final_fractions().values())
    return RunResult(f"final fractions = {fr}", [path] + files)


def _run_sweep(spec, seed, out, prefix, threads):
    p = spec["params"]
    sc = build_sweep(p, seed)
    seeds = [derive_seed(seed, i) for i in range(len(p["hbar"]))]
    report = hbar_sweep(sc, p["hbar"], threads=threads, seeds=seeds)
    path = out / f"{prefix}.csv"
    write_sweep_csv(path, report)
    l1 = " ".join(f"{x:.4g}" for x in report.l1)
    val = " ".join(f"{x:.4g}" for x in report.validity)
    return RunResult(f"L1 = [{l1}]; validity = [{val}]", [path])


_RUNNERS = {"epr-chsh": _run_epr, "sg-run": _run_sg, "cascade": _run_cascade, "correspondence-sweep": _run_sweep}


def run_spec(spec: dict, out_dir=".", seed=None, threads: int = 1, name: str = "scenario") -> RunResult:
    """Validate and execute a parsed scenario, writing outputs into ``out_dir``.

    Raises :class:`SchemaError` on schema violations and
    :class:`ContractError` on physical-rule violations or numerical failures.
    """
    problems = validate_spec(spec)
    schema = [v for v in problems if v.rule == "schema"]
    if schema:
        raise SchemaError("; ".join(map(str, schema)))
    if problems:
        raise ContractError("; ".join(map(str, problems)))
    master = int(seed if seed is not None else spec.get("seed", 0))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = spec.get("name", name)
    return _RUNNERS[spec["kind"]](spec, master, out, prefix, threads)


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bornlimit", description="Run classical-limit and branch-population scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a scenario file")
    run.add_argument("scenario", help="scenario JSON file")
    run.add_argument("--seed", type=int, default=None, help="64-bit master seed (overrides the file)")
    run.add_argument("--out-dir", default=".", help="directory for output files")
    run.add_argument("--threads", type=int, default=1, help="worker threads, 0 = auto; never changes results")
    val = sub.add_parser("validate", help="check a scenario file without running it")
    val.add_argument("scenario", help="scenario JSON file")
    sub.add_parser("version", help="print the package version")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "version":
        print(__version__)
        return EXIT_OK
    try:
        spec = load_spec(args.scenario)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    if args.command == "validate":
        problems = validate_spec(spec)
        for v in problems:
            print(v)
        if not problems:
            print("ok")
            return EXIT_OK
        return EXIT_SCHEMA if any(v.rule == "schema" for v in problems) else EXIT_VIOLATIONS
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("schema error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_SCHEMA
    try:
        result = run_spec(spec, args.out_dir, args.seed, args.threads, Path(args.scenario).stem)
    except SchemaError as exc:
        print(f"schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(result.summary)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
