"""Scenario files: JSON schema, physical-sanity checks and object builders.

A scenario is a JSON object::

    {"schema_version": 1, "kind": "sg-run", "name": "...", "seed": 7,
     "params": {...}}

``kind`` selects the parameter schema.  Angles are given in degrees.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from .correspondence import SweepScenario
from .grid import GridSpec
from .hilbert import Direction, SpinState, twice
from .quantum import PHASE_WRAP_LIMIT
from .sterngerlach import Apparatus, Stage

__all__ = [
    "SCHEMA_VERSION",
    "KINDS",
    "SchemaError",
    "Violation",
    "load_spec",
    "schema_violations",
    "physics_violations",
    "validate_spec",
    "derive_seed",
    "build_grid",
    "build_direction",
    "build_apparatus",
    "build_spin",
    "build_stages",
    "build_sweep",
]

SCHEMA_VERSION = 1
KINDS = ("correspondence-sweep", "sg-run", "cascade", "epr-chsh")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_grid = {
    "type": "object",
    "required": ["lower", "upper", "count"],
    "additionalProperties": False,
    "properties": {"lower": _num, "upper": _num, "count": {"type": "integer", "minimum": 64}},
}
_angles = {"theta_deg": {"type": "number", "minimum": 0, "maximum": 180}, "phi_deg": _num}
_beam = {
    "type": "object",
    "required": ["q0", "p0", "sigma_q"],
    "additionalProperties": False,
    "properties": {"q0": _num, "p0": _num, "sigma_q": _pos, "mass": _pos},
}
_spin = {
    "type": "object",
    "required": ["j", "sigma"],
    "additionalProperties": False,
    "properties": {"j": {"type": "number", "minimum": 0.5, "multipleOf": 0.5}, "sigma": {"type": "number", "multipleOf": 0.5}, **_angles},
}
_apparatus = {
    "type": "object",
    "required": ["region", "ramp", "gradient"],
    "additionalProperties": False,
    "properties": {
        **_angles,
        "region": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
        "ramp": _pos,
        "gradient": {"type": "number", "minimum": 0},
    },
}
_beam_run = {
    "grid": _grid,
    "hbar": _pos,
    "beam": _beam,
    "spin": _spin,
    "dt": _pos,
    "duration": _pos,
    "record_every": _int_pos,
    "specimens": {"type": "integer", "minimum": 0},
}

PARAM_SCHEMAS = {
    "epr-chsh": {
        "type": "object",
        "required": ["settings_deg"],
        "additionalProperties": False,
        "properties": {
            "settings_deg": {
                "type": "object",
                "required": ["a", "a_prime", "b", "b_prime"],
                "additionalProperties": False,
                "properties": {k: _num for k in ("a", "a_prime", "b", "b_prime")},
            },
            "count": {"type": "integer", "minimum": 0},
        },
    },
    "sg-run": {
        "type": "object",
        "required": ["grid", "hbar", "beam", "spin", "apparatus", "dt", "duration"],
        "additionalProperties": False,
        "properties": {
            **_beam_run,
            "apparatus": _apparatus,
            "pipelines": {"type": "array", "items": {"enum": ["exact", "semiclassical"]}, "minItems": 1, "uniqueItems": True},
            "ensemble_count": _int_pos,
            "classical_dt": _pos,
            "coarsen": _int_pos,
        },
    },
    "cascade": {
        "type": "object",
        "required": ["grid", "hbar", "beam", "spin", "stages", "dt", "duration"],
        "additionalProperties": False,
        "properties": {
            **_beam_run,
            "mode": {"enum": ["analytic", "exact"]},
            "stages": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "required": ["apparatus", "keep"],
                    "additionalProperties": False,
                    "properties": {"apparatus": _apparatus, "keep": {"type": ["number", "null"], "multipleOf": 0.5}},
                },
            },
        },
    },
    "correspondence-sweep": {
        "type": "object",
        "required": ["hbar"],
        "additionalProperties": False,
        "properties": {
            "hbar": {"type": "array", "items": _pos, "minItems": 1},
            "potential": {"enum": ["free", "harmonic", "quartic"]},
            "omega": _num,
            "quartic": _num,
            "mass": _pos,
            "q0": _num,
            "p0": _num,
            "sigma_q": _pos,
            "grid": _grid,
            "t_final": _pos,
            "dt_quantum": _pos,
            "dt_classical": _pos,
            "count": _int_pos,
            "momentum": {"enum": ["phase-gradient", "local-spread"]},
            "coarsen": _int_pos,
        },
    },
}

TOP_SCHEMA = {
    "type": "object",
    "required": ["schema_version", "kind", "params"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": list(KINDS)},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "params": {"type": "object"},
    },
}


class SchemaError(ValueError):
    """Scenario file is not valid JSON or does not match the schema."""


@dataclass(frozen=True)
class Violation:
    rule: str
    field: str
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.field}: {self.message}"


def load_spec(path) -> dict:
    """Read a scenario file.  Raises ``OSError`` or :class:`SchemaError`."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return spec


def _path(prefix, err) -> str:
    parts = [prefix] + [str(p) for p in err.absolute_path]
    if err.validator == "required":
        missing = err.message.split("'")[1]
        parts.append(missing)
    elif err.validator == "additionalProperties":
        extra = err.message.split("'")[1]
        parts.append(extra)
    return ".".join(p for p in parts if p)


def schema_violations(spec) -> list:
    out = [Violation("schema", _path("", e), e.message) for e in Draft202012Validator(TOP_SCHEMA).iter_errors(spec)]
    # params are checked whenever their kind is known, so every error is listed at once
    if isinstance(spec, dict) and spec.get("kind") in PARAM_SCHEMAS and isinstance(spec.get("params"), dict):
        sub = Draft202012Validator(PARAM_SCHEMAS[spec["kind"]])
        out += [Violation("schema", _path("params", e), e.message) for e in sub.iter_errors(spec["params"])]
    return sorted(out, key=lambda v: v.field)


def derive_seed(master: int, counter: int) -> int:
    """Child seed number ``counter`` of a 64-bit master seed.

    ``SeedSequence(master, spawn_key=(counter,))`` reduced to one 64-bit word,
    the same construction ``SeedSequence.spawn`` uses.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=(int(counter),))
    return int(ss.generate_state(1, np.uint64)[0])


def build_grid(d: dict) -> GridSpec:
    return GridSpec(d["lower"], d["upper"], d["count"])


def build_direction(d: dict) -> Direction:
    return Direction(np.radians(d.get("theta_deg", 0.0)), np.radians(d.get("phi_deg", 0.0)))


def build_apparatus(d: dict) -> Apparatus:
    return Apparatus(build_direction(d), tuple(d["region"]), d["ramp"], d["gradient"])


def build_spin(d: dict) -> SpinState:
    return SpinState.basis(d["j"], d["sigma"], build_direction(d))


def build_stages(params: dict) -> list:
    return [Stage(build_apparatus(s["apparatus"]), s["keep"]) for s in params["stages"]]


def build_sweep(params: dict, seed: int) -> SweepScenario:
    kw = {k: v for k, v in params.items() if k != "hbar"}
    if "grid" in kw:
        kw["grid"] = build_grid(kw["grid"])
    return SweepScenario(**kw, seed=seed)


def _grid_rules(out, where, grid, q0, p0, sigma, hbar, mass, boost=0.0, beam="beam."):
    """Resolution and margin rules for a Gaussian packet on ``grid``.

    ``beam`` is the path of the packet fields below ``where``.
    """
    try:
        g = build_grid(grid)
    except ValueError as exc:
        out.append(Violation("grid", f"{where}grid", str(exc)))
        return None
    if sigma < 4 * g.dq:
        out.append(Violation("resolution", f"{where}{beam}sigma_q", f"sigma_q={sigma} is below 4*dq={4 * g.dq:.6g}"))
    pmax = np.sqrt(p0**2 + boost) + 6 * hbar / (2 * sigma)
    if pmax / hbar >= np.pi / g.dq:
        out.append(
            Violation(
                "resolution",
                f"{where}grid.count",
                f"momenta up to {pmax:.4g} need wavenumbers {pmax / hbar:.4g} beyond the grid limit {np.pi / g.dq:.4g}",
            )
        )
    if q0 - 5 * sigma < g.lower or q0 + 5 * sigma > g.upper - g.dq:
        out.append(Violation("margin", f"{where}{beam}q0", f"packet at {q0} +- 5*{sigma} does not fit in the grid"))
    return g


def _spin_rules(out, where, spin):
    j, s = spin["j"], spin["sigma"]
    if abs(s) > j or twice(j - s) % 2:
        out.append(Violation("spin", f"{where}spin.sigma", f"sigma={s} is not a valid projection for j={j}"))


def _apparatus_rules(out, where, app, params, j):
    qa, qb = app["region"]
    if qb - qa < 2 * app["ramp"]:
        out.append(Violation("apparatus", f"{where}region", f"region {app['region']} shorter than two ramps"))
    hbar, dt = params["hbar"], params["dt"]
    vmax = j * app["gradient"]
    if vmax * dt / hbar > PHASE_WRAP_LIMIT:
        out.append(
            Violation("phase-wrap", f"{where}gradient", f"max|V|*dt/hbar = {vmax * dt / hbar:.4g} exceeds {PHASE_WRAP_LIMIT}")
        )
    beam = params["beam"]
    if beam["q0"] + 5 * beam["sigma_q"] > qa:
        out.append(Violation("margin", f"{where}region", "incident packet overlaps the field region at t=0"))


def _flight_rules(out, params, g, boost, apps):
    """The fastest branch must stay on the grid for the whole run.

    Outside the field the beam moves at its incident speed; inside it the
    fastest branch gains at most ``boost`` in ``p^2``.
    """
    beam = params["beam"]
    m = beam.get("mass", 1.0)
    spread = 6 * params["hbar"] / (2 * beam["sigma_q"])
    v0 = (abs(beam["p0"]) + spread) / m
    vb = (np.sqrt(beam["p0"] ** 2 + boost) + spread) / m
    length = max(a["region"][1] - a["region"][0] for a in apps)
    reach = beam["q0"] + 5 * beam["sigma_q"] + v0 * params["duration"] + (vb - v0) * length / vb
    if g is not None and reach > g.upper:
        out.append(Violation("margin", "params.duration", f"beam may reach q={reach:.4g}, past the grid edge {g.upper}"))
    steps = params["duration"] / params["dt"]
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        out.append(Violation("time", "params.duration", "duration is not a whole number of steps"))


def physics_violations(spec: dict) -> list:
    """Physical-sanity rules for a schema-valid spec."""
    kind, p = spec["kind"], spec["params"]
    out: list = []
    if kind == "epr-chsh":
        c = p.get("count", 0)
        if 0 < c < 1000:
            out.append(Violation("count", "params.count", f"sampled CHSH needs at least 1000 trials, got {c}"))
    elif kind == "correspondence-sweep":
        hs = p["hbar"]
        if any(b >= a for a, b in zip(hs, hs[1:])):
            out.append(Violation("order", "params.hbar", "hbar values must be strictly decreasing"))
        sc = build_sweep(p, 0) if "grid" not in p or p["grid"]["count"] & (p["grid"]["count"] - 1) == 0 else None
        if sc is None:
            out.append(Violation("grid", "params.grid.count", "grid point count must be a power of two"))
        else:
            for h in hs:
                _grid_rules(out, "params.", _grid_dict(sc.grid), sc.q0, sc.p0, sc.sigma_q, h, sc.mass, beam="")
            if sc.grid.count % sc.coarsen:
                out.append(Violation("grid", "params.coarsen", f"{sc.grid.count} points cannot be coarsened by {sc.coarsen}"))
    else:
        _spin_rules(out, "params.", p["spin"])
        j = p["spin"]["j"]
        m = p["beam"].get("mass", 1.0)
        apps = [p["apparatus"]] if kind == "sg-run" else [s["apparatus"] for s in p["stages"]]
        boost = max(2 * m * j * a["gradient"] for a in apps)
        b = p["beam"]
        g = _grid_rules(out, "params.", p["grid"], b["q0"], b["p0"], b["sigma_q"], p["hbar"], m, boost)
        if kind == "sg-run":
            _apparatus_rules(out, "params.apparatus.", p["apparatus"], p, j)
        else:
            for i, s in enumerate(p["stages"]):
                _apparatus_rules(out, f"params.stages.{i}.apparatus.", s["apparatus"], p, j)
                keep = s["keep"]
                if keep is None and i < len(p["stages"]) - 1:
                    out.append(Violation("cascade", f"params.stages.{i}.keep", "only the final stage may keep all branches"))
                elif keep is not None and (abs(keep) > j or twice(j - keep) % 2):
                    out.append(Violation("spin", f"params.stages.{i}.keep", f"keep={keep} is not a valid projection for j={j}"))
        if b["p0"] ** 2 / (2 * m) <= j * max(a["gradient"] for a in apps):
            out.append(Violation("energy", "params.beam.p0", "the slowed branch would be reflected by the field"))
        _flight_rules(out, p, g, boost, apps)
        if kind == "sg-run" and g is not None and p.get("coarsen", 1) and g.count % p.get("coarsen", 1):
            out.append(Violation("grid", "params.coarsen", f"{g.count} points cannot be coarsened by {p['coarsen']}"))
    return out


def _grid_dict(g: GridSpec) -> dict:
    return {"lower": g.lower, "upper": g.upper, "count": g.count}


def validate_spec(spec) -> list:
    """All violations: schema first; physical rules only once the schema holds."""
    out = schema_violations(spec)
    if out:
        return out
    return physics_violations(spec)
