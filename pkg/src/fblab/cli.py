"""Batch experiment runner: ``fblab <task> --config <path> --out <dir> [--seed N] [--h H]``.

A run reads one JSON config, executes a single task and writes a flat
artifact directory: the echoed config, GFN fields, CSV/JSON reports, a
``metrics.json`` of per-criterion checks, a gnuplot stub and a
``manifest.json`` with SHA-256 hashes.  Nothing time- or host-dependent is
written, so the same config and seed give byte-identical CSV/JSON files.

Exit codes: 0 pass, 2 validation, 3 numerical failure, 4 claim check failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import jsonschema
import numpy as np

from . import regularity as reg
from .energy import FALSIFIED, NOT_FALSIFIED, AlmostMinParams, audit_almost_minimality, bernoulli_energy
from .errors import ClaimFailure, ConvergenceError, FblabError, NonFiniteError, PreconditionError, ValidationError
from .flatness import extract_free_boundary, hausdorff_estimate, iterate_flatness
from .lattice import Ball, GridFunction, box_grid, read_gfn, write_gfn
from .solver import SolverConfig, fixture, generate_almost_minimizer, minimize_bernoulli
from .viscosity import VIOLATION, barrier_sweep, write_sweep_csv

log = logging.getLogger(__name__)

SCHEMA_VERSION = "fblab/1"
TASKS = ("solve", "fixture", "audit", "dichotomy", "lipschitz", "nondeg", "weiss", "blowup", "touch", "flatness", "report")
CRITERIA = tuple(f"AC-{i}" for i in range(1, 10))
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_CLAIM = 0, 2, 3, 4

# -- schema ----------------------------------------------------------------------------------------

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 2, "maxItems": 3}
_ball = {
    "type": "object",
    "properties": {"center": _vec, "radius": _pos},
    "required": ["radius"],
    "additionalProperties": False,
}
_data = {
    "type": "object",
    "properties": {
        "name": {"enum": ["half_plane", "tilted_plane", "wedge", "constant", "exterior_radial"]},
        "nu": _vec,
        "slope": _num,
        "gamma": _pos,
        "c": {"type": "number", "minimum": 0},
        "r0": _pos,
        "center": _vec,
    },
    "required": ["name"],
    "additionalProperties": False,
}
_source = {"input": {"type": "string"}, "data": _data}
_solver = {
    "type": "object",
    "properties": {
        "eps_pen": _pos,
        "max_descent": {"type": "integer", "minimum": 1},
        "restarts": {"type": "integer", "minimum": 1, "maximum": 3},
        "tol": _pos,
        "max_sharpen": {"type": "integer", "minimum": 1},
        "coarse_nodes": {"type": "integer", "minimum": 1},
        "linear": {"enum": ["auto", "direct", "amg", "cg"]},
    },
    "additionalProperties": False,
}


def _block(props: dict, required: Sequence[str] = ()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_radii = {"type": "array", "items": _pos, "minItems": 1}
_points = {"oneOf": [{"const": "fb"}, {"type": "array", "items": _vec, "minItems": 1}]}
TASK_PARAMS: dict[str, dict] = {
    "fixture": _block({"data": _data}, ["data"]),
    "solve": _block(
        {
            **_source,
            "domain": _ball,
            "solver": _solver,
            "coefficients": _block(
                {"kappa": _pos, "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1}, "a_slope": _vec, "q_slope": _vec}
            ),
        }
    ),
    "audit": _block(
        {
            **_source,
            "ball": _ball,
            "kappa": {"type": "number", "minimum": 0},
            "beta": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "sigma": {"type": "number", "minimum": 0},
            "include_minimizer": {"type": "boolean"},
            "slack_factor": _pos,
            "solver": _solver,
            "expect": {"enum": [FALSIFIED, NOT_FALSIFIED]},
        }
    ),
    "dichotomy": _block(
        {**_source, "eps": _pos, "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}, "M": _pos, "ball": _ball, "alpha": _pos}
    ),
    "lipschitz": _block(
        {
            **_source,
            "center": _vec,
            "radius": _pos,
            "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "M": _pos,
            "fb_distance": _pos,
            "bound": _pos,
        }
    ),
    "nondeg": _block({**_source, "radii": _radii, "points": _points, "max_points": {"type": "integer", "minimum": 1}, "threshold": _pos}),
    "weiss": _block({**_source, "radii": _radii, "points": _points, "max_points": {"type": "integer", "minimum": 1}}),
    "blowup": _block({**_source, "x0": _vec, "radii": _radii}, ["x0", "radii"]),
    "touch": _block({**_source, "mus": _radii, "count": {"type": "integer", "minimum": 2}, "nu": _vec, "sigma": {"type": "number", "minimum": 0}}),
    "flatness": _block(
        {
            **_source,
            "alpha": _pos,
            "eta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            "radius": _pos,
            "center": _vec,
            "nu": _vec,
            "eps0": _pos,
            "expect": {"enum": ["decay", "stall"]},
            "min_steps": {"type": "integer", "minimum": 1},
        }
    ),
    "report": _block({"runs": {"type": "array", "items": {"type": "string"}, "minItems": 1}}, ["runs"]),
}

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "schema": {"const": SCHEMA_VERSION},
        "task": {"enum": list(TASKS)},
        "seed": {"type": "integer", "minimum": 0},
        "grid": _block({"h": _pos, "half_width": _pos, "dim": {"enum": [2, 3]}}),
        "params": {"type": "object"},
    },
    "required": ["schema", "task"],
    "additionalProperties": False,
}


@dataclass
class ExperimentConfig:
    task: str
    seed: int = 0
    h: float = 1 / 128
    half_width: float = 1.0
    dim: int = 2
    params: dict = field(default_factory=dict)
    base: Path = Path(".")

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "task": self.task,
            "seed": self.seed,
            "grid": {"h": self.h, "half_width": self.half_width, "dim": self.dim},
            "params": self.params,
        }


def _path_of(err: jsonschema.ValidationError) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def validate_config(raw: Any, base: Path = Path("."), task: str | None = None, seed: int | None = None, h: float | None = None) -> ExperimentConfig:
    """Validate ``raw`` (parsed JSON) and apply command-line overrides."""
    if isinstance(raw, dict):
        raw = dict(raw)
        if seed is not None:
            raw["seed"] = seed
        if h is not None:
            raw["grid"] = {**raw.get("grid", {}), "h": h}
        if task is not None and "task" not in raw:
            raw["task"] = task
    errors = sorted(jsonschema.Draft7Validator(CONFIG_SCHEMA).iter_errors(raw), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        raise ValidationError(errors[0].message, field=_path_of(errors[0]))
    if task is not None and raw["task"] != task:
        raise ValidationError(f"config declares task {raw['task']!r} but {task!r} was requested", field="task")
    params = raw.get("params", {})
    errors = sorted(jsonschema.Draft7Validator(TASK_PARAMS[raw["task"]]).iter_errors(params), key=lambda e: [str(p) for p in e.absolute_path])
    if errors:
        e = errors[0]
        raise ValidationError(e.message, field="params." + _path_of(e) if e.absolute_path else "params")
    grid = raw.get("grid", {})
    cfg = ExperimentConfig(
        task=raw["task"],
        seed=int(raw.get("seed", 0)),
        h=float(grid.get("h", 1 / 128)),
        half_width=float(grid.get("half_width", 1.0)),
        dim=int(grid.get("dim", 2)),
        params=params,
        base=base,
    )
    cells = 2 * cfg.half_width / cfg.h
    if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
        raise ValidationError(f"2*half_width/h = {cells} is not an integer", field="grid.h")
    return cfg


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"no such file {path}", field="config") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON: {exc}", field="config") from None
    return validate_config(raw, path.parent, **overrides)


# -- artifact writing -------------------------------------------------------------------------------


def _clean(obj: Any) -> Any:
    """Make ``obj`` JSON-serializable with stable float text (``inf``/``nan`` become strings)."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


class Artifacts:
    """Collects files written by a run, each tagged with the operation that produced it."""

    def __init__(self, out: Path):
        self.out = out
        self.out.mkdir(parents=True, exist_ok=True)
        self.entries: dict[str, str] = {}

    def path(self, name: str, operation: str) -> Path:
        self.entries[name] = operation
        return self.out / name

    def json(self, name: str, obj: Any, operation: str) -> None:
        text = json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"
        self.path(name, operation).write_text(text)

    def csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence[Any]], operation: str) -> None:
        with open(self.path(name, operation), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

    def gfn(self, name: str, u: GridFunction, operation: str) -> None:
        data, meta = write_gfn(u, self.out / name)
        self.entries[data.name] = operation
        self.entries[meta.name] = operation

    def plot(self, series: Sequence[tuple[str, str, str]]) -> None:
        """gnuplot stub: one ``plot`` line per (csv file, x column, y column)."""
        lines = ["set datafile separator ','", "set key autotitle columnhead", "set terminal pngcairo", ""]
        for name, x, y in series:
            lines += [f"set output '{Path(name).stem}_{y}.png'", f"plot '{name}' using '{x}':'{y}' with linespoints", ""]
        self.path("plot.gp", "cli.plot_stub").write_text("\n".join(lines))

    def manifest(self, cfg: ExperimentConfig, status: str) -> None:
        files = []
        for name in sorted(self.entries):
            digest = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
            files.append({"path": name, "sha256": digest, "operation": self.entries[name]})
        doc = {"schema": SCHEMA_VERSION, "task": cfg.task, "seed": cfg.seed, "h": cfg.h, "status": status, "files": files}
        (self.out / "manifest.json").write_text(json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n")


def _metric(value: float, threshold: float | str | None, passed: bool, h: float, **extra) -> dict:
    return {"value": value, "threshold": threshold, "pass": bool(passed), "h": h, **extra}


# -- helpers -----------------------------------------------------------------------------------------


def _grid(cfg: ExperimentConfig):
    return box_grid(cfg.half_width, cfg.h, cfg.dim)


def _field(cfg: ExperimentConfig) -> GridFunction:
    p = cfg.params
    if "input" in p:
        path = Path(p["input"])
        path = path if path.is_absolute() else cfg.base / path
        if not path.exists():
            raise ValidationError(f"no such field file {path}", field="params.input")
        return read_gfn(path)
    if "data" in p:
        d = dict(p["data"])
        return fixture(d.pop("name"), _grid(cfg), **d)
    raise ValidationError("either input or data is required", field="params.input")


def _ball(spec: dict | None, dim: int) -> Ball:
    if spec is None:
        return Ball.unit(dim)
    return Ball(tuple(spec.get("center", (0.0,) * dim)), float(spec["radius"]))


def _solver_config(spec: dict | None) -> SolverConfig:
    return SolverConfig(**(spec or {}))


def _is_half_plane(cfg: ExperimentConfig) -> bool:
    d = cfg.params.get("data")
    if not d or d.get("name") != "half_plane":
        return False
    nu = d.get("nu")
    return nu is None or np.allclose(nu, np.eye(cfg.dim)[-1])


def _fb_points(u: GridFunction, cfg: ExperimentConfig, default_max: int = 16) -> np.ndarray:
    """Requested centers, or a seeded sample of extracted free-boundary points in ``B_1/2``."""
    spec = cfg.params.get("points", "fb")
    if spec != "fb":
        return np.asarray(spec, dtype=float)
    fb = extract_free_boundary(u, Ball.unit(u.dim, 0.5))
    if len(fb) == 0:
        raise PreconditionError("free boundary", "no free-boundary points in B_1/2")
    k = min(len(fb), int(cfg.params.get("max_points", default_max)))
    rng = np.random.default_rng(cfg.seed)
    pick = np.sort(rng.choice(len(fb), size=k, replace=False))
    return fb.points[pick]


# -- tasks -------------------------------------------------------------------------------------------

TaskResult = dict  # metrics keyed by criterion id


def task_fixture(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    art.gfn("field", u, "solver.fixture")
    e = bernoulli_energy(u, Ball.unit(u.dim))
    art.json("energy.json", e.to_json(), "energy.bernoulli_energy")
    metrics = {}
    if _is_half_plane(cfg) and u.dim == 2:
        err = abs(e.total - math.pi)
        metrics["AC-1"] = _metric(err, 10 * u.h, err <= 10 * u.h, u.h, quantity="|J(x2+, B1) - pi|")
    return metrics


def task_solve(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    g = _field(cfg)
    domain = _ball(cfg.params.get("domain"), g.dim)
    scfg = _solver_config(cfg.params.get("solver"))
    coef = cfg.params.get("coefficients")
    if coef:
        n = g.dim
        sa = np.asarray(coef.get("a_slope", np.zeros(n)), dtype=float)
        sq = np.asarray(coef.get("q_slope", np.zeros(n)), dtype=float)
        a = _affine_coefficient(sa, domain)
        q = _affine_coefficient(sq, domain)
        res = generate_almost_minimizer(a, q, g, scfg, domain, float(coef.get("kappa", 1.0)), float(coef.get("beta", 1.0)))
        op = "solver.generate_almost_minimizer"
    else:
        res = minimize_bernoulli(g, domain, scfg)
        op = "solver.minimize_bernoulli"
    art.gfn("minimizer", res.u, op)
    res.write_log(art.path("energy_log.csv", op))
    summary = {
        "dirichlet": res.dirichlet,
        "positivity": res.positivity,
        "total": res.total,
        "status": res.status,
        "restart_energies": res.restart_energies,
        "domain": domain.to_json(),
    }
    art.json("result.json", summary, op)
    art.plot([("energy_log.csv", "iteration", "total")])
    metrics = {}
    if _is_half_plane(cfg) and not coef and g.dim == 2:
        sup = float(np.max(np.abs(res.u.values - g.values)))
        tol = 0.05 if g.h > 1 / 256 + 1e-15 else 0.03
        Jg = bernoulli_energy(g, domain).total
        Ju = bernoulli_energy(res.u, domain).total
        ok = sup <= tol and Ju <= Jg + 20 * g.h
        metrics["AC-3"] = _metric(sup, tol, ok, g.h, quantity="sup|u - x2+|", energy_excess=Ju - Jg)
        err = abs(Jg - math.pi)
        metrics["AC-1"] = _metric(err, 10 * g.h, err <= 10 * g.h, g.h, quantity="|J(x2+, B1) - pi|")
    if not res.converged:
        raise ConvergenceError("solver did not converge", len(res.log))
    return metrics


def _affine_coefficient(slope: np.ndarray, domain: Ball) -> Callable[[np.ndarray], np.ndarray]:
    """``1 + |s| R + s.(x - c)``, at least 1 on the domain, oscillation ``2|s|r`` on ``B_r``."""
    c = np.asarray(domain.center, dtype=float)
    base = 1.0 + float(np.linalg.norm(slope)) * domain.radius

    def coeff(x: np.ndarray) -> np.ndarray:
        shifted = x - c.reshape((-1,) + (1,) * (x.ndim - 1))
        return np.maximum(base + np.tensordot(slope, shifted, axes=(0, 0)), 1.0)

    return coeff


def task_audit(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    p = cfg.params
    ball = _ball(p.get("ball"), u.dim)
    params = AlmostMinParams(float(p.get("kappa", 0.0)), float(p.get("beta", 1.0)), p.get("sigma"))
    rep = audit_almost_minimality(
        u,
        ball,
        params,
        slack_factor=float(p.get("slack_factor", 10.0)),
        include_minimizer=bool(p.get("include_minimizer", True)),
        solver_config=_solver_config(p.get("solver")),
    )
    art.json("audit.json", rep.to_json(), "energy.audit_almost_minimality")
    art.csv("competitors.csv", ["competitor", "energy"], rep.competitors, "energy.audit_almost_minimality")
    expect = p.get("expect", NOT_FALSIFIED)
    return {"AC-9": _metric(rep.worst_gap, expect, rep.verdict == expect, u.h, verdict=rep.verdict, slack=rep.slack)}


def task_dichotomy(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    p = cfg.params
    ball = _ball(p.get("ball"), u.dim)
    out = reg.dichotomy_step(u, float(p.get("eps", 0.5)), float(p.get("eta", 1 / 8)), float(p.get("M", 10.0)), ball)
    art.json("dichotomy.json", out.to_json(), "regularity.dichotomy_step")
    if out.variant == "GradientFlat":
        trace = reg.campanato_iterate(u, out.q, float(p.get("alpha", 0.5)), float(p.get("eta", 1 / 8)), float(p.get("eps", 0.5)), ball.center, ball.radius)
        trace.write_csv(art.path("campanato.csv", "regularity.campanato_iterate"))
        art.json("campanato.json", {"exponent": trace.exponent, "verified": trace.verified, "a": trace.a}, "regularity.campanato_iterate")
        art.plot([("campanato.csv", "scale", "deviation")])
    return {}


def task_lipschitz(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    p = cfg.params
    cert = reg.lipschitz_certificate(u, p.get("center"), float(p.get("radius", 1.0)), float(p.get("eta", 1 / 8)), float(p.get("M", 10.0)))
    near = reg.gradient_near_free_boundary(u, float(p.get("fb_distance", 0.1)), Ball.unit(u.dim))
    bound = float(p.get("bound", 2.2))
    art.json("lipschitz.json", {**cert.to_json(), "gradient_near_fb": near, "bound": bound}, "regularity.lipschitz_certificate")
    return {"AC-4": _metric(near, bound, near <= bound, u.h, quantity="max cell gradient within 0.1 of FB")}


def task_nondeg(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    radii = [float(r) for r in cfg.params.get("radii", (0.05, 0.1, 0.2, 0.4))]
    fb = extract_free_boundary(u)
    rows = []
    for x0 in _fb_points(u, cfg):
        for r, ratio in reg.strong_nondegeneracy(u, x0, radii, fb):
            rows.append(list(map(float, x0)) + [r, ratio])
    header = [f"x{i + 1}" for i in range(u.dim)] + ["scale", "ratio"]
    art.csv("nondeg.csv", header, rows, "regularity.strong_nondegeneracy")
    worst = min(row[-1] for row in rows)
    thr = float(cfg.params.get("threshold", 0.3))
    art.json("nondeg.json", {"min_ratio": worst, "threshold": thr, "points": len(rows) // len(radii)}, "regularity.strong_nondegeneracy")
    return {"AC-5": _metric(worst, thr, worst >= thr, u.h, quantity="min max_Br u / r")}


def task_weiss(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    radii = [float(r) for r in cfg.params.get("radii", (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8))]
    slack = 20 * u.h
    rows, worst_drop, worst_err, series = [], 0.0, 0.0, []
    centers = np.zeros((1, u.dim)) if _is_half_plane(cfg) and "points" not in cfg.params else _fb_points(u, cfg, 4)
    for i, x0 in enumerate(centers):
        prof = reg.weiss_profile(u, x0, radii)
        name = f"weiss_{i}.csv"
        prof.write_csv(art.path(name, "regularity.weiss_profile"))
        series.append((name, "scale", "value"))
        worst_drop = max(worst_drop, prof.max_decrease())
        if _is_half_plane(cfg):
            worst_err = max(worst_err, max(abs(v - math.pi / 2) for v in prof.values))
        rows.append(list(map(float, x0)) + [prof.max_decrease()])
    art.csv("weiss_summary.csv", [f"x{i + 1}" for i in range(u.dim)] + ["max_decrease"], rows, "regularity.weiss_profile")
    art.plot(series)
    ok = worst_drop <= slack and worst_err <= slack
    return {"AC-6": _metric(max(worst_drop, worst_err), slack, ok, u.h, max_decrease=worst_drop, half_plane_error=worst_err)}


def task_blowup(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    steps = reg.blowup_sequence(u, cfg.params["x0"], [float(r) for r in cfg.params["radii"]])
    rows = [[s.radius, s.fit_error, s.fb_distance] + list(s.direction) for s in steps]
    art.csv("blowup.csv", ["scale", "fit_error", "fb_distance"] + [f"nu{i + 1}" for i in range(u.dim)], rows, "regularity.blowup_sequence")
    art.plot([("blowup.csv", "scale", "fit_error")])
    return {}


def task_touch(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    p = cfg.params
    rows = barrier_sweep(u, tuple(p.get("mus", (0.05, 0.1, 0.2))), int(p.get("count", 10)), p.get("nu"), p.get("sigma"))
    write_sweep_csv(rows, art.path("sweep.csv", "viscosity.barrier_sweep"))
    bad = sum(r.verdict == VIOLATION for r in rows)
    art.json("touch.json", {"barriers": len(rows), "violations": bad}, "viscosity.barrier_sweep")
    return {"AC-8": _metric(float(bad), 0, bad == 0, u.h, quantity="violation verdicts")}


def task_flatness(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    u = _field(cfg)
    p = cfg.params
    it = iterate_flatness(
        u,
        p.get("eps0"),
        float(p.get("alpha", 0.25)),
        float(p.get("eta", 1 / 8)),
        p.get("nu"),
        p.get("center"),
        float(p.get("radius", 1.0)),
    )
    it.write_csv(art.path("flatness.csv", "flatness.iterate_flatness"))
    art.json("certificates.json", it.to_json(), "flatness.iterate_flatness")
    fb = extract_free_boundary(u, Ball.unit(u.dim, 0.5))
    fb.write_csv(art.path("free_boundary.csv", "flatness.extract_free_boundary"))
    metrics = {}
    if len(fb):
        est = hausdorff_estimate(fb)
        art.json("hausdorff.json", est.to_json(), "flatness.hausdorff_estimate")
    art.plot([("flatness.csv", "scale", "deviation")])
    need = int(p.get("min_steps", 2))
    decays = it.consecutive_passes >= need
    expect = p.get("expect", "decay")
    ok = decays if expect == "decay" else not it.all_passed
    metrics["AC-7"] = _metric(float(it.consecutive_passes), need, ok, u.h, expect=expect)
    return metrics


# -- report ---------------------------------------------------------------------------------------------


def _richardson(values: Sequence[float]) -> float | None:
    """Error ratio ``v(h)/v(h/2)`` for two runs, ``(v1 - v2)/(v2 - v3)`` for three or more."""
    if len(values) == 2:
        return values[0] / values[1] if values[1] != 0 else None
    if len(values) >= 3:
        d = values[1] - values[2]
        return (values[0] - values[1]) / d if d != 0 else None
    return None


def report(run_dirs: Sequence[str | Path]) -> list[dict]:
    """Per-criterion rows aggregated over run directories, coarsest grid first."""
    if not run_dirs:
        raise ValidationError("no run directories given", field="params.runs")
    found: dict[str, list[dict]] = {c: [] for c in CRITERIA}
    for d in run_dirs:
        d = Path(d)
        man = d / "manifest.json"
        if not man.exists():
            raise ValidationError(f"{d} has no manifest.json", field="params.runs")
        metrics_path = d / "metrics.json"
        if not metrics_path.exists():
            continue
        for key, m in json.loads(metrics_path.read_text()).items():
            if key in found:
                found[key].append(m)
    rows = []
    for key in CRITERIA:
        ms = sorted(found[key], key=lambda m: -float(m["h"]))
        status = "not run" if not ms else ("pass" if all(m["pass"] for m in ms) else "fail")
        vals = [float(m["value"]) for m in ms]
        distinct_h = len({m["h"] for m in ms}) == len(ms) and len(ms) >= 2
        row = {"criterion": key, "status": status, "runs": len(ms), "values": vals, "h": [m["h"] for m in ms]}
        row["richardson_ratio"] = _richardson(vals) if distinct_h else None
        rows.append(row)
    return rows


def task_report(cfg: ExperimentConfig, art: Artifacts) -> TaskResult:
    runs = [Path(r) if Path(r).is_absolute() else cfg.base / r for r in cfg.params["runs"]]
    rows = report(runs)
    width = max([len(r["values"]) for r in rows] + [1])
    header = ["criterion", "status", "runs"] + [f"value_{i + 1}" for i in range(width)] + ["richardson_ratio"]
    table = []
    for r in rows:
        vals = r["values"] + [""] * (width - len(r["values"]))
        table.append([r["criterion"], r["status"], r["runs"]] + vals + ["" if r["richardson_ratio"] is None else r["richardson_ratio"]])
    art.csv("report.csv", header, table, "cli.report")
    art.json("report.json", rows, "cli.report")
    return {}


TASK_FUNCS: dict[str, Callable[[ExperimentConfig, Artifacts], TaskResult]] = {
    "fixture": task_fixture,
    "solve": task_solve,
    "audit": task_audit,
    "dichotomy": task_dichotomy,
    "lipschitz": task_lipschitz,
    "nondeg": task_nondeg,
    "weiss": task_weiss,
    "blowup": task_blowup,
    "touch": task_touch,
    "flatness": task_flatness,
    "report": task_report,
}


# -- entry points -------------------------------------------------------------------------------------


def run(cfg: ExperimentConfig, out: str | Path) -> int:
    """Execute one task; artifacts are written even when a claim check fails."""
    art = Artifacts(Path(out))
    art.json("config.json", cfg.to_json(), "cli.run")
    metrics = TASK_FUNCS[cfg.task](cfg, art)
    failed = sorted(k for k, m in metrics.items() if not m["pass"])
    if metrics:
        art.json("metrics.json", metrics, "cli.run")
    art.manifest(cfg, "fail" if failed else "pass")
    if failed:
        raise ClaimFailure("claim checks failed: " + ", ".join(failed))
    return EXIT_OK


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, NonFiniteError):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValidationError, PreconditionError)):
        return EXIT_VALIDATION
    if isinstance(exc, ClaimFailure):
        return EXIT_CLAIM
    return EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fblab", description="One-phase free boundary experiments.")
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--h", type=float, default=None, help="override grid.h")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, task=args.task, seed=args.seed, h=args.h)
        return run(cfg, args.out)
    except FblabError as exc:
        print(f"fblab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code(exc)
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"fblab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
