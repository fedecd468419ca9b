"""Command-line front end: ``affinesde {simulate,verify,poincare,lyapunov,report} CONFIG``.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical blow-up,
4 a requested criterion failed.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np
from jsonschema import Draft202012Validator

from . import io, poincare, svg, verifier
from .core import TimeGrid
from .integrator import SimulationError, euler_maruyama, moment_curve
from .lyapunov import LyapunovSpec, gronwall_envelope, h6_check, h7_check, h8_check
from .measures import EmpiricalMeasure
from .models import BUILTINS, build_model, gronwall_inputs
from .rng import PointMass, StreamKey, initial_from_dict, sample_initial

log = logging.getLogger("affinesde")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_FAIL = 0, 2, 3, 4
SEED_ENV = "AFFINESDE_SEED"
CRITERIA = ("h3", "h4", "h4prime", "periodicity", "restart")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_count = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["model"],
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name"],
            "properties": {"name": {"enum": sorted(BUILTINS)}, "params": {"type": "object"}},
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps_per_period": _count,
                "n_periods": _count,
                "record_stride": _count,
            },
        },
        "ensemble": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_paths": {"type": "integer", "minimum": 2},
                "seed": {"type": "integer", "minimum": 0},
                "initial": {
                    "type": "object",
                    "required": ["type"],
                    "properties": {
                        "type": {"enum": ["point", "gaussian"]},
                        "x0": {"type": "array", "items": _num},
                        "mean": {"type": "array", "items": _num},
                        "cov": {"type": "array", "items": {"type": "array", "items": _num}},
                    },
                },
                "scheme": {"enum": ["em", "tamed"]},
                "workers": _count,
                "csv": {"type": "boolean"},
            },
        },
        "criteria": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "list": {"type": "array", "items": {"enum": list(CRITERIA)}},
                "n_periods": _count,
                "m_sub": {"type": "integer", "minimum": 2, "maximum": 256},
                "repeats": {"type": "integer", "minimum": 3},
                "floor_factor": _pos,
                "C": _pos,
                "h4prime_epsilon": _pos,
                "t_points": _count,
                "burn_in": {"type": "integer", "minimum": 0},
                "restart_k": _count,
                "restart_t_fraction": {"type": "number", "minimum": 0, "maximum": 1},
            },
        },
        "poincare": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k_max": {"type": "integer", "minimum": 2},
                "n_paths": {"type": "integer", "minimum": 2},
                "mode": {"enum": ["resample", "continue"]},
                "residual_seed": {"type": "integer", "minimum": 0},
                "m_sub": {"type": "integer", "minimum": 2, "maximum": 256},
                "repeats": {"type": "integer", "minimum": 3},
            },
        },
        "lyapunov": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "V": {
                    "type": "object",
                    "required": ["type"],
                    "properties": {
                        "type": {"enum": ["half_norm", "quadratic"]},
                        "D": {"type": "array", "items": {"type": "array", "items": _num}},
                    },
                },
                "alpha_shift": _num,
                "n_samples": _count,
                "R": _pos,
                "seed": {"type": "integer", "minimum": 0},
                "h8": {"type": "boolean"},
                "K": _count,
                "fd": {"type": "boolean"},
                "envelope_periods": _count,
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"dir": {"type": "string"}, "plots": {"type": "boolean"}},
        },
    },
}

DEFAULTS = {
    "grid": {"steps_per_period": 1200, "n_periods": 3, "record_stride": 50},
    "ensemble": {"n_paths": 1000, "initial": None, "scheme": "em", "workers": 1, "csv": True},
    "criteria": {
        "list": ["h3", "periodicity"], "n_periods": 8, "m_sub": 256, "repeats": 16,
        "floor_factor": verifier.FLOOR_FACTOR, "C": verifier.H3_BOUND, "t_points": 8,
        "restart_k": 3, "restart_t_fraction": 1.0 / 3.0,
    },
    "poincare": {"k_max": 20, "n_paths": 10000, "mode": "resample", "m_sub": 256, "repeats": 16},
    "lyapunov": {"alpha_shift": 0.0, "n_samples": 400, "R": 5.0, "seed": 0, "h8": True, "K": 20,
                 "fd": False, "envelope_periods": 5},
    "output": {"dir": "out", "plots": True},
}
DEFAULT_SEED = 0


class ConfigError(ValueError):
    pass


def validate(config: dict) -> None:
    errors = sorted(Draft202012Validator(SCHEMA).iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(msgs))


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    validate(config)
    return config


def resolve(config: dict, args) -> dict:
    """Merge defaults, config and flags; flags win, then config, then the seed env var, then defaults."""
    cfg = copy.deepcopy(DEFAULTS)
    for section, values in config.items():
        if isinstance(values, dict) and section in cfg:
            cfg[section].update(values)
        else:
            cfg[section] = copy.deepcopy(values)
    ens = cfg["ensemble"]
    if "seed" not in ens:
        env = os.environ.get(SEED_ENV)
        if env is not None:
            try:
                ens["seed"] = int(env)
            except ValueError:
                raise ConfigError(f"{SEED_ENV}={env!r} is not an integer") from None
        else:
            ens["seed"] = DEFAULT_SEED
    overrides = {
        ("ensemble", "seed"): getattr(args, "seed", None),
        ("ensemble", "workers"): getattr(args, "workers", None),
        ("ensemble", "n_paths"): getattr(args, "n_paths", None),
        ("output", "dir"): getattr(args, "out", None),
    }
    for (section, key), v in overrides.items():
        if v is not None:
            cfg[section][key] = v
    crit = getattr(args, "criteria", None)
    if crit is not None:
        cfg["criteria"]["list"] = [c for c in crit.split(",") if c]
    if ens["n_paths"] < 2:
        raise ConfigError(f"ensemble/n_paths: need at least 2 paths, got {ens['n_paths']}")
    if ens["workers"] < 1:
        raise ConfigError("ensemble/workers: must be >= 1")
    if ens["seed"] < 0:
        raise ConfigError("ensemble/seed: must be non-negative")
    unknown = set(cfg["criteria"]["list"]) - set(CRITERIA)
    if unknown:
        raise ConfigError(f"criteria/list: unknown criteria {sorted(unknown)}")
    return cfg


def _hashable(cfg: dict) -> dict:
    """The config minus fields that cannot change results."""
    out = copy.deepcopy(cfg)
    out["ensemble"].pop("workers", None)
    out.pop("output", None)
    return out


def _model(cfg):
    try:
        return build_model(cfg["model"]["name"], cfg["model"].get("params"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model/params: {exc}") from None


def _initial(cfg, model):
    spec = cfg["ensemble"].get("initial") or {"type": "point", "x0": [0.0] * model.l}
    try:
        init = initial_from_dict(spec)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"ensemble/initial: {exc}") from None
    if init.dim != model.l:
        raise ConfigError(f"ensemble/initial: dimension {init.dim} does not match model dimension {model.l}")
    return init


def _grid(cfg, model, n_periods: int, stride: Optional[int] = None):
    spp = cfg["grid"]["steps_per_period"]
    dt = model.T / spp
    stride = stride or cfg["grid"]["record_stride"]
    n = n_periods * spp
    if n % stride:
        raise ConfigError(f"grid/record_stride: {stride} does not divide {n} steps")
    return TimeGrid(0.0, dt, n), stride


def _outdir(cfg) -> Path:
    d = Path(cfg["output"]["dir"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_timing(out: Path, name: str, seconds: float, man: dict) -> None:
    # wall time lives outside the reproducible outputs; the manifest names the run it timed
    with open(out / "timing.txt", "a") as fh:
        fh.write(f"{name} {seconds:.3f} manifest: {json.dumps(man, sort_keys=True)}\n")


def cmd_simulate(cfg) -> int:
    t_start = time.perf_counter()
    model = _model(cfg)
    ens_cfg = cfg["ensemble"]
    grid, stride = _grid(cfg, model, cfg["grid"]["n_periods"])
    ens = euler_maruyama(
        model, _initial(cfg, model), grid, ens_cfg["n_paths"], ens_cfg["seed"],
        record_stride=stride, scheme=ens_cfg["scheme"], workers=ens_cfg["workers"],
    )
    out = _outdir(cfg)
    man = io.manifest(
        ens_cfg["seed"], _hashable(cfg), command="simulate", model=model.name, dt=grid.dt,
        N=ens.n_paths, scheme=ens.scheme, flagged=len(ens.flagged),
    )
    io.write_afpe(ens, out / "ensemble.afpe", man)
    if ens_cfg["csv"]:
        io.write_ensemble_csv(ens, out / "ensemble.csv", man)
    mc = moment_curve(ens)
    io.write_curve_csv(out / "moments.csv", {"t": mc.times, "mean_sq": mc.mean, "stderr": mc.stderr}, man)
    io.write_json(out / "manifest.json", dict(man, sup_mean_sq=mc.max, argsup_t=mc.argmax))
    if cfg["output"]["plots"]:
        svg.line_plot({"E|X|^2": (mc.times, mc.mean)}, title=f"{model.name}: second moment",
                      xlabel="t", ylabel="mean |X|^2", path=str(out / "moments.svg"), manifest=man)
    _write_timing(out, "simulate", time.perf_counter() - t_start, man)
    return EXIT_OK


def _verify_reports(cfg, model):
    crit = cfg["criteria"]
    ens_cfg = cfg["ensemble"]
    names = crit["list"]
    if not names:
        raise ConfigError("criteria/list: at least one criterion is required")
    aff = model.affine
    T = model.T
    spp = cfg["grid"]["steps_per_period"]
    n_t = crit["t_points"]
    if spp % n_t:
        raise ConfigError(f"criteria/t_points: {n_t} does not divide steps_per_period {spp}")
    seed = ens_cfg["seed"]
    reports = []
    needs_ensemble = [c for c in names if c != "restart"]
    if needs_ensemble:
        n_periods = crit["n_periods"]
        grid, stride = _grid(cfg, model, n_periods, spp // n_t)
        ens = euler_maruyama(
            model, _initial(cfg, model), grid, ens_cfg["n_paths"], seed,
            record_stride=stride, scheme=ens_cfg["scheme"], workers=ens_cfg["workers"],
        )
        h3 = verifier.h3_boundedness(ens, aff, n_periods, C=crit["C"])
        burn_in = crit.get("burn_in")
        if burn_in is None:
            burn_in = h3.details["burn_in"]
            if burn_in is None:
                burn_in = 0
                h3.notes.append("no plateau within the simulated horizon; periodicity uses burn-in 0")
        if "h3" in names:
            reports.append(h3)
        if "h4" in names:
            reports.append(verifier.h4_average(ens, aff, n_periods, crit["m_sub"], crit["repeats"], seed,
                                               crit["floor_factor"]))
        if "h4prime" in names:
            reports.append(verifier.h4prime_average(ens, aff, n_periods, crit.get("h4prime_epsilon")))
        if "periodicity" in names:
            ens_full = ens
            if burn_in + 2 > n_periods:
                # same streams, so the longer run extends the shorter one exactly
                grid, stride = _grid(cfg, model, burn_in + 2, spp // n_t)
                ens_full = euler_maruyama(
                    model, _initial(cfg, model), grid, ens_cfg["n_paths"], seed,
                    record_stride=stride, scheme=ens_cfg["scheme"], workers=ens_cfg["workers"],
                )
            t_grid = [j * T / n_t for j in range(n_t)]
            rep = verifier.periodicity_residual(ens_full, aff, t_grid, burn_in, crit["m_sub"], crit["repeats"],
                                                seed, crit["floor_factor"])
            reports.append(rep)
    if "restart" in names:
        k = crit["restart_k"]
        steps_t = int(round(crit["restart_t_fraction"] * spp))
        reports.append(verifier.restart_identity_check(
            model, _initial(cfg, model), k, steps_t * T / spp, ens_cfg["n_paths"], seed,
            crit["m_sub"], crit["repeats"], dt=T / spp, workers=ens_cfg["workers"],
            floor_factor=crit["floor_factor"], scheme=ens_cfg["scheme"],
        ))
    order = {c: i for i, c in enumerate(CRITERIA)}
    return sorted(reports, key=lambda r: order[r.criterion])


def cmd_verify(cfg) -> int:
    t_start = time.perf_counter()
    model = _model(cfg)
    reports = _verify_reports(cfg, model)
    out = _outdir(cfg)
    man = io.manifest(cfg["ensemble"]["seed"], _hashable(cfg), command="verify", model=model.name)
    io.write_json(out / "report.json", {"manifest": man, "reports": [r.to_dict() for r in reports]})
    if cfg["output"]["plots"]:
        for r in reports:
            svg.line_plot(
                {"statistic": (r.index, r.statistics), **({"noise floor": (r.index, r.floors)} if r.floors else {})},
                title=f"{model.name}: {r.criterion}", xlabel="index", ylabel=r.criterion,
                path=str(out / f"{r.criterion}.svg"), manifest=man,
            )
    for r in reports:
        verdict = "info" if r.passed is None else ("PASS" if r.passed else "FAIL")
        print(f"{r.criterion}: {verdict}")
    _write_timing(out, "verify", time.perf_counter() - t_start, man)
    return EXIT_OK if all(r.passed is not False for r in reports) else EXIT_FAIL


def cmd_poincare(cfg) -> int:
    t_start = time.perf_counter()
    model = _model(cfg)
    pc = cfg["poincare"]
    seed = cfg["ensemble"]["seed"]
    init = _initial(cfg, model)
    spp = cfg["grid"]["steps_per_period"]
    dt = model.T / spp
    if isinstance(init, PointMass):
        mu0 = EmpiricalMeasure(np.array([init.x0]))
    else:
        mu0 = EmpiricalMeasure(sample_initial(StreamKey(seed, 0, "initial"), init, pc["n_paths"]))
    res = poincare.iterate_fixed_point(
        model, mu0, pc["k_max"], pc["n_paths"], dt, seed, m_sub=pc["m_sub"], repeats=pc["repeats"],
        mode=pc["mode"], workers=cfg["ensemble"]["workers"], scheme=cfg["ensemble"]["scheme"],
    )
    out = _outdir(cfg)
    man = io.manifest(seed, _hashable(cfg), command="poincare", model=model.name, dt=dt, N=pc["n_paths"])
    doc = {"manifest": man, "converged_at": res.converged_at, "verdict": res.verdict, "reason": res.reason,
           "trace": res.trace()}
    if "residual_seed" in pc and res.converged_at is not None:
        r = poincare.fixed_point_residual(model, res.final, pc["n_paths"], dt, pc["residual_seed"],
                                          m_sub=pc["m_sub"], repeats=pc["repeats"])
        doc["fixed_point_residual"] = {"estimate": r.estimate, "floor": r.noise_floor,
                                       "pass": r.estimate <= poincare.CONVERGE_FACTOR * r.noise_floor}
    io.write_json(out / "trace.json", doc)
    res.final.to_csv(out / "fixed_point.csv", io.manifest_lines(man))
    if cfg["output"]["plots"]:
        k = list(range(len(res.gaps)))
        svg.line_plot({"gap": (k, res.gaps), "noise floor": (k, res.floors)}, title=f"{model.name}: iteration gaps",
                      xlabel="k", ylabel="d_BL", path=str(out / "gaps.svg"), manifest=man)
    print(f"poincare: {res.verdict}" + (f" at k={res.converged_at}" if res.converged_at else f" ({res.reason})"))
    _write_timing(out, "poincare", time.perf_counter() - t_start, man)
    return EXIT_OK if res.verdict == "converged" else EXIT_FAIL


def _lyapunov_spec(cfg, model) -> LyapunovSpec:
    vs = cfg["lyapunov"].get("V")
    if vs is None:
        raise ConfigError("lyapunov/V: a Lyapunov function must be specified")
    if vs["type"] == "half_norm":
        return LyapunovSpec.half_norm(model.l)
    D = np.array(vs.get("D", []), dtype=float)
    if D.shape != (model.l, model.l):
        raise ConfigError(f"lyapunov/V/D: expected a {model.l}x{model.l} matrix")
    try:
        return LyapunovSpec.quadratic(D)
    except ValueError as exc:
        raise ConfigError(f"lyapunov/V/D: {exc}") from None


def cmd_lyapunov(cfg) -> int:
    t_start = time.perf_counter()
    model = _model(cfg)
    ly = cfg["lyapunov"]
    V = _lyapunov_spec(cfg, model)
    if model.alpha is None:
        raise ConfigError(f"model {model.name} exposes no alpha(t)")
    shift = ly["alpha_shift"]

    def alpha(t):
        return model.alpha(t) + shift

    T = model.T
    t_samples = np.linspace(0.0, T, 17)
    h6 = h6_check(V, t_samples)
    h7 = h7_check(model, V, alpha, t_samples, ly["n_samples"], ly["seed"], ly["R"], fd=ly["fd"])
    doc = {
        "h6": {"A_est": h6.A_est, "B_est": h6.B_est, "pass": h6.passed, "certified": h6.certified},
        "h7": {"max_residual": h7.max_residual, "argmax": h7.argmax, "tol": h7.tol, "pass": h7.passed,
               "alpha_integrals": h7.alpha_integrals, "alpha_diverges": h7.alpha_diverges,
               "n_evaluations": h7.n_evaluations, "note": h7.note},
    }
    passed = h6.passed and h7.passed and h7.alpha_diverges
    if ly["h8"] and V.is_quadratic:
        D0 = V.Dmat(0.0)
        h8 = h8_check(model, lambda t: D0, alpha, t_grid=np.linspace(0.0, T, 9),
                      n_samples=max(10, ly["n_samples"] // 8), seed=ly["seed"], K=ly["K"],
                      dD=lambda t: np.zeros_like(D0), R=ly["R"], fd=ly["fd"])
        doc["h8"] = {"min_margin": h8.min_margin, "argmin": h8.argmin, "periodicity_defect": h8.periodicity_defect,
                     "alpha_integral_trace": h8.alpha_integral_trace, "pass": h8.passed, "failures": h8.failures}
        passed = passed and h8.passed
    out = _outdir(cfg)
    man = io.manifest(cfg["ensemble"]["seed"], _hashable(cfg), command="lyapunov", model=model.name)
    if model.name == "example41":
        init = _initial(cfg, model)
        if isinstance(init, PointMass):
            m2 = float(np.sum(np.square(init.x0)))
        else:
            m2 = float(np.sum(np.square(init.mean)) + np.trace(np.array(init.cov)))
        A, B, K = gronwall_inputs(model, m2)
        nodes, env = gronwall_envelope(A, B, K, 0.0, ly["envelope_periods"] * T, n_nodes=64)
        io.write_curve_csv(out / "envelope.csv", {"t": nodes, "E": env}, man)
    doc = {"manifest": man, "model": model.name, "alpha_shift": shift, "pass": bool(passed), **doc}
    io.write_json(out / "certificate.json", doc)
    print(f"lyapunov: {'PASS' if passed else 'FAIL'} (max residual {h7.max_residual:.3g})")
    _write_timing(out, "lyapunov", time.perf_counter() - t_start, man)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_report(paths, out_path) -> int:
    entries, sources = [], []
    for p in paths:
        try:
            with open(p) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{p}: {exc}") from None
        if isinstance(doc, dict) and "manifest" in doc:
            sources.append(doc["manifest"])
        if "reports" in doc:
            for r in doc["reports"]:
                entries.append({"file": str(p), "criterion": r["criterion"], "pass": r["pass"]})
        elif "trace" in doc:
            entries.append({"file": str(p), "criterion": "poincare", "pass": doc["verdict"] == "converged"})
        elif "h7" in doc:
            entries.append({"file": str(p), "criterion": "lyapunov", "pass": doc["pass"]})
        else:
            raise ConfigError(f"{p}: not a report, trace or certificate")
    from . import __version__

    summary = {
        "manifest": {"version": __version__, "sources": sources},
        "entries": entries,
        "pass": all(e["pass"] is not False for e in entries),
    }
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if out_path:
        Path(out_path).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if summary["pass"] else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affinesde", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "verify", "poincare", "lyapunov"):
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--n-paths", type=int, dest="n_paths")
        p.add_argument("--out", help="output directory")
        if name == "verify":
            p.add_argument("--criteria", help=f"comma-separated subset of {','.join(CRITERIA)}")
    p = sub.add_parser("report")
    p.add_argument("inputs", nargs="+", help="report/trace/certificate JSON files")
    p.add_argument("--out", help="summary JSON path (default stdout)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.inputs, args.out)
        cfg = resolve(load_config(args.config), args)
        handler = {"simulate": cmd_simulate, "verify": cmd_verify, "poincare": cmd_poincare,
                   "lyapunov": cmd_lyapunov}[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, FloatingPointError) as exc:
        print(f"numerical blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
