"""Command-line front end.

Subcommands: match, validate, transfer, sweep, evolve. Exit codes are
0 success, 1 invalid input, 2 validity failure under --strict,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

import jsonschema
import numpy as np

from . import __version__
from .cascade import CascadeError, CascadeSpec, SubsystemSpec, build_fermionic_cascade, \
    build_triple_cascade, filter_cavity_subsystem
from .dispersion import (ChannelError, ChannelSpec, DispersionTooStrongError, FilterCavity,
                         NoDispersionError, match_closed_form, match_exact, validity_report)
from .hilbert import DensityMatrix, HilbertSpace, Operator, embed, lowering_op
from .lindblad import HamiltonianTerm, IntegrationError, StepControl, integrate
from .transfer import PulseSpec, TransferConfig, default_grid, default_jobs, run_transfer, \
    sweep, timing_offset

log = logging.getLogger("dispcascade")

EXIT_OK, EXIT_INPUT, EXIT_STRICT, EXIT_NUMERIC = 0, 1, 2, 3
SIG = 12


class InputError(Exception):
    pass


def fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "NaN"
    return f"{x:.{SIG}g}"


def _round(obj: Any) -> Any:
    """Round every float to 12 significant digits for JSON output."""
    if isinstance(obj, float):
        if math.isnan(obj) or math.isinf(obj):
            return str(obj)
        return float(f"{obj:.{SIG}g}")
    if isinstance(obj, dict):
        return {k: _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.generic):
        return _round(obj.item())
    return obj


def dump_json(obj: Any) -> str:
    return json.dumps(_round(obj), indent=2)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _config_echo(command: str, cfg: dict) -> list[str]:
    return [f"# dispcascade {__version__} {command}",
            "# config: " + json.dumps(cfg, sort_keys=True)]


# ---------------------------------------------------------------- match / validate

def _channel_from_args(a: argparse.Namespace) -> ChannelSpec:
    try:
        return ChannelSpec(v=a.v, alpha=a.alpha, L=a.L, omega_bar=a.omega_bar,
                           delta_omega=a.delta_omega)
    except ChannelError as exc:
        raise InputError(str(exc)) from exc


def cmd_match(a: argparse.Namespace) -> int:
    ch = _channel_from_args(a)
    try:
        res = match_closed_form(ch)
        exact = match_exact(ch) if a.exact else None
    except NoDispersionError as exc:
        raise InputError(str(exc)) from exc
    except DispersionTooStrongError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    final = exact or res
    report = validity_report(ch, final.cavity, a.threshold)
    cfg = {"command": "match", "channel": asdict(ch), "exact": a.exact,
           "threshold_factor": a.threshold}
    payload = {"config": cfg, "closed_form": _match_dict(res)}
    if exact:
        payload["exact"] = _match_dict(exact)
    payload["validity"] = report.to_dict()
    if a.format == "json":
        text = dump_json(payload) + "\n"
    else:
        lines = _config_echo("match", cfg)
        for name, r in (("closed_form", res), ("exact", exact)):
            if r is None:
                continue
            c = r.cavity
            lines += [f"[{name}]", f"delta_f = {fmt(c.delta_f)}", f"gamma_f = {fmt(c.gamma_f)}",
                      f"theta = {fmt(c.theta)}", f"delay = {fmt(c.delay)}",
                      f"residual_d2 = {fmt(r.residual_d2)}", f"residual_d3 = {fmt(r.residual_d3)}"]
            lines += [f"warning = {w}" for w in r.warnings]
        lines.append("[validity]")
        lines += [f"{k} = {str(v).lower()}" for k, v in report.flags().items()]
        text = "\n".join(lines) + "\n"
    _emit(text, a.out)
    return EXIT_STRICT if a.strict and not report.all_ok else EXIT_OK


def _match_dict(r) -> dict:
    return {"method": r.method, **asdict(r.cavity), "residual_d2": r.residual_d2,
            "residual_d3": r.residual_d3, "iterations": r.iterations, "warnings": list(r.warnings)}


VALIDATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["channel"],
    "properties": {
        "channel": {
            "type": "object",
            "additionalProperties": False,
            "required": ["v", "alpha", "L", "omega_bar"],
            "properties": {k: {"type": "number"} for k in
                           ("v", "alpha", "L", "omega_bar", "delta_omega")},
        },
        "cavity": {
            "type": "object",
            "additionalProperties": False,
            "required": ["delta_f", "gamma_f"],
            "properties": {k: {"type": "number"} for k in ("delta_f", "gamma_f", "theta", "delay")},
        },
        "match": {"enum": ["closed_form", "exact"]},
        "threshold_factor": {"type": "number", "exclusiveMinimum": 0},
    },
}


def _load_json(path: str, schema: dict) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise InputError(f"config error at {where}: {e.message}")
    return data


def cmd_validate(a: argparse.Namespace) -> int:
    if a.config:
        data = _load_json(a.config, VALIDATE_SCHEMA)
    else:
        if a.v is None or a.alpha is None or a.L is None or a.omega_bar is None:
            raise InputError("validate needs --config or all of --v --alpha --L --omega-bar")
        data = {"channel": {"v": a.v, "alpha": a.alpha, "L": a.L, "omega_bar": a.omega_bar,
                            "delta_omega": a.delta_omega}}
    try:
        ch = ChannelSpec(**data["channel"])
        if "cavity" in data:
            cav = FilterCavity(**data["cavity"])
        else:
            method = data.get("match", "closed_form")
            cav = (match_exact(ch) if method == "exact" else match_closed_form(ch)).cavity
    except (ChannelError, DispersionTooStrongError) as exc:
        raise InputError(str(exc)) from exc
    tf = data.get("threshold_factor", a.threshold)
    report = validity_report(ch, cav, tf)
    payload = {"config": {"command": "validate", **data, "threshold_factor": tf},
               "cavity": asdict(cav), "report": report.to_dict()}
    _emit(dump_json(payload) + "\n", a.out)
    return EXIT_STRICT if a.strict and not report.all_ok else EXIT_OK


# ---------------------------------------------------------------- transfer / sweep

def _transfer_template(a: argparse.Namespace, x: float | None) -> TransferConfig:
    kw = dict(gamma_bar_star=a.gamma_bar_star, M=a.M, window=a.window, basis=a.basis,
              match=a.match, atol=a.atol)
    try:
        if getattr(a, "ideal", False):
            return TransferConfig(alpha_star=0.0, ideal=True, **kw)
        if x is None or not x > 0:
            raise InputError("--x must be positive (or pass --ideal)")
        return TransferConfig.from_x(x, **kw)
    except ValueError as exc:
        raise InputError(str(exc)) from exc


def cmd_transfer(a: argparse.Namespace) -> int:
    cfg = _transfer_template(a, a.x)
    try:
        res = run_transfer(cfg)
    except IntegrationError as exc:
        log.error("integration failed: %s", exc)
        return EXIT_NUMERIC
    d = res.to_dict()
    payload = {"config": {"command": "transfer", **d.pop("config")}, **d}
    _emit(dump_json(payload) + "\n", a.out)
    return EXIT_OK


def cmd_sweep(a: argparse.Namespace) -> int:
    if not (0 < a.x_min < a.x_max):
        raise InputError("need 0 < --x-min < --x-max")
    if a.points < 2:
        raise InputError("--points must be at least 2")
    template = _transfer_template(a, a.x_min)
    xs = default_grid(a.points, a.x_min, a.x_max)
    jobs = a.jobs if a.jobs is not None else default_jobs()
    rows = sweep(xs, template, jobs=jobs)
    cfg = {"command": "sweep", "x_min": a.x_min, "x_max": a.x_max, "points": a.points,
           **{k: v for k, v in template.to_dict().items() if k not in ("alpha_star", "x")}}
    buf = io.StringIO()
    for line in _config_echo("sweep", cfg):
        buf.write(line + "\n")
    failed = [r for r in rows if r.note and math.isnan(r.infidelity_sim)]
    header = ["x", "infidelity_sim", "infidelity_analytic", "ratio"] + (["note"] if failed else [])
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        row = [fmt(r.x), fmt(r.infidelity_sim), fmt(r.infidelity_analytic), fmt(r.ratio)]
        if failed:
            row.append(r.note if math.isnan(r.infidelity_sim) else "")
        w.writerow(row)
    _emit(buf.getvalue(), a.out)
    if rows and len(failed) == len(rows):
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------- evolve

_PULSE = {
    "oneOf": [
        {"type": "null"},
        {"type": "object", "additionalProperties": False, "required": ["name"],
         "properties": {"name": {"type": "string"},
                        "gamma_bar": {"type": "number", "exclusiveMinimum": 0},
                        "center": {"anyOf": [{"type": "number"}, {"const": "group_delay"}]},
                        "value": {"type": "number"}}},
    ]
}

EVOLVE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["subsystems", "window"],
    "properties": {
        "subsystems": {
            "type": "array", "minItems": 3, "maxItems": 3,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["label", "kind", "gamma"],
                "properties": {
                    "label": {"type": "string", "pattern": "^[A-Za-z0-9_]+$"},
                    "kind": {"enum": ["node", "cavity"]},
                    "gamma": {"type": "number", "minimum": 0},
                    "detuning": {"type": "number"},
                    "dim": {"type": "integer", "minimum": 2, "maximum": 6},
                    "pulse": _PULSE,
                },
            },
        },
        "M": {"type": "integer", "minimum": 1},
        "initial": {"type": "array", "items": {"type": "string"}},
        "observables": {"type": "array", "items": {"type": "string"}},
        "window": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "samples": {"type": "integer", "minimum": 2},
        "step_control": {
            "type": "object", "additionalProperties": False,
            "properties": {"atol": {"type": "number", "exclusiveMinimum": 0},
                           "h_min": {"type": "number", "exclusiveMinimum": 0},
                           "h0": {"type": "number", "exclusiveMinimum": 0}},
        },
    },
}


def _make_pulse(spec: dict | None, path: str, group_delay: float):
    if spec is None:
        return None
    name = spec["name"]
    if name == "sech":
        center = spec.get("center", 0.0)
        if center == "group_delay":
            center = group_delay
        return PulseSpec(spec.get("gamma_bar", 1.0), float(center))
    if name == "constant":
        value = float(spec.get("value", 0.0))
        return lambda t: value
    raise InputError(f"config error at {path}/name: unknown pulse {name!r}")


def build_evolve_model(data: dict):
    """Cascade (s, f x M, t) and mode table from an ``evolve`` config.

    A ``node`` is a two-level atom times a cavity mode (cavity couples to the
    channel; ``pulse`` drives the atom-cavity exchange). A ``cavity`` is a
    single mode with Hamiltonian -detuning c^dag c. The middle subsystem is
    replicated M times and gamma is passed to the builders unchanged.
    """
    subs_cfg = data["subsystems"]
    M = data.get("M", 1)
    mid = subs_cfg[1]
    group_delay = 0.0
    if mid["kind"] == "cavity" and mid["gamma"] > 0:
        group_delay = timing_offset(FilterCavity(mid.get("detuning", 0.0), mid["gamma"] / M))

    modes: list[str] = []
    subsystems: list[SubsystemSpec] = []
    expanded = [subs_cfg[0]] + [dict(mid, label=f"{mid['label']}_{k + 1}" if M > 1 else mid["label"])
                                for k in range(M)] + [subs_cfg[2]]
    for i, sc in enumerate(expanded):
        path = f"subsystems/{min(i, 1) if i <= M else 2}"
        pulse = _make_pulse(sc.get("pulse"), path + "/pulse", group_delay)
        if sc["kind"] == "node":
            c = lowering_op(2).matrix
            a = lowering_op(2).matrix
            space = HilbertSpace([4])
            x = np.kron(a, c.conj().T)
            terms = [HamiltonianTerm(Operator(space, x + x.conj().T), pulse)] if pulse else []
            if sc.get("detuning"):
                terms.append(HamiltonianTerm(Operator(space, -sc["detuning"] * np.kron(np.eye(2), c.T @ c))))
            subsystems.append(SubsystemSpec(sc["label"], 4, sc["gamma"],
                                            Operator(space, np.kron(np.eye(2), c)), terms))
            modes += [(f"{sc['label']}.atom", 2), (f"{sc['label']}.cavity", 2)]
        else:
            dim = sc.get("dim", 2)
            if pulse is not None:
                raise InputError(f"config error at {path}/pulse: cavities take no pulse")
            subsystems.append(filter_cavity_subsystem(sc.get("detuning", 0.0), sc["gamma"],
                                                      sc["label"], dim))
            modes.append((sc["label"], dim))
    try:
        spec = CascadeSpec(subsystems, M=M)
        me = build_triple_cascade(spec) if M == 1 else build_fermionic_cascade(spec)
    except CascadeError as exc:
        raise InputError(str(exc)) from exc
    return me, modes


def _mode_number(modes: list[tuple[str, int]], name: str, space: HilbertSpace, path: str) -> Operator:
    names = [m for m, _ in modes]
    if name not in names:
        raise InputError(f"config error at {path}: unknown mode {name!r} (known: {', '.join(names)})")
    flat = HilbertSpace([d for _, d in modes])
    k = names.index(name)
    n = Operator(HilbertSpace([modes[k][1]]), np.diag(np.arange(modes[k][1], dtype=float)))
    return Operator(space, embed(n, flat, k).matrix)


def cmd_evolve(a: argparse.Namespace) -> int:
    data = _load_json(a.config, EVOLVE_SCHEMA)
    me, modes = build_evolve_model(data)
    names = [m for m, _ in modes]
    flat = HilbertSpace([d for _, d in modes])
    occ = [0] * len(modes)
    for i, m in enumerate(data.get("initial", [])):
        if m not in names:
            raise InputError(f"config error at initial/{i}: unknown mode {m!r}")
        occ[names.index(m)] = 1
    rho0 = DensityMatrix.basis(me.space, flat.index(occ))
    observables = data.get("observables", [])
    e_ops = {o: _mode_number(modes, o, me.space, f"observables/{i}") for i, o in enumerate(observables)}
    t0, t1 = data["window"]
    if not t1 > t0:
        raise InputError("config error at window: end must exceed start")
    sc = data.get("step_control", {})
    control = StepControl(atol=sc.get("atol", 1e-10), h_min=sc.get("h_min", 1e-9), h0=sc.get("h0"))
    try:
        traj = integrate(me, rho0, t0, t1, control, sample_times=data.get("samples", 200),
                         e_ops=e_ops, store_states=False)
    except IntegrationError as exc:
        log.error("integration failed: %s", exc)
        return EXIT_NUMERIC
    buf = io.StringIO()
    for line in _config_echo("evolve", data):
        buf.write(line + "\n")
    buf.write(f"# trace_drift: {fmt(traj.trace_drift)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["time", *observables])
    if observables:
        for i, t in enumerate(traj.times):
            w.writerow([fmt(t), *(fmt(traj.expectations[o][i].real) for o in observables)])
    _emit(buf.getvalue(), a.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_channel_args(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--v", type=float, required=required, help="linear dispersion coefficient")
    p.add_argument("--alpha", type=float, required=required, help="quadratic dispersion coefficient")
    p.add_argument("--L", type=float, required=required, help="propagation length")
    p.add_argument("--omega-bar", type=float, required=required, help="carrier frequency")
    p.add_argument("--delta-omega", type=float, default=0.0, help="signal bandwidth")


def _add_transfer_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--gamma-bar-star", type=float, default=1.0)
    p.add_argument("--M", type=int, default=1, help="number of fictitious cavities")
    p.add_argument("--window", type=float, default=20.0, help="half window T in units 1/gamma_bar")
    p.add_argument("--basis", choices=["restricted", "full"], default="restricted")
    p.add_argument("--match", choices=["closed_form", "exact"], default="closed_form")
    p.add_argument("--atol", type=float, default=1e-10, help="local error per unit time")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dispcascade", description=__doc__.splitlines()[0],
                                     allow_abbrev=False)
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="fit the fictitious cavity to a channel", allow_abbrev=False)
    _add_channel_args(p, required=True)
    p.add_argument("--exact", action="store_true", help="refine by Newton iteration")
    p.add_argument("--threshold", type=float, default=10.0, help="factor used for '<<'")
    p.add_argument("--strict", action="store_true", help="exit 2 if any validity check fails")
    p.add_argument("--format", choices=["text", "json"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("validate", help="validity report as JSON", allow_abbrev=False)
    p.add_argument("--config", help="JSON file with channel (and optional cavity)")
    _add_channel_args(p, required=False)
    p.add_argument("--threshold", type=float, default=10.0)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("transfer", help="one state-transfer run, JSON result", allow_abbrev=False)
    p.add_argument("--x", type=float, help="alpha* gamma_bar*^2")
    p.add_argument("--ideal", action="store_true", help="dispersionless pair cascade")
    _add_transfer_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("sweep", help="infidelity vs x, CSV", allow_abbrev=False)
    p.add_argument("--x-min", type=float, default=0.01)
    p.add_argument("--x-max", type=float, default=3.0)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--jobs", type=int, default=None,
                   help="parallel workers (default: $DISPCASCADE_JOBS or CPU count)")
    _add_transfer_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("evolve", help="integrate a cascade described by a JSON config", allow_abbrev=False)
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evolve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; invalid input is 1 here
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if a.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return a.func(a)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
