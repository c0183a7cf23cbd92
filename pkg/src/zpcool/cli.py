"""``zpcool`` command-line front end.

Subcommands ``pulsed``, ``sweep``, ``threshold``, ``scenario`` and ``verify``
read a TOML config, write ``<command>.csv`` plus ``<command>.manifest.json``
into ``--out`` and exit with 0 (success), 1 (invalid input), 2 (numerical
failure) or 3 (non-convergence).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, moments, pulsed, scenario, verify
from ._backend import BACKEND
from .config import ConfigDoc, get_grid, get_int, get_kind, get_number, get_number_list, get_params
from .errors import ConfigError, DomainError, NonConvergenceError, ZPCoolError
from .params import Kind, SystemParams

SCHEMA_VERSION = 1
COMMANDS = ("pulsed", "sweep", "threshold", "scenario", "verify")


# ---------------------------------------------------------------------------
# output


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "%.17g" % v
    return str(value)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: Path, columns, rows, comments=()):
    lines = [f"# {c}" for c in comments]
    lines.append(",".join(columns))
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def write_manifest(path: Path, command, resolved: dict, wall_time: float, extra=None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "version": __version__,
        "backend": BACKEND,
        "wall_time_s": round(wall_time, 6),
        "config": resolved,
    }
    if extra:
        doc.update(extra)
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, Kind):
        return obj.value
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _params_comment(p: SystemParams) -> str:
    return " ".join(f"{k}={_fmt(v)}" for k, v in p.as_dict().items())


# ---------------------------------------------------------------------------
# config helpers


def resolve_config(path) -> Path:
    """A path on disk, or the name of a shipped fixture (``record_single_click``)."""
    p = Path(path)
    if p.exists():
        return p
    fixture = resources.files("zpcool") / "fixtures" / f"{p.stem}.toml"
    if p.parent == Path(".") and fixture.is_file():
        return Path(str(fixture))
    raise ConfigError(f"config file not found: {path}")


def _check_keys(doc, mapping, allowed, table=None):
    for key in mapping:
        if key not in allowed:
            raise doc.error(f"unknown field (expected one of {sorted(allowed)})", key=key, table=table)


def _check_command(doc, expected):
    cmd = doc.data.get("command")
    if cmd is not None and cmd != expected:
        raise doc.error(f"config is for '{cmd}', not '{expected}'", key="command")


# ---------------------------------------------------------------------------
# pulsed


def cmd_pulsed(doc: ConfigDoc, args):
    """Occupation and herald probability on a (gtau, eta) grid for the zero-click outcome."""
    data = doc.data
    _check_command(doc, "pulsed")
    _check_keys(doc, data, {"command", "kind", "nbar", "eta", "gtau"})
    kind = get_kind(doc, data)
    nbar = get_number(doc, data, "nbar", required=True, minimum=0.0)
    etas = get_number_list(doc, data, "eta", minimum=0.0, maximum=1.0)
    grid = get_grid(doc, data, "gtau", lower=0.0)
    zero_click = pulsed.pulsed_as_zero_click if kind is Kind.ANTI_STOKES else pulsed.pulsed_s_zero_click
    baseline = pulsed.laser_cooled_occupation if kind is Kind.ANTI_STOKES else pulsed.tms_occupation
    rows = []
    for gtau in grid.values():
        base = baseline(nbar, gtau)
        for eta in etas:
            r = zero_click(nbar, gtau, eta, cutoff=0)
            rows.append((gtau, eta, r.occupation, r.probability, base))
    resolved = {"kind": kind, "nbar": nbar, "eta": etas, "gtau": grid.as_dict()}
    comments = [f"zpcool {__version__} pulsed", f"kind={kind.value} nbar={_fmt(nbar)}",
                "baseline: unconditioned occupation after the pulse"]
    threshold = pulsed.pulsed_threshold_efficiency(nbar)
    return ("gtau", "eta", "occupation", "probability", "baseline"), rows, comments, resolved, {
        "threshold_eta": threshold}


# ---------------------------------------------------------------------------
# sweep


def _sweep_column(task):
    """All eta values at one cooperativity; failures are recorded, never raised."""
    kind, C, rates, etas, tol = task
    p = SystemParams.from_cooperativity(C, **rates)
    try:
        n_unc = moments.unconditioned_steady_state(kind, p).n_mech
    except ZPCoolError:
        n_unc = math.nan
    out = []
    for eta in etas:
        try:
            ss = moments.conditioned_steady_state(kind, p, eta, tol=tol)
            n_c = ss.state.n_mech
            rec = math.exp(-2.0 * eta * p.kappa_ex * ss.state.n_opt)
        except ZPCoolError:
            n_c = rec = math.nan
        ok = math.isfinite(n_c) and math.isfinite(n_unc)
        if ok:
            out.append((eta, C, n_c, n_unc, n_c / n_unc, rec, True))
        else:
            out.append((eta, C, math.nan, math.nan, math.nan, math.nan, False))
    return out


def cmd_sweep(doc: ConfigDoc, args):
    """Steady-state occupations over a (eta, C) grid, one row per point."""
    data = doc.data
    _check_command(doc, "sweep")
    _check_keys(doc, data, {"command", "kind", "params", "grid", "tol"})
    kind = get_kind(doc, data)
    block = data.get("params")
    if not isinstance(block, dict):
        raise doc.error("missing [params] table", line=None)
    _check_keys(doc, block, {"kappa_ex", "kappa_in", "gamma", "Nbar"}, table="params")
    rates = {
        "kappa_ex": get_number(doc, block, "kappa_ex", "params", required=True, minimum=0.0),
        "kappa_in": get_number(doc, block, "kappa_in", "params", default=0.0, minimum=0.0),
        "gamma": get_number(doc, block, "gamma", "params", required=True, minimum=0.0),
        "Nbar": get_number(doc, block, "Nbar", "params", required=True, minimum=0.0),
    }
    if rates["gamma"] <= 0:
        raise doc.error("must be > 0", key="gamma", table="params")
    gblock = data.get("grid")
    if not isinstance(gblock, dict):
        raise doc.error("missing [grid] table", line=None)
    _check_keys(doc, gblock, {"eta", "C"}, table="grid")
    eta_grid = get_grid(doc, gblock, "eta", table="grid", lower=0.0, upper=1.0)
    c_grid = get_grid(doc, gblock, "C", table="grid", lower=0.0)
    tol = args.tol if args.tol is not None else get_number(doc, data, "tol", default=1e-10, minimum=0.0)
    if tol <= 0:
        raise doc.error("must be > 0", key="tol")
    etas = eta_grid.values()
    tasks = [(kind, float(C), rates, etas, tol) for C in c_grid.values()]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            columns = list(pool.map(_sweep_column, tasks))
    else:
        columns = [_sweep_column(t) for t in tasks]
    rows = [row for col in columns for row in col]
    failed = sum(not r[-1] for r in rows)
    resolved = {"kind": kind, "params": rates, "grid": {"eta": eta_grid.as_dict(), "C": c_grid.as_dict()},
                "tol": tol}
    comments = [
        f"zpcool {__version__} sweep",
        f"kind={kind.value} " + " ".join(f"{k}={_fmt(v)}" for k, v in rates.items()),
        "G = sqrt(C kappa gamma); record_probability = exp(-2 eta kappa_ex n_opt) per unit time",
        "converged=false rows carry no values",
    ]
    return ("eta", "C", "n_conditioned", "n_unconditioned", "ratio", "record_probability", "converged"), rows, \
        comments, resolved, {"failed_points": failed}


# ---------------------------------------------------------------------------
# threshold


def cmd_threshold(doc: ConfigDoc, args):
    """Pulsed (closed form) or continuous (bisection) threshold efficiency."""
    data = doc.data
    _check_command(doc, "threshold")
    _check_keys(doc, data, {"command", "mode", "nbar", "params", "tol", "kind"})
    mode = data.get("mode")
    if mode not in ("pulsed", "continuous"):
        raise doc.error(f"mode must be 'pulsed' or 'continuous', got {mode!r}", key="mode")
    if mode == "pulsed":
        nbar = get_number(doc, data, "nbar", required=True, minimum=0.0)
        eta = pulsed.pulsed_threshold_efficiency(nbar)
        row = ("pulsed", eta, eta, eta, 0)
        resolved = {"mode": mode, "nbar": nbar}
        comments = [f"zpcool {__version__} threshold", f"mode=pulsed nbar={_fmt(nbar)}"]
    else:
        kind = get_kind(doc, data, default="Stokes")
        params = get_params(doc, data)
        tol = args.tol if args.tol is not None else get_number(doc, data, "tol", default=1e-6, minimum=0.0)
        if tol <= 0:
            raise doc.error("must be > 0", key="tol")
        res = moments.threshold_efficiency_continuous(params, tol=tol, kind=kind)
        row = ("continuous", res.eta_star, res.bracket[0], res.bracket[1], res.iterations)
        resolved = {"mode": mode, "kind": kind, "params": params.as_dict(), "tol": tol}
        comments = [f"zpcool {__version__} threshold", f"mode=continuous kind={kind.value} {_params_comment(params)}"]
    print(f"eta* = {_fmt(row[1])}  bracket [{_fmt(row[2])}, {_fmt(row[3])}]")
    return ("mode", "eta_star", "bracket_lo", "bracket_hi", "iterations"), [row], comments, resolved, None


# ---------------------------------------------------------------------------
# scenario


def _scenario_ensemble(doc, sc, params, args):
    block = doc.data.get("ensemble")
    if block is None:
        return None
    if not isinstance(block, dict):
        raise doc.error("expected a table", key="ensemble")
    _check_keys(doc, block, {"eta", "duration", "dt", "n_traj", "record_every"}, table="ensemble")
    cfg = {
        "eta": get_number(doc, block, "eta", "ensemble", default=params.eta, minimum=0.0, maximum=1.0),
        "duration": get_number(doc, block, "duration", "ensemble", required=True, minimum=0.0),
        "dt": get_number(doc, block, "dt", "ensemble", default=1e-3, minimum=0.0),
        "n_traj": get_int(doc, block, "n_traj", "ensemble", default=10_000, minimum=1),
        "record_every": get_int(doc, block, "record_every", "ensemble", default=100, minimum=1),
    }
    seed = args.seed if args.seed is not None else 0
    state0 = sc.initial_state(params)
    ens = scenario.sample_ensemble(sc.kind, params, cfg["eta"], cfg["duration"], cfg["dt"], cfg["n_traj"], seed,
                                   record_every=cfg["record_every"], state0=state0, window=sc.window, jobs=args.jobs)
    se = ens.stderr()
    rows = [(t, *m, *s) for t, m, s in zip(ens.t, ens.mean, se)]
    cfg["seed"] = seed
    return cfg, rows, ens


def cmd_scenario(doc: ConfigDoc, args):
    """Deterministic measurement-record trajectory, plus an optional sampled ensemble."""
    sc = scenario.parse_scenario(doc)
    _check_command(doc, "scenario")
    params = sc.params
    tol = args.tol if args.tol is not None else sc.tol
    res = scenario.run_scenario(sc, params, tol=tol)
    pre = {ev.t: ev.pre for ev in res.events}
    rows = []
    for s in res.samples:
        if s.event == "click":
            b = pre[s.t]
            # log-probability before the click weight is applied
            rows.append((s.t, "pre-click", b.n_opt, b.n_mech, b.u, s.log_p - _click_weight(res, s.t)))
        rows.append((s.t, s.event or "sample", s.state.n_opt, s.state.n_mech, s.state.u, s.log_p))
    resolved = {
        "kind": sc.kind,
        "params": params.as_dict(),
        "segments": [dict(type=type(seg).__name__, **seg.__dict__) for seg in sc.segments],
        "initial": sc.initial if isinstance(sc.initial, str) else sc.initial.as_array(),
        "window": sc.window if sc.window is not None else moments.regaussification_window(params),
        "click_resolution": sc.click_resolution,
        "sample_dt": sc.sample_dt,
        "tol": tol,
    }
    comments = [
        f"zpcool {__version__} scenario",
        f"kind={sc.kind.value} {_params_comment(params)}",
        "pre-click rows hold the state just before a click at the same t",
    ]
    extra = {"log_record_probability": res.log_record_probability, "clicks": [ev.t for ev in res.events]}
    ens = _scenario_ensemble(doc, sc, params, args)
    if ens is not None:
        cfg, ens_rows, e = ens
        resolved["ensemble"] = cfg
        extra["ensemble_backend"] = e.backend
        extra["ensemble_p_max"] = e.p_max
        extra["ensemble_mean_clicks"] = float(np.mean(e.clicks))
        write_csv(
            Path(args.out) / "scenario_ensemble.csv",
            ("t", "u_mean", "n_opt_mean", "n_mech_mean", "u_stderr", "n_opt_stderr", "n_mech_stderr"),
            ens_rows,
            [f"zpcool {__version__} scenario ensemble", f"seed={cfg['seed']} n_traj={cfg['n_traj']} "
             f"dt={_fmt(cfg['dt'])} eta={_fmt(cfg['eta'])}"],
        )
    return ("t", "event", "n_opt", "n_mech", "u", "log_record_prob"), rows, comments, resolved, extra


def _click_weight(res, t):
    for ev in res.events:
        if ev.t == t:
            return ev.log_weight
    return 0.0


# ---------------------------------------------------------------------------
# verify


def cmd_verify(doc: ConfigDoc | None, args):
    """Run the cross-check suite; exit status 0 only if every check passes."""
    prof = verify.Profile()
    if doc is not None:
        data = doc.data
        _check_command(doc, "verify")
        _check_keys(doc, data, {"command", "as_mech_cutoff", "s_mech_cutoff", "d_opt", "d_mech", "n_traj", "only"})
        for name in ("as_mech_cutoff", "s_mech_cutoff", "d_opt", "d_mech", "n_traj"):
            setattr(prof, name, get_int(doc, data, name, default=getattr(prof, name), minimum=2))
        only = data.get("only")
        if only is not None and (not isinstance(only, list) or not all(isinstance(o, str) for o in only)):
            raise doc.error("expected a list of check-name fragments", key="only")
    else:
        only = None
    only = args.only or only
    results = verify.run(prof, hooks=args.hook or (), only=only)
    rows = [(r.name, r.passed, _fmt(r.expected) if np.ndim(r.expected) == 0 else "vector",
             _fmt(r.actual) if np.ndim(r.actual) == 0 else "vector", r.tol, r.seconds) for r in results]
    n_fail = sum(not r.passed for r in results)
    print(f"{len(results) - n_fail}/{len(results)} checks passed")
    resolved = {k: getattr(prof, k) for k in ("as_mech_cutoff", "s_mech_cutoff", "d_opt", "d_mech", "n_traj")}
    resolved["only"] = only
    resolved["hooks"] = list(args.hook or ())
    return ("check", "passed", "expected", "actual", "tol", "seconds"), rows, [f"zpcool {__version__} verify"], \
        resolved, {"failed": n_fail}


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _default_jobs():
    raw = os.environ.get("ZPCOOL_JOBS")
    if raw is None:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zpcool", description="Zero-photon heralded cooling calculations.")
    parser.add_argument("--version", action="version", version=f"zpcool {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, help=(globals()[f"cmd_{name}"].__doc__ or "").strip().splitlines()[0])
        p.add_argument("--config", required=name != "verify",
                       help="TOML config path or shipped fixture name (e.g. record_single_click)")
        p.add_argument("--out", default=".", help="output directory (default: current directory)")
        p.add_argument("--seed", type=int, default=None, help="seed for sampled trajectories")
        p.add_argument("--jobs", type=int, default=_default_jobs(),
                       help="worker processes (default: $ZPCOOL_JOBS or 1)")
        p.add_argument("--tol", type=float, default=None, help="override the solver tolerance")
        if name == "verify":
            p.add_argument("--hook", action="append", choices=verify.HOOKS, help=argparse.SUPPRESS)
            p.add_argument("--only", action="append", help="run only checks whose name contains this fragment")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    if args.tol is not None and not (args.tol > 0 and math.isfinite(args.tol)):
        parser.error("--tol must be a positive number")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        parser.error("--seed must lie in [0, 2^64)")
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        doc = ConfigDoc.load(resolve_config(args.config)) if args.config else None
        handler = globals()[f"cmd_{args.command}"]
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            columns, rows, comments, resolved, extra = handler(doc, args)
        write_csv(out / f"{args.command}.csv", columns, rows, comments)
        resolved["source"] = str(resolve_config(args.config)) if args.config else None
        write_manifest(out / f"{args.command}.manifest.json", args.command, resolved, time.perf_counter() - t0,
                       extra)
    except ZPCoolError as exc:
        print(f"zpcool {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"zpcool {args.command}: cannot write output: {exc}", file=sys.stderr)
        return 1
    if args.command == "verify" and extra.get("failed"):
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
