"""Command-line front end.

Exit codes: 0 success, 2 invalid parameters, 3 enumeration cap exceeded,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import __version__
from . import accountant as acc
from .oracle import EnumerationCapExceeded
from .rng import RngSeed
from .scenarios import CONFIG_FIELDS, ScenarioConfig, parse_axis, results_json, simulate, sweep, write_csv
from .verify import DEFAULT_SUITE, SUITES, run_suite, verify_instance

EXIT_OK, EXIT_INVALID, EXIT_CAP, EXIT_VERIFY = 0, 2, 3, 4
DEFAULT_DELTA = 1e-4


class InvalidParameters(ValueError):
    pass


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else f"{x:.10g}"


# account / search

def cmd_account(args) -> int:
    mode = args.mode
    if mode == "local":
        eps = acc.epsilon_local(args.sigma, args.d, args.T)
        print(f"epsilon={_fmt(eps)} delta=0")
        return EXIT_OK
    if mode == "exact":
        _need(args, "n")
        eps = acc.epsilon_scrambler_capped(args.sigma, args.d, args.n, args.T)
        print(f"epsilon={_fmt(eps)} delta=0")
        return EXIT_OK
    _need(args, "epsilon")
    n = args.n or 1
    if mode == "generic":
        _need(args, "epsilon0")
        delta = acc.generic_randomizer_delta(args.epsilon, args.epsilon0, args.gamma, n, args.d)
        print(f"epsilon={_fmt(args.epsilon)} delta={_fmt(delta)}")
        return EXIT_OK
    if mode == "hoeffding":
        delta = acc.delta_bound_hoeffding(args.epsilon, args.sigma, n, args.d, args.T)
    elif mode == "bennett":
        delta = acc.delta_bound_bennett(args.epsilon, args.sigma, n, args.d, args.T)
    else:
        rng = RngSeed(args.seed).generator("amplification")
        delta = acc.delta_bound_empirical(args.epsilon, args.sigma, n, args.d, args.T, R=args.R, rng=rng)
    print(f"epsilon={_fmt(args.epsilon)} delta={_fmt(delta)}")
    if args.verbose and mode in ("hoeffding", "bennett") and args.sigma < 1:
        p = acc.AmplificationParams.randomized_response(args.epsilon, args.sigma, args.T)
        tail = acc._hoeffding_log_tail(p) if mode == "hoeffding" else acc._bennett_log_tail(p, "chernoff")
        for m, t in enumerate(acc.mixture_terms(tail, args.sigma, n, args.d)):
            if t > 0:
                print(f"  m={m} k={m + args.d + 1} term={t:.6g}")
    return EXIT_OK


def cmd_search(args) -> int:
    rng = RngSeed(args.seed).generator("amplification")
    eps = acc.epsilon_for_delta(args.delta, args.method, sigma=args.sigma, T=args.T, n=args.n, d=args.d,
                                R=args.R, rng=rng)
    print(f"epsilon={_fmt(eps)} delta={_fmt(args.delta)}")
    return EXIT_OK


def _need(args, name):
    if getattr(args, name) is None:
        raise InvalidParameters(f"--{name.replace('_', '-')} is required for this mode")


# simulate / sweep

def _scenario_config(args, scenario: str | None) -> ScenarioConfig:
    values: dict = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        if not isinstance(doc, dict):
            raise InvalidParameters("config file must hold a JSON object")
        unknown = set(doc) - set(CONFIG_FIELDS)
        if unknown:
            raise InvalidParameters(f"invalid config keys: {sorted(unknown)}")
        values.update(doc)
    for f in fields(ScenarioConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            values[f.name] = v
    if scenario is not None:
        values["scenario"] = scenario
    try:
        return ScenarioConfig(**values)
    except TypeError as exc:
        raise InvalidParameters(str(exc)) from exc


def _emit(results, meta, args):
    if args.format == "json":
        text = results_json(results, meta)
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        return
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(results, fh, meta)
    else:
        write_csv(results, sys.stdout, meta)


def cmd_simulate(args) -> int:
    cfg = _scenario_config(args, args.scenario)
    res = simulate(cfg)
    meta = {"command": "simulate", "version": __version__, "seed": cfg.seed, "config": asdict(cfg)}
    _emit([res], meta, args)
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _scenario_config(args, args.scenario)
    axes = dict(parse_axis(a) for a in args.axis or [])
    results = sweep(cfg, axes, jobs=args.jobs)
    meta = {"command": "sweep", "version": __version__, "seed": cfg.seed, "config": asdict(cfg),
            "axes": axes}
    _emit(results, meta, args)
    return EXIT_OK


# verify

def cmd_verify(args) -> int:
    if args.check:
        _need(args, "T")
        rep = verify_instance(args.check, args.sigma, args.d, args.T, n=args.n,
                              epsilon_offset=args.epsilon_offset)
    else:
        names = SUITES if args.suite == "all" else DEFAULT_SUITE
        rep = run_suite(names, epsilon_offset=args.epsilon_offset)
    for c in rep.checks:
        if args.verbose or not c.passed:
            print(c.line())
    print(rep.summary())
    return EXIT_OK if rep.ok else EXIT_VERIFY


# parser

def _mech_args(p, T_default=20):
    p.add_argument("--sigma", type=float, default=0.0, help="sampling probability")
    p.add_argument("--d", type=int, default=0, help="dummies")
    p.add_argument("--T", type=int, default=T_default, help="number of targets")
    p.add_argument("--n", type=int, default=None, help="scrambler group size")


def _scenario_args(p):
    p.add_argument("--config", help="JSON file with ScenarioConfig keys; flags override it")
    p.add_argument("--out", help="output path (default stdout)")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    for f in fields(ScenarioConfig):
        if f.name == "scenario":
            continue
        flag = f"--{f.name}"
        if "bool" in str(f.type):
            p.add_argument(flag, dest=f"cfg_{f.name}", action="store_const", const=True, default=None)
        elif "float" in str(f.type):
            p.add_argument(flag, dest=f"cfg_{f.name}", type=float, default=None)
        elif "int" in str(f.type):
            p.add_argument(flag, dest=f"cfg_{f.name}", type=int, default=None)
        else:
            p.add_argument(flag, dest=f"cfg_{f.name}", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="commdp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("account", help="epsilon or delta for one mechanism")
    p.add_argument("mode", choices=("local", "exact", "hoeffding", "bennett", "empirical", "generic"))
    _mech_args(p)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--epsilon0", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--R", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true", help="print the per-m mixture terms")
    p.set_defaults(fn=cmd_account)

    p = sub.add_parser("search", help="smallest epsilon for a delta target")
    p.add_argument("--method", choices=acc.METHODS, default="bennett")
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    _mech_args(p)
    p.add_argument("--R", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_search)

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("scenario", choices=("aggregate", "kmeans"))
    _scenario_args(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("sweep", help="run a grid of scenarios")
    p.add_argument("--scenario", choices=("aggregate", "kmeans"), default=None)
    p.add_argument("--axis", action="append", help="name=lo..hi:step or name=v1,v2 (repeatable)")
    p.add_argument("--jobs", type=int, default=1)
    _scenario_args(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("verify", help="compare closed forms with the exact oracle")
    p.add_argument("--suite", choices=("default", "all"), default="default")
    p.add_argument("--check", choices=SUITES, help="verify one instance instead of a suite")
    _mech_args(p, T_default=None)
    p.add_argument("--epsilon-offset", type=float, default=0.0, help="test hook: add to the formula epsilon")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except EnumerationCapExceeded as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAP
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
