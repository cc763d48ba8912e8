"""Reproducible experiment driver.

Single binary, subcommand style.  Exit codes: 0 on success, 2 on usage or
configuration errors, 3 on runtime failures.  Numeric output is printed with
12 significant digits so reruns diff cleanly; every seeded command is
byte-reproducible on one platform.  CSV artifacts are written with minimal
RFC-4180 quoting plus a JSON sidecar carrying the resolved configuration and
a content hash.  The worker cap for scans comes from --threads, falling back
to the GIBBSFLOW_THREADS environment variable, defaulting to 1.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .analysis import (
    bad_config_gap,
    cluster_horizon,
    dobrushin_evolved,
    rn_derivative_check,
    transition_scan,
)
from .dynamics import (
    FiniteDynamics,
    InteractionRates,
    ProductRates,
    gillespie_simulate,
    unbiased_product_rates,
)
from .gibbs import GibbsSpec, MCParams, exact_measure
from .interactions import ising_interaction
from .lattice import Box, special_config
from .twolayer import fields


def _fmt(x) -> str:
    return f"{float(x):.12g}"


def _parse_grid(text: str) -> list[float]:
    """start:stop:step, inclusive of stop up to rounding."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be start:stop:step, got {text!r}")
    start, stop, step = (float(p) for p in parts)
    if step <= 0 or stop < start:
        raise ValueError(f"bad grid {text!r}")
    n = int(round((stop - start) / step)) + 1
    grid = [start + i * step for i in range(n)]
    return [t for t in grid if t <= stop + 1e-12 * max(1.0, abs(stop))]


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get("GIBBSFLOW_THREADS")
    return max(1, int(env)) if env else 1


def _write_csv(path, header, rows):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _write_sidecar(path, doc: dict):
    canonical = json.dumps(doc, sort_keys=True, default=str)
    doc = dict(doc)
    doc["config_sha256"] = hashlib.sha256(canonical.encode()).hexdigest()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Config validation for gap-scan
# ---------------------------------------------------------------------------

_CONFIG_SCHEMA = {
    "model": {"beta": float, "h": float, "d": int},
    "dynamics": {"delta": float, "t_grid": list},
    "analysis": {"eta": (str, list), "volumes": list,
                 "mc": {"sweeps": int, "burn_in": int, "replicas": int,
                        "seed": int, "thinning": int},
                 "threshold": float},
    "output": {"csv": str, "sidecar": str},
}


def _check_config(doc, schema=_CONFIG_SCHEMA, path="config"):
    errors = []
    if not isinstance(doc, dict):
        return [f"{path}: expected an object"]
    for key, want in schema.items():
        if key not in doc:
            errors.append(f"{path}.{key}: missing")
            continue
        value = doc[key]
        if isinstance(want, dict):
            errors.extend(_check_config(value, want, f"{path}.{key}"))
        elif isinstance(want, tuple):
            if not isinstance(value, want):
                errors.append(f"{path}.{key}: expected one of {[w.__name__ for w in want]}")
        elif want is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                errors.append(f"{path}.{key}: expected a number")
        elif not isinstance(value, want) or isinstance(value, bool):
            errors.append(f"{path}.{key}: expected {want.__name__}")
    for key in doc:
        if key not in schema:
            errors.append(f"{path}.{key}: unknown key")
    return errors


def load_experiment_config(path):
    with open(path) as fh:
        doc = json.load(fh)
    errors = _check_config(doc)
    if errors:
        raise ValueError("invalid configuration:\n  " + "\n  ".join(errors))
    if not doc["dynamics"]["t_grid"]:
        raise ValueError("invalid configuration:\n  config.dynamics.t_grid: empty")
    return doc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_fields(args):
    grid = _parse_grid(args.t_grid)
    if not grid or grid[0] <= 0:
        raise ValueError("t grid must be positive and non-empty")
    rows = []
    for t in grid:
        f = fields(t, args.delta)
        rows.append([_fmt(t), _fmt(args.delta), _fmt(f.h1), _fmt(f.h2), _fmt(f.h12)])
    if args.out:
        _write_csv(args.out, ["t", "delta", "h1", "h2", "h12"], rows)
    else:
        print(",".join(["t", "delta", "h1", "h2", "h12"]))
        for row in rows:
            print(",".join(row))
    return 0


def cmd_gap_scan(args):
    doc = load_experiment_config(args.config)
    model = doc["model"]
    dyn = doc["dynamics"]
    ana = doc["analysis"]
    mc = MCParams(**ana["mc"])
    u_pair = ising_interaction(model["beta"], 0.0, model["d"])
    eta = ana["eta"]
    if isinstance(eta, list):
        eta = (eta[0], float(eta[1]))
    result = transition_scan(
        u_pair, model["h"], dyn["delta"], eta,
        dyn["t_grid"], ana["volumes"], mc, d=model["d"],
        threshold=ana["threshold"], threads=_threads(args),
    )
    result.metadata["model"] = model
    if model["d"] < 3 and model["h"] != 0.0:
        result.metadata["label"] = "evidence only: the compensation construction is faithful for d >= 3"
    result.write_csv(doc["output"]["csv"])
    result.write_sidecar(doc["output"]["sidecar"])
    verdict = "no crossover" if result.crossover is None else f"crossover at t={_fmt(result.crossover)}"
    print(f"gap-scan complete: {verdict}; rows={len(result.rows)} -> {doc['output']['csv']}")
    return 0


def cmd_dobrushin(args):
    u = ising_interaction(args.beta, args.h, args.d)
    report = dobrushin_evolved(u)
    print(f"norm {report.norm:.3f} {'satisfied' if report.satisfied else 'not satisfied'}")
    return 0


def cmd_t0_estimate(args):
    u_nu = ising_interaction(args.beta, args.h, args.d)
    horizon = cluster_horizon(u_nu, None, args.d)
    print(f"C {_fmt(horizon.C)}")
    print(f"t0 {_fmt(horizon.t0)}")
    if args.out:
        horizon.write_csv(args.out)
        print(f"table -> {args.out}")
    else:
        print("t,eps_t,alpha_t,bound")
        for t, e, a, b in horizon.per_t[:: max(1, len(horizon.per_t) // 20)]:
            print(f"{_fmt(t)},{_fmt(e)},{_fmt(a)},{_fmt(b)}")
    return 0


def cmd_rn_check(args):
    u_nu = ising_interaction(args.beta, args.h, 1)
    box = Box((args.sites,))
    check = rn_derivative_check(
        u_nu, unbiased_product_rates(), args.t, box, cluster_size=args.cluster_size
    )
    print(f"max |a-b| {_fmt(check.max_ab)}")
    if check.max_ac is not None:
        print(f"max |a-c| {_fmt(check.max_ac)}")
    return 0


def cmd_pca_check(args):
    u_mu = ising_interaction(args.beta_mu, 0.0, 1)
    rates = InteractionRates(u_mu) if args.beta_mu else unbiased_product_rates()
    box = Box((args.sites,), torus=True)
    dyn = FiniteDynamics(rates, box)
    law = np.full(dyn.n_states, 1.0 / dyn.n_states)
    exact = dyn.evolve_law(law, args.t)
    print("n,tv_error")
    for n_disc in (int(s) for s in args.n.split(",")):
        step = dyn.pca_step_matrix(n_disc)
        approx = law @ np.linalg.matrix_power(step, int(np.floor(n_disc * args.t)))
        tv = 0.5 * float(np.abs(approx - exact).sum())
        print(f"{n_disc},{_fmt(tv)}")
    return 0


def cmd_evolve(args):
    u_nu = ising_interaction(args.beta, args.h, 1)
    box = Box((args.sites,), torus=args.torus)
    measure = exact_measure(GibbsSpec(u_nu, box))
    rates = ProductRates(0.0, args.rate)
    dyn = FiniteDynamics(rates, box)
    evolved = dyn.evolve_law(measure.probs, args.t)
    rows = [[i, _fmt(p)] for i, p in enumerate(evolved)]
    if args.out:
        _write_csv(args.out, ["state", "probability"], rows)
        print(f"evolved law -> {args.out}")
    else:
        print("state,probability")
        for row in rows:
            print(f"{row[0]},{row[1]}")
    return 0


def cmd_simulate(args):
    box = Box((args.sites,), torus=True)
    initial = special_config(args.initial, box, p=None, seed=None)
    rates = unbiased_product_rates()
    traj = gillespie_simulate(initial, rates, args.t, args.seed)
    text = traj.to_jsonl()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        print(f"{traj.flip_count()} events -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gibbsflow",
        description="Gibbs measures under spin-flip dynamics: experiment driver",
    )
    parser.add_argument("--threads", type=int, default=None, help="worker cap for scans")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fields", help="two-layer field curves as CSV")
    p.add_argument("--t-grid", required=True, help="start:stop:step")
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_fields)

    p = sub.add_parser("gap-scan", help="boundary-sensitivity scan from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_gap_scan)

    p = sub.add_parser("dobrushin", help="uniqueness-norm certificate")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--h", type=float, default=0.0)
    p.set_defaults(fn=cmd_dobrushin)

    p = sub.add_parser("t0-estimate", help="small-time convergence horizon")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_t0_estimate)

    p = sub.add_parser("rn-check", help="flip-derivative agreement check")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--t", type=float, default=0.05)
    p.add_argument("--sites", type=int, default=6)
    p.add_argument("--cluster-size", type=int, default=3)
    p.set_defaults(fn=cmd_rn_check)

    p = sub.add_parser("pca-check", help="discrete-time approximation error table")
    p.add_argument("--n", default="64,128,256", help="comma-separated discretizations")
    p.add_argument("--t", type=float, default=1.0)
    p.add_argument("--sites", type=int, default=4)
    p.add_argument("--beta-mu", type=float, default=0.0)
    p.set_defaults(fn=cmd_pca_check)

    p = sub.add_parser("evolve", help="evolve an exact Gibbs table")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--h", type=float, default=0.0)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--sites", type=int, default=8)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--torus", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("simulate", help="event-driven trajectory as JSON lines")
    p.add_argument("--sites", type=int, default=8)
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--initial", default="all-plus")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, (ValueError, json.JSONDecodeError)) else 3
    except Exception as exc:  # runtime failure
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
