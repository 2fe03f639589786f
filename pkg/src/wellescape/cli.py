"""Command line driver.

``wellescape run CONFIG`` executes a TOML experiment; the other subcommands
build a one-off configuration from flags and run it the same way.

Exit status: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import json
import logging
import sys

import numpy as np

from . import config as cfgmod
from ._validation import ParameterError
from .atlas import SamplingError
from .bvp import BvpError
from .capsize import DividingManifoldError, InconsistentGraphsError
from .io import dumps
from .runner import Runner
from .validation import AdvectionAborted, ContinuationError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3
NUMERICAL_ERRORS = (BvpError, SamplingError, DividingManifoldError, InconsistentGraphsError,
                    ContinuationError, AdvectionAborted, ArithmeticError, np.linalg.LinAlgError)

log = logging.getLogger("wellescape")


def _common(p):
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int, help="worker threads for manifold sampling")
    p.add_argument("--seed", type=int, help="seed for state sampling (overrides the config)")
    p.add_argument("-q", "--quiet", action="store_true", help="log warnings only")


def _model(p, default="roll-heave-2dof"):
    p.add_argument("--model", choices=cfgmod.MODELS, default=default)
    p.add_argument("--forcing", choices=("none", "quasi", "ou"), default="quasi")
    p.add_argument("--ou-seed", type=int, help="realization of the filtered-noise forcing")
    p.add_argument("--k", type=float, help="damping of the 1DoF model")
    p.add_argument("--h", type=float, help="heave stiffness of the 2DoF model")
    p.add_argument("--kx", type=float, help="heave damping")
    p.add_argument("--ky", type=float, help="roll damping")
    p.add_argument("--T", type=float, help="half-length of the time grid")
    p.add_argument("--N", type=int, help="number of grid nodes")


def _classify_flags(p, samples):
    p.add_argument("--samples", type=int, default=samples)
    p.add_argument("--tmax", type=float, default=11.5, help="horizon of the escape test")
    p.add_argument("--escape-y2", type=float, default=10.0, help="escape threshold on y^2")


def build_parser():
    ap = argparse.ArgumentParser(prog="wellescape", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a TOML experiment (file path or bundled name)")
    p.add_argument("config")
    _common(p)

    p = sub.add_parser("hyp-traj", help="hyperbolic trajectories")
    _common(p)
    _model(p)
    p.add_argument("--guess", choices=("constant", "linearised"))

    p = sub.add_parser("manifold", help="sample a stable, unstable or centre manifold")
    _common(p)
    _model(p)
    p.add_argument("--kind", choices=("stable", "centre", "unstable"), default="stable")
    p.add_argument("--bounds", type=float, default=1.5)
    p.add_argument("--counts", type=int, default=5)
    p.add_argument("--t0", type=float, nargs="+", default=[0.0])

    p = sub.add_parser("classify", help="manifold-graph classification against integration")
    _common(p)
    _model(p)
    _classify_flags(p, 10000)
    p.add_argument("--no-oracle", action="store_true", help="skip direct integration")

    p = sub.add_parser("integrity", help="safe volume of the well region")
    _common(p)
    _model(p)
    _classify_flags(p, 100000)
    p.add_argument("--classifier", choices=("graph", "integration"), default="graph")

    p = sub.add_parser("advect-check", help="1DoF manifolds: BVP against transported curves")
    _common(p)
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--forcing", choices=("none", "quasi"), default="quasi")

    p = sub.add_parser("auto-flux", help="periodic orbit and its manifolds, unforced 2DoF")
    _common(p)
    p.add_argument("--h", type=float, default=1.0)
    p.add_argument("--energy", type=float, default=0.26)
    p.add_argument("--n-phases", type=int, default=50)

    p = sub.add_parser("list-configs", help="names of the bundled configurations")
    return ap


def _adhoc(args):
    """Configuration mapping for a flag-driven subcommand."""
    cmd = args.command
    if cmd == "advect-check":
        raw = {"model": "eckart-1dof", "parameters": {"k": args.k},
               "forcing": {"kind": args.forcing},
               "tasks": [{"type": "hyp-traj"}, {"type": "advect-check"}]}
    elif cmd == "auto-flux":
        raw = {"model": "roll-heave-2dof", "parameters": {"h": args.h, "kx": 0.0, "ky": 0.0},
               "forcing": {"kind": "none"},
               "tasks": [{"type": "autonomous-flux", "energy": args.energy,
                          "n_phases": args.n_phases}]}
    else:
        raw = {"model": args.model, "forcing": {"kind": args.forcing}}
        if args.forcing == "ou" and args.ou_seed is not None:
            raw["forcing"]["seed"] = args.ou_seed
        names = ("k",) if args.model == "eckart-1dof" else ("h", "kx", "ky")
        params = {n: getattr(args, n) for n in names if getattr(args, n) is not None}
        if params:
            raw["parameters"] = params
        grid = {n: getattr(args, n) for n in ("T", "N") if getattr(args, n) is not None}
        if grid:
            raw["grid"] = grid
        hyp = {"type": "hyp-traj"}
        if cmd == "hyp-traj" and args.guess:
            hyp["guess"] = args.guess
        tasks = [hyp]
        if cmd == "manifold":
            tasks.append({"type": "manifold-sample", "kind": args.kind, "bounds": args.bounds,
                          "counts": args.counts, "t0": args.t0})
        elif cmd == "classify":
            tasks += [{"type": "manifold-sample"}, {"type": "fit-graphs"},
                      {"type": "classify", "samples": args.samples, "t_max": args.tmax,
                       "escape_y2": args.escape_y2, "oracle": not args.no_oracle}]
        elif cmd == "integrity":
            last = {"type": "integrity", "samples": args.samples, "classifier": args.classifier,
                    "t_max": args.tmax, "escape_y2": args.escape_y2}
            if args.classifier == "graph":
                tasks += [{"type": "manifold-sample"}, {"type": "fit-graphs"}, last]
            else:
                tasks = [last]
        raw["tasks"] = tasks
    raw["name"] = cmd
    raw["output"] = f"runs/{cmd}"
    return raw


def _overrides(args):
    return {"seed": args.seed, "threads": args.threads, "output": args.out}


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.command == "list-configs":
        for name in cfgmod.bundled_configs():
            print(name)
        return EXIT_OK
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "run":
            cfg = cfgmod.load(cfgmod.resolve(args.config), args.out, _overrides(args))
        else:
            raw = _adhoc(args)
            raw.update({k: v for k, v in _overrides(args).items() if v is not None})
            cfg = cfgmod.normalize(raw, args.out)
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    runner = Runner(cfg, args.out)
    try:
        if cfg["tasks"]:
            runner.store.write_text("config.toml", cfgmod.dumps(cfg))
        summary = runner.run()
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(json.loads(dumps(summary)), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
