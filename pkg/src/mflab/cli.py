"""``mflab`` command line.

Exit codes: 0 success, 1 failed check, 2 usage error.  Values come from
flags first, then an optional ``--config`` key=value file, then the
``MFLAB_SEED`` environment variable (seed only), then built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import density_process as dp
from . import harness
from . import jsq_reference as jsq
from . import meanfield_ode as ode
from . import ring_sim
from .errors import ConfigurationError, InstabilityError, StateSpaceTooLarge
from .state_space import ProportionVector

log = logging.getLogger("mflab")

DEFAULTS = {
    "k": 1, "lambda": 0.7, "mu": 1.0, "trunc": 40, "t_max": 50.0, "dt": 0.01,
    "sample_every": 1.0, "nodes": 16, "horizon": 1000.0, "burn_in": None,
    "samples": 1000, "gap": 1.0, "seed": 0, "reps": 20, "n_list": "4,16,64,256",
    "workers": 1, "process": "ring", "max_events": None,
}

TYPES = {
    "k": int, "lambda": float, "mu": float, "trunc": int, "t_max": float, "dt": float,
    "sample_every": float, "nodes": int, "horizon": float, "burn_in": float,
    "samples": int, "gap": float, "seed": int, "reps": int, "n_list": str,
    "workers": int, "process": str, "max_events": int,
}


def read_config_file(path: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in TYPES:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = TYPES[key](value)
    if not out:
        raise ConfigurationError(f"{path}: config file sets no keys")
    return out


def resolve(args: argparse.Namespace) -> dict:
    file_values = read_config_file(args.config) if args.config else {}
    env_seed = os.environ.get("MFLAB_SEED")
    resolved = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = file_values[key]
        elif key == "seed" and env_seed is not None:
            resolved[key] = int(env_seed)
        else:
            resolved[key] = default
    return resolved


def _write_meta(out: Path, command: str, params: dict, extra: dict | None = None) -> None:
    meta = {"command": command, "version": __version__, "config": params}
    if extra:
        meta.update(extra)
    Path(f"{out}.meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _write_json(out: Path | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def cmd_jsq(p: dict, args) -> int:
    pv = jsq.jsq_stationary(p["k"], p["lambda"], p["mu"], p["trunc"])
    payload = {
        "version": __version__, "config": p,
        "metadata": {k: pv.meta[k] for k in ("k", "lambda", "mu", "B", "residual", "boundary_mass")},
        "stationary": pv.to_json_dict(),
    }
    _write_json(args.out, payload)
    return 0


def cmd_ode(p: dict, args) -> int:
    k, lam, mu, cap = p["k"], p["lambda"], p["mu"], p["trunc"]
    if args.fixed_point:
        state = ode.fixed_point(k, lam, mu, cap, dt=p["dt"], literal=args.remark2_literal)
        payload = {
            "version": __version__, "config": p,
            "residual": state.residual, "B": cap, "boundary_mass": state.boundary_mass(),
            "fixed_point": ProportionVector.from_dense(state.z).to_json_dict(),
        }
        _write_json(args.out, payload)
        return 0
    traj = ode.integrate(
        ode.OdeState.point_mass(k, cap), k, lam, mu, p["t_max"], p["dt"],
        sample_every=p["sample_every"], literal=args.remark2_literal,
    )
    out = args.out or Path("traj.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "u", "z"])
        for t, z in zip(traj.times, traj.states):
            for idx in zip(*z.nonzero()):
                w.writerow([repr(round(t, 12)), ",".join(str(int(c)) for c in idx), repr(float(z[idx]))])
    _write_meta(out, "ode", p, {
        "max_mass_error": traj.max_mass_error, "min_entry": traj.min_entry,
        "clip_events": traj.clip_events, "remark2_literal": args.remark2_literal,
    })
    return 0


def cmd_ring(p: dict, args) -> int:
    out = args.out or Path("rows.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "u", "z", "stderr"])
        for rep in range(p["reps"]):
            cfg = ring_sim.RingConfig(p["nodes"], p["k"], p["lambda"], p["mu"], seed=p["seed"])
            est = ring_sim.stationary_estimate(
                cfg, p["burn_in"], p["samples"], p["gap"],
                rng=ring_sim.RandomStream(ring_sim.replication_seed(p["seed"], rep)),
            )
            for u in sorted(est.mean.entries):
                w.writerow([rep, ",".join(map(str, u)), repr(est.mean[u]), repr(est.stderr[u])])
    _write_meta(out, "ring", p)
    return 0


def cmd_density(p: dict, args) -> int:
    k, n = p["k"], p["nodes"]
    if args.exact:
        res = dp.exact_stationary(n, k, p["lambda"], p["mu"], p["trunc"], literal=args.remark2_literal)
        params = {"N": n, "k": k, "lambda": p["lambda"], "mu": p["mu"], "B": p["trunc"],
                  "remark2_literal": args.remark2_literal, "version": __version__}
        _write_json(args.out, res.report(params))
        return 0
    out = args.out or Path("rows.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "u", "count"])

        def obs(t, m):
            for u in sorted(m.counts):
                w.writerow([repr(t), ",".join(map(str, u)), m.counts[u]])

        dp.gillespie_simulate(
            dp.CountVector.point_mass((0,) * (k + 1), n), k, p["lambda"], p["mu"], p["horizon"],
            p["seed"], obs, cap=args.trunc, max_events=p["max_events"], literal=args.remark2_literal,
        )
    _write_meta(out, "density", p)
    return 0


def cmd_converge(p: dict, args) -> int:
    n_list = tuple(int(x) for x in str(p["n_list"]).split(","))
    cfg = harness.ExperimentConfig(
        mode="converge", k=p["k"], lam=p["lambda"], mu=p["mu"], n_list=n_list,
        burn_in=p["burn_in"], samples=p["samples"], sample_gap=p["gap"], trunc=p["trunc"],
        replications=p["reps"], seed=p["seed"], process=p["process"], workers=p["workers"],
    )
    rows, summary = harness.run_convergence(cfg)
    out = args.out or Path("conv.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(harness.CONVERGE_HEADER)
        for r in rows:
            w.writerow(r.csv_fields(timing=not args.no_timing))
    _write_meta(out, "converge", cfg.as_dict(), {
        "summary": {"per_n": summary.per_n, "non_increasing": summary.non_increasing,
                    "ratio_last_to_first": summary.halving_ratio},
    })
    for row in summary.per_n:
        print(f"N={row['n']:>7}  mean rho={row['mean_rho']:.5f} +/- {row['ci_half_width']:.5f}")
    print(f"non-increasing within CIs: {summary.non_increasing}; last/first = {summary.halving_ratio:.3f}")
    return 0


def cmd_cases(p: dict, args) -> int:
    results = harness.run_cases(literal=args.remark2_literal, seed=p["seed"])
    failed = False
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failed |= not r.passed
        print(f"{status}  {r.name:<28} residual={r.residual:.3e}  tol={r.tolerance:.1e}")
    if args.out:
        _write_json(args.out, {
            "version": __version__, "config": p, "remark2_literal": args.remark2_literal,
            "results": [vars(r) for r in results],
        })
    return 1 if failed else 0


def cmd_drift(p: dict, args) -> int:
    n_values = tuple(int(x) for x in (args.n_values or "8,32,128").split(","))
    report = harness.run_drift_comparison(
        n_values, p["k"], p["lambda"], p["mu"], t_max=p["t_max"], seed=p["seed"], cap=p["trunc"],
    )
    _write_json(args.out, report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mflab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, *names):
        sp.add_argument("--config", help="key=value file; flags override it")
        sp.add_argument("--out", type=Path)
        sp.add_argument("-v", "--verbose", action="store_true")
        flags = {
            "k": ("--k", int), "lambda": ("--lambda", float), "mu": ("--mu", float),
            "trunc": ("--trunc", int), "t_max": ("--t-max", float), "dt": ("--dt", float),
            "sample_every": ("--sample-every", float), "nodes": ("--nodes", int),
            "horizon": ("--horizon", float), "burn_in": ("--burn-in", float),
            "samples": ("--samples", int), "gap": ("--gap", float), "seed": ("--seed", int),
            "reps": ("--reps", int), "n_list": ("--n-list", str), "workers": ("--workers", int),
            "process": ("--process", str), "max_events": ("--max-events", int),
        }
        for name in names:
            flag, typ = flags[name]
            sp.add_argument(flag, dest=name, type=typ, default=None)

    sp = sub.add_parser("jsq", help="stationary law of JSQ among k+1 queues")
    common(sp, "k", "lambda", "mu", "trunc")
    sp.set_defaults(func=cmd_jsq)

    sp = sub.add_parser("ode", help="integrate the mean-field ODE or find its fixed point")
    common(sp, "k", "lambda", "mu", "trunc", "t_max", "dt", "sample_every")
    sp.add_argument("--fixed-point", action="store_true")
    sp.add_argument("--remark2-literal", action="store_true")
    sp.set_defaults(func=cmd_ode)

    sp = sub.add_parser("ring", help="stationary estimate from the ring simulator")
    common(sp, "nodes", "k", "lambda", "mu", "horizon", "burn_in", "samples", "gap", "seed", "reps")
    sp.set_defaults(func=cmd_ring)

    sp = sub.add_parser("density", help="simulate or solve the count-vector chain")
    common(sp, "nodes", "k", "lambda", "mu", "horizon", "seed", "trunc", "max_events")
    sp.add_argument("--exact", action="store_true")
    sp.add_argument("--remark2-literal", action="store_true")
    sp.set_defaults(func=cmd_density)

    sp = sub.add_parser("converge", help="distance to P^k as N grows")
    common(sp, "n_list", "k", "lambda", "mu", "reps", "seed", "trunc", "burn_in", "samples", "gap",
           "workers", "process")
    sp.add_argument("--no-timing", action="store_true", help="write 0 for wall_time_s")
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("cases", help="run the oracle checks")
    common(sp, "seed")
    sp.add_argument("--remark2-literal", action="store_true")
    sp.set_defaults(func=cmd_cases)

    sp = sub.add_parser("drift", help="density-process paths against the ODE path")
    common(sp, "k", "lambda", "mu", "t_max", "seed", "trunc")
    sp.add_argument("--n-values")
    sp.set_defaults(func=cmd_drift)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        params = resolve(args)
        if args.command == "drift" and getattr(args, "t_max", None) is None and "t_max" not in (
            read_config_file(args.config) if args.config else {}
        ):
            params["t_max"] = 10.0
        return args.func(params, args)
    except (ConfigurationError, InstabilityError, StateSpaceTooLarge) as exc:
        parser.exit(2, f"mflab: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
