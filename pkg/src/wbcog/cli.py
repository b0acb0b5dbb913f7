"""Command-line entry point (``wbcog``)."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, Scenario, ValidationError, apply_overrides, ci_profile, load_scenario
from .harness import SchemeId, design_trial, run_sweep, score_design, trial_seeds
from .joint import (
    _combiners,
    _initial_point,
    build_q3,
    sca_coefficients,
    subcarrier_problem,
    write_ao_trace_csv,
)
from .manifold import write_trace_csv
from .metrics import write_beampattern_csv
from .sdp import dump_sdpa

FIG6_ANGLES = (-40.0, -15.0, 10.0, 35.0)
SWEEP_DEFAULTS = {
    "antennas": [4, 8, 12, 16],
    "ls": [1, 2, 3, 4],
    "eta": [0.25, 0.5, 0.75, 1.0],
    "beta-si": [-60.0, -70.0, -80.0],
}
ALL_SCHEMES = [s.value for s in SchemeId]


def _scenario(args) -> Scenario:
    sc = load_scenario(args.config) if args.config else Scenario()
    if args.profile == "ci":
        sc = ci_profile(sc)
    if args.set:
        sc = apply_overrides(sc, args.set)
    if args.trials is not None:
        sc = sc.replace(n_trials=args.trials)
    return sc


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_text(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _with_fig6_geometry(sc: Scenario) -> Scenario:
    if sc.target_angles_deg:
        return sc
    return sc.replace(T=len(FIG6_ANGLES), target_angles_deg=FIG6_ANGLES)


def _maybe_dump_channels(args, design):
    if getattr(args, "dump_channels", None):
        design.channels.dump(args.dump_channels)


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_convergence(args) -> int:
    sc = _scenario(args)
    out = _out_dir(args)
    d = design_trial(sc, SchemeId.WB_COGNITIVE, args.seed)
    _maybe_dump_channels(args, d)
    l_rcg = min(d.rcg_traces) if d.rcg_traces else None
    if l_rcg is not None:
        write_trace_csv(d.rcg_traces[l_rcg], out / "rcg_trace.csv")
    l = d.psi_s[0]
    sol = d.solutions[l]
    write_ao_trace_csv(sol.trace, out / "ao_trace.csv", sc.T, sol.w.shape[1])
    print(f"wrote {out / 'rcg_trace.csv'} (sub-carrier {l_rcg}) and "
          f"{out / 'ao_trace.csv'} (sub-carrier {l}, {sol.iterations} AO iterations)")
    return 0


def cmd_beampattern(args) -> int:
    sc = _with_fig6_geometry(_scenario(args))
    out = _out_dir(args)
    for scheme in args.schemes:
        d = design_trial(sc, scheme, args.seed)
        _maybe_dump_channels(args, d)
        m = score_design(d, sc, patterns=True)
        for t in range(sc.T):
            path = out / f"beampattern_{scheme}_t{t}.csv"
            write_beampattern_csv(m.beampatterns, path, target=t)
        print(f"{scheme}: sub-carrier {d.psi_s[0]}, angle MSE {json.dumps(m.angle_mse)}")
    return 0


def cmd_sweep(args) -> int:
    sc = _scenario(args)
    values = args.values if args.values else SWEEP_DEFAULTS[harness._axis(args.axis)]
    res = run_sweep(sc, args.axis, values, args.schemes, sc.n_trials, threads=args.threads)
    text = harness.emit_results(res, None, args.format)
    _write_text(args.out, text)
    if res.failures:
        logging.warning("failed trials: %s", res.failures)
    return 0


def mse_table(sc: Scenario, schemes, n_trials: int, threads: int = 1):
    """Mean angle MSE per scheme for the fixed-angle geometry."""
    sc = _with_fig6_geometry(sc)
    seeds = trial_seeds(sc.seed, n_trials)
    rows = []
    for scheme in schemes:
        tasks = [(sc, scheme, s) for s in seeds]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                res = list(pool.map(_mse_task, tasks))
        else:
            res = [_mse_task(t) for t in tasks]
        acc = {k: [] for k in ("transmit", "receive", "combined")}
        misses = {k: 0 for k in acc}
        for mse in res:
            for k in acc:
                if mse[k] == mse[k]:
                    acc[k].append(mse[k])
                misses[k] += mse["misses"][k]
        rows.append({"scheme": SchemeId(scheme).value,
                     **{k: float(np.mean(v)) if v else float("nan") for k, v in acc.items()},
                     **{f"misses_{k}": misses[k] for k in acc}, "n": len(res)})
    return rows


def _mse_task(args):
    sc, scheme, seed = args
    return harness.run_trial(sc, scheme, seed, patterns=True).angle_mse


def cmd_mse_table(args) -> int:
    sc = _scenario(args)
    rows = mse_table(sc, args.schemes, sc.n_trials, args.threads)
    cols = ["scheme", "transmit", "receive", "combined",
            "misses_transmit", "misses_receive", "misses_combined", "n"]
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        lines = [",".join(cols)]
        for r in rows:
            lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols))
        text = "\n".join(lines) + "\n"
    _write_text(args.out, text)
    return 0


def cmd_trial(args) -> int:
    sc = _scenario(args)
    report = {"seed": args.seed, "schemes": {}}
    for scheme in args.schemes:
        d = design_trial(sc, scheme, args.seed)
        m = score_design(d, sc)
        entry = m.to_json()
        entry["ao_iterations"] = {str(l): s.iterations for l, s in d.solutions.items()}
        report["schemes"][scheme] = entry
        if args.dump:
            out = _out_dir(args)
            d.channels.dump(out / "channels.json")
            for l, tr in d.rcg_traces.items():
                write_trace_csv(tr, out / f"{scheme}_rcg_l{l}.csv")
            for l, sol in d.solutions.items():
                write_ao_trace_csv(sol.trace, out / f"{scheme}_ao_l{l}.csv", sc.T, sol.w.shape[1])
            if scheme == SchemeId.WB_COGNITIVE.value and d.psi_s:
                l = d.psi_s[0]
                P = subcarrier_problem(d.estimates, np.flatnonzero(d.alpha[l]), l, sc)
                W, S = _initial_point(P)
                q3 = build_q3(P, sca_coefficients(P, W, S, _combiners(P, W, S)))
                dump_sdpa(q3.problem, out / f"q3_l{l}.dat-s")
        _maybe_dump_channels(args, d)
    print(json.dumps(report, indent=2))
    return 0


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario file (key = value lines)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a scenario field; repeatable")
    common.add_argument("--trials", type=int, help="number of Monte-Carlo trials")
    common.add_argument("--out", help="output file (sweep, mse-table) or directory")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--profile", choices=("ci", "paper"), default="ci",
                        help="ci: D=1e3, 50 trials; paper: the scenario as given")
    common.add_argument("--threads", type=int, default=1, help="worker processes")
    common.add_argument("--dump-channels", metavar="PATH", help="write the channel set as JSON")
    common.add_argument("--verbose", "-v", action="store_true")

    p = argparse.ArgumentParser(prog="wbcog", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("convergence", parents=[common], help="RCG and AO convergence traces")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_convergence)

    c = sub.add_parser("beampattern", parents=[common], help="beampattern dumps")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--schemes", nargs="+", default=["wb_cognitive", "sens_only"], choices=ALL_SCHEMES)
    c.set_defaults(func=cmd_beampattern)

    c = sub.add_parser("sweep", parents=[common], help="Monte-Carlo sweep over one axis")
    c.add_argument("--axis", required=True, choices=sorted(SWEEP_DEFAULTS))
    c.add_argument("--values", nargs="+", type=float)
    c.add_argument("--schemes", nargs="+", default=ALL_SCHEMES, choices=ALL_SCHEMES)
    c.set_defaults(func=cmd_sweep)

    c = sub.add_parser("mse-table", parents=[common], help="angle-estimation MSE per scheme")
    c.add_argument("--schemes", nargs="+", choices=ALL_SCHEMES,
                   default=["sens_only", "wb_cognitive", "non_cooperative"])
    c.set_defaults(func=cmd_mse_table)

    c = sub.add_parser("trial", parents=[common], help="run and report a single trial")
    c.add_argument("--seed", type=int, required=True)
    c.add_argument("--dump", action="store_true", help="write channels, traces and Q3 to --out")
    c.add_argument("--schemes", nargs="+", default=ALL_SCHEMES, choices=ALL_SCHEMES)
    c.set_defaults(func=cmd_trial)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"wbcog: configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
