"""Command-line front end: ``shuffle-acct <command> [flags]``.

Commands and their CSV columns (JSON output carries the same fields per
record, plus the run configuration):

  shuffle-index   chi_lo, chi_up, ratio, pair_lo, pair_up, tight
                  (prefixed by the mechanism parameters; comma lists in
                  --k/--eps0 or --beta/--scale sweep the grid)
  epsilon-curve   n, eps_closed_form, eps_refined, eps_at_chi_up, eps_at_chi_lo
  accountant      n, eps, eta_main, lower, upper, rel_bandwidth, e_trunc,
                  e_disc, e_alias, grid_size, mean_gap_ok, wall_ms
                  (--oracle appends oracle, oracle_se, contained)
  delta-band      n, eps_used, delta_upper, delta_lower, alpha_over_n,
                  grid_upper, grid_lower, wall_ms

Floats are printed with 17 significant digits. Exit codes: 0 success,
2 validation or numerical failure, 3 infeasible error budget.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import math
import os
import sys
import time
import warnings

import numpy as np

from shuffle_acct.accountant import (
    DEFAULT_GRID_CAP, ErrorBudget, certified_band, divergence_bounds, exact_small_n,
    monte_carlo_divergence, tune_params,
)
from shuffle_acct.asymptotics import (
    AsymptoticParams, delta_band, epsilon_curve_closed_form, epsilon_curve_refined,
)
from shuffle_acct.errors import AccountantError, InfeasibleBudgetError
from shuffle_acct.mechanisms import (
    KRR, Blanket, GenGaussian, Local, mechanism_from_json, mechanism_to_json,
)
from shuffle_acct.shuffle_index import worst_case_indices

EXIT_OK = 0
EXIT_FAILURE = 2
EXIT_INFEASIBLE = 3

DEFAULT_SEED = 20240101


def fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (tuple, list)):
        return ";".join(fmt(x) for x in v)
    return "" if v is None else str(v)


def parse_n_grid(text: str) -> list:
    """``a:b:steps`` -> ``steps`` log-spaced integers from a to b."""
    try:
        a, b, steps = text.split(":")
        a, b, steps = float(a), float(b), int(steps)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"--n-grid expects a:b:steps, got {text!r}") from exc
    if a < 2 or b < a or steps < 1:
        raise argparse.ArgumentTypeError(f"--n-grid needs 2 <= a <= b and steps >= 1, got {text!r}")
    grid = [int(round(v)) for v in np.geomspace(a, b, steps)]
    if any(y <= x for x, y in zip(grid, grid[1:])):
        raise argparse.ArgumentTypeError(f"--n-grid {text!r} does not give strictly increasing integers")
    return grid


def _float_list(text):
    return [float(v) for v in str(text).split(",")]


def _number(text):
    v = float(text)
    return int(v) if v == int(v) and "." not in text else v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mech", choices=["krr", "gen-gaussian"], default="krr")
    common.add_argument("--mech-json", help="mechanism as JSON (overrides --mech and its parameters)")
    common.add_argument("--k", default="3", help="k-RR alphabet size (comma list sweeps)")
    common.add_argument("--eps0", default="2", help="k-RR local epsilon (comma list sweeps)")
    common.add_argument("--beta", default="2", help="generalized Gaussian shape (comma list sweeps)")
    common.add_argument("--scale", default="2.8284271247461903",
                        help="generalized Gaussian scale (comma list sweeps)")
    common.add_argument("--alpha", type=float, default=1.0, help="target delta is alpha/n")
    common.add_argument("--n", type=int, help="number of users")
    common.add_argument("--n-grid", type=parse_n_grid, help="log-spaced sweep a:b:steps")
    common.add_argument("--eps", type=float, help="fixed epsilon (default: refined curve)")
    common.add_argument("--ref", default="blanket", help="blanket or local:X")
    common.add_argument("--pair", help="neighbouring inputs x1,x1'")
    common.add_argument("--eta-main", default="0.1", help="main-term budget (comma list sweeps)")
    common.add_argument("--eta-trunc", type=float, default=0.1)
    common.add_argument("--eta-disc", type=float, default=0.1)
    common.add_argument("--eta-alias", type=float, default=0.1)
    common.add_argument("--grid-cap", type=int, default=DEFAULT_GRID_CAP)
    common.add_argument("--format", choices=["csv", "json"], default="csv")
    common.add_argument("--output", help="output path (default stdout)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="Monte-Carlo seed")
    common.add_argument("--mc-samples", type=int, default=10 ** 7)
    common.add_argument("--threads", type=int,
                        default=int(os.environ.get("SHUFFLE_ACCT_THREADS", "1")))
    common.add_argument("--oracle", action="store_true",
                        help="cross-check with the exact (k-RR, n <= 20) or Monte-Carlo oracle")
    common.add_argument("--no-timing", action="store_true",
                        help="write wall_ms as 0 so that output is byte-stable")

    parser = argparse.ArgumentParser(
        prog="shuffle-acct", description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("shuffle-index", "lower/upper shuffle indices"),
                           ("epsilon-curve", "asymptotic epsilon_n curves"),
                           ("accountant", "certified FFT bounds on the blanket divergence"),
                           ("delta-band", "certified upper and lower delta per n")):
        sub.add_parser(name, parents=[common], help=helptext)
    return parser


def mechanisms_from_args(args) -> list:
    if args.mech_json:
        return [mechanism_from_json(args.mech_json)]
    if args.mech == "krr":
        return [KRR(int(k), e) for k in _float_list(args.k) for e in _float_list(args.eps0)]
    return [GenGaussian(b, s) for b in _float_list(args.beta) for s in _float_list(args.scale)]


def parse_ref(text: str, mech):
    if text == "blanket":
        return Blanket()
    if text.startswith("local:"):
        x = _number(text.split(":", 1)[1])
        return Local(int(x) if isinstance(mech, KRR) else float(x))
    raise AccountantError(f"--ref expects blanket or local:X, got {text!r}")


def parse_pair(text, mech):
    parts = text.split(",")
    if len(parts) != 2:
        raise AccountantError(f"--pair expects x1,x1', got {text!r}")
    conv = int if isinstance(mech, KRR) else float
    return tuple(conv(_number(p)) for p in parts)


def n_values(args) -> list:
    if args.n_grid is not None:
        return args.n_grid
    if args.n is None:
        raise AccountantError("one of --n or --n-grid is required")
    return [args.n]


def _mech_fields(mech) -> dict:
    if isinstance(mech, KRR):
        return {"k": mech.k, "eps0": mech.eps0}
    return {"beta": mech.beta, "scale": mech.scale}


def cmd_shuffle_index(args) -> list:
    rows = []
    for mech in mechanisms_from_args(args):
        idx = worst_case_indices(mech)
        row = _mech_fields(mech)
        row.update(chi_lo=idx.chi_lo, chi_up=idx.chi_up, ratio=idx.ratio,
                   pair_lo=idx.pair_lo, pair_up=idx.pair_up, tight=idx.tight)
        rows.append(row)
    return rows


def cmd_epsilon_curve(args) -> list:
    (mech,) = mechanisms_from_args(args)
    idx = worst_case_indices(mech)
    rows = []
    for n in n_values(args):
        eps_cf = epsilon_curve_closed_form(AsymptoticParams(n, args.alpha, idx.chi_lo))
        eps_ref = epsilon_curve_refined(mech, args.alpha, n)
        low, high = delta_band(mech, args.alpha, n)
        rows.append({"n": n, "eps_closed_form": eps_cf, "eps_refined": eps_ref,
                     "eps_at_chi_up": low, "eps_at_chi_lo": high})
    return rows


def _target(args, mech):
    idx = worst_case_indices(mech)
    ref = parse_ref(args.ref, mech)
    if args.pair:
        pair = parse_pair(args.pair, mech)
    else:
        pair = idx.pair_lo if isinstance(ref, Blanket) else idx.pair_up
    chi = idx.chi_lo if isinstance(ref, Blanket) else idx.chi_up
    return pair, ref, chi


def _oracle(args, mech, pair, ref, eps, n):
    if isinstance(mech, KRR) and n <= 20:
        return exact_small_n(mech, pair[0], pair[1], ref, eps, n), 0.0
    return monte_carlo_divergence(mech, pair[0], pair[1], ref, eps, n,
                                  samples=args.mc_samples, seed=args.seed)


def cmd_accountant(args) -> list:
    (mech,) = mechanisms_from_args(args)
    pair, ref, chi = _target(args, mech)
    etas = _float_list(args.eta_main)
    jobs = [(n, eta) for n in n_values(args) for eta in etas]

    def one(job):
        n, eta = job
        budget = ErrorBudget(eta, args.eta_trunc, args.eta_disc, args.eta_alias)
        t0 = time.perf_counter()
        eps = args.eps if args.eps is not None else epsilon_curve_refined(
            mech, args.alpha, n, pair=pair, ref=ref, chi=chi)
        params = tune_params(mech, pair[0], pair[1], ref, eps, n, budget, args.alpha, chi,
                             grid_cap=args.grid_cap)
        b = divergence_bounds(mech, pair[0], pair[1], ref, eps, n, params)
        wall = 1e3 * (time.perf_counter() - t0)
        row = {"n": n, "eps": eps, "eta_main": eta, "lower": b.lower, "upper": b.upper,
               "rel_bandwidth": (b.upper - b.lower) / b.upper if b.upper > 0 else math.inf,
               "e_trunc": b.e_trunc, "e_disc": b.e_disc, "e_alias": b.e_alias,
               "grid_size": b.grid_size, "mean_gap_ok": b.mean_gap_ok,
               "wall_ms": 0.0 if args.no_timing else wall}
        if args.oracle:
            est, se = _oracle(args, mech, pair, ref, eps, n)
            row.update(oracle=est, oracle_se=se,
                       contained=b.lower - 3 * se <= est <= b.upper + 3 * se)
        return row

    return _parallel_map(one, jobs, args.threads)


def cmd_delta_band(args) -> list:
    (mech,) = mechanisms_from_args(args)
    budget = ErrorBudget(_float_list(args.eta_main)[0], args.eta_trunc, args.eta_disc,
                         args.eta_alias)
    records = certified_band(mech, args.alpha, n_values(args), budget,
                             threads=args.threads, grid_cap=args.grid_cap)
    return [{"n": r.n, "eps_used": r.eps, "delta_upper": r.upper.upper,
             "delta_lower": r.lower.lower, "alpha_over_n": r.alpha_over_n,
             "grid_upper": r.upper.grid_size, "grid_lower": r.lower.grid_size,
             "wall_ms": 0.0 if args.no_timing else r.wall_ms} for r in records]


def _parallel_map(func, items, threads):
    if threads <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))  # map keeps input order


COMMANDS = {
    "shuffle-index": cmd_shuffle_index,
    "epsilon-curve": cmd_epsilon_curve,
    "accountant": cmd_accountant,
    "delta-band": cmd_delta_band,
}


def run_config(args) -> dict:
    mechs = mechanisms_from_args(args)
    return {"command": args.command,
            "mechanisms": [json.loads(mechanism_to_json(m)) for m in mechs],
            "alpha": args.alpha, "n": args.n, "n_grid": args.n_grid, "eps": args.eps,
            "ref": args.ref, "pair": args.pair,
            "budget": {"eta_main": _float_list(args.eta_main), "eta_trunc": args.eta_trunc,
                       "eta_disc": args.eta_disc, "eta_alias": args.eta_alias},
            "format": args.format, "output": args.output, "seed": args.seed,
            "threads": args.threads}


def render(rows: list, fmt_name: str, config: dict) -> str:
    if fmt_name == "json":
        clean = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in r.items()} for r in rows]
        return json.dumps({"config": config, "records": clean}, indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(list(rows[0]))
        for r in rows:
            writer.writerow([fmt(v) for v in r.values()])
    return buf.getvalue()


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            rows = COMMANDS[args.command](args)
        text = render(rows, args.format, run_config(args))
    except InfeasibleBudgetError as exc:
        hint = f"; minimal feasible eta_main is about {exc.minimal_eta:.3g}" \
            if exc.minimal_eta is not None else ""
        print(f"error: {exc}{hint}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (AccountantError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
