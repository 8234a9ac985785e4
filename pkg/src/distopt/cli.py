"""Command line entry point: ``distopt run|tune|diag|gen-data``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .algorithms import TuningError, max_step_theorem4, parse_b_spec, tune_b_prime, tune_b_star
from .bench import ConfigError, ExperimentConfig, build_instance, ordering_report, resolve_step, run_experiment
from .errordyn import diagnostic_report, report_json, small_gain_check
from .netgraph import connected_random_geometric, write_edge_list
from .objectives import generate_logistic_data, write_dataset_csv

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "out", None):
        overrides["out"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        overrides["iters"] = args.iters
    if getattr(args, "graph_file", None):
        overrides["graph_file"] = args.graph_file
    if getattr(args, "data_file", None):
        overrides["data_file"] = args.data_file
    if getattr(args, "theorem4", False):
        overrides["steps"] = ["theorem4"]
    cfg = replace(cfg, **overrides)
    cfg.validate()
    return cfg


def cmd_run(args):
    cfg = _load_config(args)
    if args.print_config:
        sys.stdout.write(cfg.to_toml())
    inst = build_instance(cfg)
    logging.info("graph: n=%d, %d edges, seed %d, sigma=%.4f, lambda_N=%.4f",
                 inst.graph.n, inst.graph.num_edges, inst.graph_seed, inst.weight.sigma, inst.weight.lambda_min)
    table = run_experiment(cfg, inst)
    for cell in table.cells.values():
        s = cell.summary()
        status = "DIVERGED" if cell.diverged else f"terminal {s['terminal_error']:.3e}"
        print(f"{cell.method:>24s}  alpha={cell.alpha:.4g}  1e-4 at {s['iters_to_0.0001']}  {status}")
    print(ordering_report(table).text())
    print(f"results written to {cfg.out}")
    return EXIT_DIVERGED if table.all_diverged else EXIT_OK


def cmd_tune(args):
    mu, lip, sigma = args.mu, args.lip, args.sigma
    b_star = tune_b_star(mu, lip)
    print(f"b*        = {b_star:.10g}")
    if args.lambda_min is not None:
        try:
            print(f"b'        = {tune_b_prime(mu, lip, args.lambda_min):.10g}")
        except TuningError as exc:
            print(f"b'        = {lip:.10g}  (fallback b'=L: {exc})")
    b = b_star if args.b is None else args.b
    alpha_max = max_step_theorem4(mu, lip, sigma, b)
    alpha = 0.99 * alpha_max if args.alpha is None else args.alpha
    gains = small_gain_check(mu, lip, sigma, alpha, b)
    print(f"b         = {b:.10g}")
    print(f"alpha_max = {alpha_max:.10g}")
    print(f"alpha     = {alpha:.10g}")
    print(f"gain product = {gains.product:.10g} ({'< 1' if gains.satisfied else '>= 1'})")
    return EXIT_OK


def cmd_diag(args):
    cfg = _load_config(args)
    inst = build_instance(cfg)
    prob, weight = inst.problem, inst.weight
    spec_text = args.b_spec
    if spec_text is None:
        gen = [m for m in cfg.methods if m.startswith("generalized")]
        spec_text = (gen[0].partition(":")[2] if gen else "") or "bI:auto"
    b_spec = parse_b_spec(spec_text, prob.mu, prob.lip, weight.lambda_min)
    alpha = resolve_step(args.alpha if args.alpha is not None else cfg.steps[0], prob.lip)
    report = diagnostic_report(prob, weight, alpha, b_spec, inst.x_star, iters=args.diag_iters)
    print(report_json(report))
    return EXIT_OK


def cmd_gen_data(args):
    spec, x_true = generate_logistic_data(args.n, args.J, args.d, args.noise_variance, args.seed, reg=args.R)
    write_dataset_csv(spec, args.out)
    print(f"wrote {args.n * args.J} samples to {args.out}; generating vector {np.array2string(x_true, precision=4)}")
    if args.graph_out:
        radius = math.sqrt(math.log(args.n) / args.n) if args.radius is None else args.radius
        g, used = connected_random_geometric(args.n, radius, args.seed)
        write_edge_list(g, args.graph_out)
        print(f"wrote graph with {g.num_edges} edges (seed {used}) to {args.graph_out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="distopt", description="Exact distributed first-order methods.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment sweep")
    p.add_argument("--config", type=Path)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--graph-file")
    p.add_argument("--data-file")
    p.add_argument("--theorem4", action="store_true", help="use 0.99x the provable step-size bound")
    p.add_argument("--print-config", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune", help="print tuned B parameters, step bound and gain product")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--lip", type=float, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--b", type=float)
    p.add_argument("--lambda-min", type=float)
    p.add_argument("--alpha", type=float)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("diag", help="error-dynamics and small-gain JSON report")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int)
    p.add_argument("--b-spec")
    p.add_argument("--alpha", help="step size, number or 1/(cL); defaults to the first configured step")
    p.add_argument("--diag-iters", type=int, default=50)
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("gen-data", help="write a synthetic logistic dataset CSV")
    p.add_argument("--n", type=int, default=30)
    p.add_argument("--J", type=int, default=2)
    p.add_argument("--d", type=int, default=6)
    p.add_argument("--noise-variance", type=float, default=0.4)
    p.add_argument("--R", type=float, default=0.03)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--graph-out")
    p.add_argument("--radius", type=float)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, TuningError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
