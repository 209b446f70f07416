"""
ridgerisk command line
Usage:
  python cli.py solve --gamma 1 --lambda 1
  python cli.py sweep --axis gamma --start 0.05 --stop 4 --steps 80 --lambda 0.03 --output risk.csv
  python cli.py simulate --axis gamma --start 0.5 --stop 2 --steps 4 --n 500 --trials 50 --seed 7
  python cli.py universality --gamma 0.5 --lambda 0.1 --n 1000 --trials 50 --seed 7
  python cli.py optimal-lambda --gamma 2 --alpha 0.7 --sigma 0.2
  python cli.py spectrum --a-model ar:1,1 --n 2000
"""

import argparse
import logging
import sys

import numpy as np
from asymptotics import (
    LAMBDA_FIXED,
    LAMBDA_OPTIMAL,
    LAMBDA_TRACK_GAMMA,
    MIN_LAMBDA,
    ProblemSpec,
    optimal_lambda,
    risk_from_solution,
    solve_kappa,
    theory_curve,
)
from config import COMMAND_CONFIGS, DEFAULT_REFERENCE_N, RAW_SPECTRUM_HEADER, load_config_file
from csv_output import open_rows
from errors import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, InvalidParameter, RidgeRiskError
from measures import empirical_measure, parse_measure
from simulator import (
    GAUSSIAN,
    BatchParams,
    CovariateModel,
    MatrixKind,
    empirical_spectrum,
    iter_batch,
    limiting_measure,
    parse_model,
    parse_z_dist,
    universality_compare,
)
from utils import GRID_SPACINGS, format_float, make_grid, parse_number

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
SPECTRUM_Z_GRID = np.logspace(-2, 2, 50)
GAP_TOLERANCE_SE = 3.0


class CliParser(argparse.ArgumentParser):
    """Parser whose usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def number(text):
    try:
        return parse_number(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def common_options():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="flat key=value file of defaults; explicit flags win")
    parent.add_argument("--output", help="CSV file to write (default: stdout)")
    parent.add_argument("--quiet", action="store_true", help="only log warnings and errors")
    return parent


def problem_options():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--gamma", type=number, help="aspect ratio d/n")
    parent.add_argument("--lambda", dest="lam", help="ridge penalty, or track-gamma, or optimal")
    parent.add_argument("--alpha", type=number, default=1.0, help="signal strength")
    parent.add_argument("--sigma", type=number, default=1.0, help="noise standard deviation")
    return parent


def measure_options():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--mu-a", help="spectral measure of A^T A (identity, atoms:..., szego:..., file:...)")
    parent.add_argument("--mu-b", help="spectral measure of B^T B")
    parent.add_argument("--reference-n", type=int, default=DEFAULT_REFERENCE_N, help="size for redundancy spectra")
    return parent


def model_options():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--a-model", default="identity", help="identity, ar:w0,w1,..., redundancy:omega, diag:v1,...")
    parent.add_argument("--b-model", default="identity", help="identity or diag:v1,...")
    parent.add_argument("--z-dist", default=GAUSSIAN, help="gaussian, rademacher or uniform")
    parent.add_argument("--n", type=int, default=500, help="sample size")
    parent.add_argument("--trials", type=int, default=50, help="trials per grid point")
    parent.add_argument("--seed", type=int, help="base seed (required)")
    return parent


def range_options():
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--axis", choices=["gamma", "lambda", "omega"], default="gamma")
    parent.add_argument("--start", type=number, required=False)
    parent.add_argument("--stop", type=number, required=False)
    parent.add_argument("--steps", type=int, default=20)
    parent.add_argument("--spacing", choices=GRID_SPACINGS, default="linear")
    return parent


def build_parser():
    parser = CliParser(prog="ridgerisk", description="Ridge regression risk with dependent covariates X = AZB")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    subparsers.required = True
    parser.commands = {}

    common = common_options()
    groups = {
        "solve": [common, problem_options(), measure_options(), model_options()],
        "sweep": [common, problem_options(), measure_options(), model_options(), range_options()],
        "simulate": [common, problem_options(), model_options(), range_options()],
        "universality": [common, problem_options(), model_options()],
        "optimal-lambda": [common, problem_options()],
        "spectrum": [common, model_options()],
    }
    for command, parents in groups.items():
        sub = subparsers.add_parser(command, parents=parents, help=COMMAND_CONFIGS[command]["help"])
        if command == "spectrum":
            sub.add_argument("--raw", action="store_true", help="print eigenvalues instead of Stieltjes samples")
            sub.add_argument(
                "--matrix", choices=("a", "b"), default="a", help="spectrum of A^T A (--a-model) or B^T B (--b-model)"
            )
        parser.commands[command] = sub
    return parser


def apply_config_file(parser, argv):
    """Re-parse with --config values installed as the subcommand's defaults."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    subparser = parser.commands[args.command]
    known = {action.dest for action in subparser._actions if action.dest != "help"}
    subparser.set_defaults(**load_config_file(args.config, known - {"config"}))
    return parser.parse_args(argv)


def lambda_mode(args):
    """(lambda value or None, lambda mode) from the --lambda flag."""
    if args.lam is None:
        return None, LAMBDA_FIXED
    text = args.lam.strip().lower()
    if text in (LAMBDA_TRACK_GAMMA, LAMBDA_OPTIMAL):
        return None, text
    try:
        return parse_number(text), LAMBDA_FIXED
    except ValueError:
        raise InvalidParameter(f"lambda must be a number, {LAMBDA_TRACK_GAMMA} or {LAMBDA_OPTIMAL}", value=args.lam)


def require(args, *names):
    for name in names:
        if getattr(args, name, None) is None:
            flag = "--lambda" if name == "lam" else "--" + name.replace("_", "-")
            raise InvalidParameter(f"{flag} is required for {args.command}", parameter=name)


def measures_from(args):
    """μ_A and μ_B from --mu-a/--mu-b, falling back to the limits of --a-model/--b-model."""
    mu_a = parse_measure(args.mu_a) if args.mu_a else limiting_measure(parse_model(args.a_model), args.reference_n)
    mu_b = parse_measure(args.mu_b) if args.mu_b else limiting_measure(parse_model(args.b_model), args.reference_n)
    return mu_a, mu_b


def model_from(args):
    return CovariateModel(parse_model(args.a_model), parse_model(args.b_model), parse_z_dist(args.z_dist))


def grid_from(args):
    require(args, "start", "stop")
    try:
        return make_grid(args.start, args.stop, args.steps, args.spacing)
    except ValueError as e:
        raise InvalidParameter(str(e), start=args.start, stop=args.stop, steps=args.steps)


def cmd_solve(args):
    require(args, "gamma", "lam")
    lam, mode = lambda_mode(args)
    if mode == LAMBDA_TRACK_GAMMA:
        lam = args.gamma
    elif mode == LAMBDA_OPTIMAL:
        lam = max(optimal_lambda(args.gamma, args.alpha, args.sigma), MIN_LAMBDA)
    mu_a, mu_b = measures_from(args)

    spec = ProblemSpec(gamma=args.gamma, lam=lam, alpha=args.alpha, sigma_eps=args.sigma, mu_a=mu_a, mu_b=mu_b)
    solution = solve_kappa(spec)
    breakdown = risk_from_solution(spec, solution)

    record = {
        "kappa": solution.kappa,
        "m_bar": solution.m_bar,
        "dm_dlambda": solution.dm_dlambda,
        "bias": breakdown.bias,
        "variance": breakdown.variance,
        "risk": breakdown.risk,
        "residual": solution.residual,
    }
    if args.output:
        with open_rows(args.output, COMMAND_CONFIGS["solve"]["header"]) as rows:
            rows.write(list(spec.to_dict().values()) + list(record.values()))
    else:
        for key, value in record.items():
            print(f"{key}={format_float(value)}")
    return EXIT_OK


def cmd_sweep(args):
    grid = grid_from(args)
    lam, mode = lambda_mode(args)
    if args.axis == "lambda":
        lam = 1.0
    elif lam is None and mode == LAMBDA_FIXED:
        require(args, "lam")

    gamma = args.gamma if args.gamma is not None else (1.0 if args.axis == "gamma" else None)
    if gamma is None:
        require(args, "gamma")

    measure_for_omega = None
    if args.axis == "omega":
        reference_n = args.reference_n

        def measure_for_omega(omega):
            return limiting_measure(MatrixKind.redundancy(omega), reference_n)

        args.mu_a = args.mu_a or "identity"
    mu_a, mu_b = measures_from(args)

    base = ProblemSpec(
        gamma=gamma, lam=lam if lam is not None else 1.0, alpha=args.alpha, sigma_eps=args.sigma, mu_a=mu_a, mu_b=mu_b
    )
    curve = theory_curve(base, args.axis, grid, mode, measure_for_omega)

    failures = 0
    with open_rows(args.output, COMMAND_CONFIGS["sweep"]["header"]) as rows:
        for point in curve:
            if not point.ok:
                failures += 1
                rows.write_missing(point.axis, point.value)
                continue
            sol, br = point.solution, point.breakdown
            rows.write([point.axis, point.value, sol.kappa, sol.m_bar, sol.dm_dlambda, br.bias, br.variance, br.risk])

    if failures:
        logger.error("%d of %d grid points failed", failures, len(curve))
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_simulate(args):
    grid = grid_from(args)
    lam, mode = lambda_mode(args)
    if args.axis != "lambda" and lam is None and mode == LAMBDA_FIXED:
        require(args, "lam")
    if args.axis != "gamma":
        require(args, "gamma")

    params = BatchParams(
        gamma=args.gamma if args.gamma is not None else float(grid[0]),
        lam=lam if lam is not None else float(grid[0]),
        alpha=args.alpha,
        sigma_eps=args.sigma,
        lambda_mode=mode,
    )
    model = model_from(args)

    with open_rows(args.output, COMMAND_CONFIGS["simulate"]["header"]) as rows:
        for point in iter_batch(model, args.n, args.axis, grid, args.trials, args.seed, params):
            rows.write(
                [
                    point.axis,
                    point.value,
                    point.risk.mean,
                    point.risk.se,
                    point.bias.mean,
                    point.bias.se,
                    point.variance.mean,
                    point.variance.se,
                    point.m.mean,
                    point.m.se,
                    point.trials,
                    point.n,
                ]
            )
    return EXIT_OK


def cmd_universality(args):
    require(args, "gamma", "lam")
    lam, mode = lambda_mode(args)
    if mode == LAMBDA_TRACK_GAMMA:
        lam = args.gamma
    elif mode == LAMBDA_OPTIMAL:
        lam = max(optimal_lambda(args.gamma, args.alpha, args.sigma), MIN_LAMBDA)

    report = universality_compare(
        model_from(args), args.n, args.gamma, lam, args.trials, args.seed, args.alpha, args.sigma
    )
    with open_rows(args.output, COMMAND_CONFIGS["universality"]["header"]) as rows:
        for row in report:
            rows.write([row.dist, row.risk.mean, row.risk.se, row.gap, row.gap_se])

    for row in report:
        within = abs(row.gap) <= GAP_TOLERANCE_SE * row.gap_se
        logger.info("%s vs gaussian: gap %s, within %g se: %s", row.dist, row.gap, GAP_TOLERANCE_SE, within)
    return EXIT_OK


def cmd_optimal_lambda(args):
    require(args, "gamma")
    print(format_float(optimal_lambda(args.gamma, args.alpha, args.sigma)))
    return EXIT_OK


def cmd_spectrum(args):
    kind = parse_model(args.b_model if args.matrix == "b" else args.a_model)
    eigenvalues = empirical_spectrum(kind, args.n, matrix=args.matrix)

    if args.raw:
        with open_rows(args.output, RAW_SPECTRUM_HEADER) as rows:
            for value in eigenvalues:
                rows.write([float(value)])
        return EXIT_OK

    empirical = empirical_measure(eigenvalues)
    limit = limiting_measure(kind, reference_n=None)
    with open_rows(args.output, COMMAND_CONFIGS["spectrum"]["header"]) as rows:
        for z in SPECTRUM_Z_GRID:
            rows.write([float(z), float(empirical.transform(z)), float(limit.transform(z))])
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = apply_config_file(parser, argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    except RidgeRiskError as e:
        print(f"error: {e.description}", file=sys.stderr)
        return e.exit_code

    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format=LOG_FORMAT,
        stream=sys.stderr,
    )

    config = COMMAND_CONFIGS[args.command]
    handler = getattr(sys.modules[__name__], config["handler"])
    try:
        if config["needs_seed"] and args.seed is None:
            raise InvalidParameter(f"--seed is required for {args.command}")
        return handler(args)
    except RidgeRiskError as e:
        logger.error("%s failed: %s", args.command, e.error)
        print(f"error: {e.description}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
