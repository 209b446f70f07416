"""
Runtime configuration for the ridgerisk CLI
Command registry, worker count and key=value config files
"""

import logging
import os

from dotenv import dotenv_values, load_dotenv
from errors import ConfigError

load_dotenv()

logger = logging.getLogger(__name__)

WORKERS_ENV = "RIDGERISK_WORKERS"
MAX_WORKERS = 64

DEFAULT_QUADRATURE_POINTS = 4096
DEFAULT_REFERENCE_N = 2000
SOLVER_MAX_ITERATIONS = 200
SOLVER_MAX_EXPANSIONS = 60

SWEEP_HEADER = ["axis", "value", "kappa", "m_bar", "dm_dlambda", "bias", "variance", "risk"]
SIMULATE_HEADER = [
    "axis",
    "value",
    "mean_risk",
    "se_risk",
    "mean_bias",
    "se_bias",
    "mean_variance",
    "se_variance",
    "mean_m",
    "se_m",
    "trials",
    "n",
]
UNIVERSALITY_HEADER = ["dist", "mean_risk", "se_risk", "gap_vs_gaussian", "gap_se"]
SOLVE_HEADER = [
    "gamma",
    "lambda",
    "alpha",
    "sigma",
    "mu_a",
    "mu_b",
    "kappa",
    "m_bar",
    "dm_dlambda",
    "bias",
    "variance",
    "risk",
    "residual",
]
SPECTRUM_HEADER = ["z", "m_empirical", "m_szego"]
RAW_SPECTRUM_HEADER = ["eigenvalue"]


COMMAND_CONFIGS = {
    "solve": {
        "handler": "cmd_solve",
        "needs_seed": False,
        "header": SOLVE_HEADER,
        "help": "solve the fixed point and print kappa, m_bar, bias, variance and risk",
    },
    "sweep": {
        "handler": "cmd_sweep",
        "needs_seed": False,
        "header": SWEEP_HEADER,
        "help": "asymptotic risk over a gamma, lambda or omega grid",
    },
    "simulate": {
        "handler": "cmd_simulate",
        "needs_seed": True,
        "header": SIMULATE_HEADER,
        "help": "Monte Carlo risk over a gamma, lambda or omega grid",
    },
    "universality": {
        "handler": "cmd_universality",
        "needs_seed": True,
        "header": UNIVERSALITY_HEADER,
        "help": "compare Gaussian, Rademacher and uniform entries with common random numbers",
    },
    "optimal-lambda": {
        "handler": "cmd_optimal_lambda",
        "needs_seed": False,
        "header": None,
        "help": "print the optimal ridge penalty sigma^2 gamma / alpha^2",
    },
    "spectrum": {
        "handler": "cmd_spectrum",
        "needs_seed": False,
        "header": SPECTRUM_HEADER,
        "help": "eigenvalues of A^T A or B^T B, or empirical vs limiting Stieltjes transform",
    },
}

# Config-file keys that do not match an argparse destination after the usual
# dash-to-underscore rewrite.
KEY_ALIASES = {
    "lambda": "lam",
    "sigma_eps": "sigma",
    "base_seed": "seed",
    "output_path": "output",
}


def worker_count():
    """Worker threads for Monte Carlo batches, read from RIDGERISK_WORKERS.

    Anything unparsable falls back to one worker, which is always correct; the
    count only changes wall time, never the output bytes.
    """
    raw = os.getenv(WORKERS_ENV, "1")
    try:
        workers = int(raw)
    except (TypeError, ValueError):
        logger.warning("Ignoring %s=%r, using 1 worker", WORKERS_ENV, raw)
        workers = 1
    return max(1, min(workers, MAX_WORKERS))


def normalize_key(key):
    key = key.strip().lstrip("-").replace("-", "_").lower()
    return KEY_ALIASES.get(key, key)


def load_config_file(path, known_keys):
    """Read a flat key=value file into argparse defaults.

    Args:
        path: file to read
        known_keys: argparse destinations the active subcommand accepts

    Returns:
        dict of destination -> raw string value
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}", path=path)

    values = dotenv_values(path)
    defaults = {}
    for key, value in values.items():
        dest = normalize_key(key)
        if dest not in known_keys:
            raise ConfigError(f"unknown config key: {key}", path=path, key=key)
        if value is None:
            raise ConfigError(f"config key {key} has no value", path=path, key=key)
        defaults[dest] = value

    logger.info("Loaded %d settings from %s", len(defaults), path)
    return defaults
