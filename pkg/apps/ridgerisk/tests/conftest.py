"""Test fixtures.

The CLI runs in-process through cli.main with real argument parsing, real CSV
files under tmp_path and captured stdout/stderr. Nothing in the solver or the
simulator is stubbed; Monte Carlo tests use small n unless marked slow.
"""

import csv

import pytest
from asymptotics import ProblemSpec
from measures import SpectralMeasure

THIRDS = 1.0 / 3.0


@pytest.fixture
def identity():
    return SpectralMeasure.identity()


@pytest.fixture
def two_atoms():
    """½δ_1 + ½δ_2, the B spectrum of the three-atom examples."""
    return SpectralMeasure.from_atoms([(1.0, 0.5), (2.0, 0.5)])


@pytest.fixture
def three_atoms():
    """⅓δ_1 + ⅓δ_2 + ⅓δ_3."""
    return SpectralMeasure.from_atoms([(1.0, THIRDS), (2.0, THIRDS), (3.0, THIRDS)])


@pytest.fixture
def ar_measure():
    return SpectralMeasure.szego([1.0, 1.0])


@pytest.fixture
def make_spec(identity):
    """Factory for ProblemSpec with identity measures and unit alpha, sigma by default."""

    def _make(gamma=1.0, lam=1.0, alpha=1.0, sigma_eps=1.0, mu_a=None, mu_b=None):
        return ProblemSpec(
            gamma=gamma,
            lam=lam,
            alpha=alpha,
            sigma_eps=sigma_eps,
            mu_a=mu_a if mu_a is not None else identity,
            mu_b=mu_b if mu_b is not None else identity,
        )

    return _make


@pytest.fixture
def run_cli(capsys):
    """Run the CLI in-process; returns (exit code, stdout, stderr)."""
    import cli

    def _run(*argv):
        code = cli.main([str(arg) for arg in argv])
        captured = capsys.readouterr()
        return code, captured.out, captured.err

    return _run


@pytest.fixture
def read_csv():
    def _read(path):
        with open(path, "r", encoding="utf-8", newline="") as f:
            rows = list(csv.reader(f))
        header = rows[0]
        return header, [dict(zip(header, row)) for row in rows[1:]]

    return _read


@pytest.fixture(autouse=True)
def single_worker(monkeypatch):
    monkeypatch.setenv("RIDGERISK_WORKERS", "1")
