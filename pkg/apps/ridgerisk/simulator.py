"""
Finite-size Monte Carlo for ridge regression with dependent covariates X = AZB.

Each trial draws Z, β⋆ and ε from independent streams keyed by (trial seed, tag), so a
trial is a pure function of its seed and the β⋆/ε draws do not depend on the entry law
of Z. Batches reduce trials in index order, which keeps the output independent of the
worker count.
"""

import dataclasses
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from asymptotics import LAMBDA_FIXED, LAMBDA_MODES, LAMBDA_OPTIMAL, LAMBDA_TRACK_GAMMA, MIN_LAMBDA, optimal_lambda
from config import DEFAULT_REFERENCE_N, worker_count
from errors import InvalidCoefficients, InvalidParameter, RidgeRiskError, SolveFailure
from measures import SpectralMeasure, empirical_measure
from scipy import linalg
from utils import parse_number, parse_number_list

logger = logging.getLogger(__name__)

IDENTITY = "identity"
TOEPLITZ_AR = "ar"
REDUNDANCY = "redundancy"
EXPLICIT_DIAGONAL = "diag"
MATRIX_KINDS = (IDENTITY, TOEPLITZ_AR, REDUNDANCY, EXPLICIT_DIAGONAL)
B_KINDS = (IDENTITY, EXPLICIT_DIAGONAL)

GAUSSIAN = "gaussian"
RADEMACHER = "rademacher"
UNIFORM = "uniform"
Z_DISTS = (GAUSSIAN, RADEMACHER, UNIFORM)

STREAM_Z = 0
STREAM_BETA = 1
STREAM_NOISE = 2

SOLVE_AUTO = "auto"
SOLVE_PRIMAL = "primal"
SOLVE_DUAL = "dual"
SHIFT_GUARD = 1e-10
MIN_UNIVERSALITY_TRIALS = 10


@dataclass(frozen=True)
class MatrixKind:
    """A builder for A (n×n) or B (d×d): identity, ar, redundancy or diag."""

    name: str
    coeffs: Tuple[float, ...] = ()
    omega: Optional[float] = None

    def __post_init__(self):
        if self.name not in MATRIX_KINDS:
            raise InvalidParameter(f"unknown matrix model: {self.name}", model=self.name)
        coeffs = np.asarray(self.coeffs, dtype=float)
        if self.name == TOEPLITZ_AR:
            if coeffs.size == 0 or not np.all(np.isfinite(coeffs)) or not np.any(coeffs != 0):
                raise InvalidCoefficients("ar model needs finite coefficients, not all zero", coeffs=list(self.coeffs))
        elif self.name == EXPLICIT_DIAGONAL:
            if coeffs.size == 0 or not np.all(np.isfinite(coeffs)) or np.any(coeffs < 0):
                raise InvalidCoefficients("diag values must be finite and nonnegative", values=list(self.coeffs))
        elif self.name == REDUNDANCY:
            if self.omega is None or not (0.0 <= self.omega <= 1.0):
                raise InvalidCoefficients("redundancy omega must lie in [0, 1]", omega=self.omega)

    @classmethod
    def identity(cls):
        return cls(IDENTITY)

    @classmethod
    def toeplitz_ar(cls, coeffs: Sequence[float]):
        return cls(TOEPLITZ_AR, coeffs=tuple(float(c) for c in coeffs))

    @classmethod
    def redundancy(cls, omega: float):
        return cls(REDUNDANCY, omega=float(omega))

    @classmethod
    def explicit_diagonal(cls, values: Sequence[float]):
        return cls(EXPLICIT_DIAGONAL, coeffs=tuple(float(v) for v in values))

    def to_spec(self) -> str:
        if self.name == IDENTITY:
            return IDENTITY
        if self.name == REDUNDANCY:
            return f"{REDUNDANCY}:{self.omega!r}"
        return f"{self.name}:" + ",".join(repr(c) for c in self.coeffs)


@dataclass(frozen=True)
class CovariateModel:
    a_kind: MatrixKind
    b_kind: MatrixKind
    z_dist: str = GAUSSIAN

    def __post_init__(self):
        if self.b_kind.name not in B_KINDS:
            raise InvalidParameter(f"b model must be one of {', '.join(B_KINDS)}", model=self.b_kind.name)
        if self.z_dist not in Z_DISTS:
            raise InvalidParameter(f"z distribution must be one of {', '.join(Z_DISTS)}", z_dist=self.z_dist)

    def with_z(self, z_dist: str) -> "CovariateModel":
        return dataclasses.replace(self, z_dist=z_dist)

    def with_omega(self, omega: float) -> "CovariateModel":
        if self.a_kind.name != REDUNDANCY:
            raise InvalidParameter("an omega sweep needs the redundancy model for A", model=self.a_kind.name)
        return dataclasses.replace(self, a_kind=MatrixKind.redundancy(omega))

    def to_dict(self):
        return {"a_model": self.a_kind.to_spec(), "b_model": self.b_kind.to_spec(), "z_dist": self.z_dist}


@dataclass(frozen=True)
class TrialResult:
    empirical_risk: float
    empirical_bias: float
    empirical_variance: float
    empirical_m: float
    cross_term: float
    seed: int
    n: int
    d: int

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float

    @classmethod
    def from_samples(cls, values: Sequence[float]):
        samples = np.asarray(values, dtype=float)
        if samples.size < 2:
            return cls(float(samples.mean()), 0.0)
        return cls(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size)))


@dataclass(frozen=True)
class BatchParams:
    """Fixed parameters of a batch; the swept one is overridden per grid point."""

    gamma: float
    lam: float
    alpha: float
    sigma_eps: float
    lambda_mode: str = LAMBDA_FIXED

    def resolve(self, axis: str, value: float) -> Tuple[float, float]:
        """(gamma, lambda) at one grid value."""
        gamma = value if axis == "gamma" else self.gamma
        lam = value if axis == "lambda" else self.lam
        if self.lambda_mode == LAMBDA_TRACK_GAMMA:
            lam = gamma
        elif self.lambda_mode == LAMBDA_OPTIMAL:
            lam = max(optimal_lambda(gamma, self.alpha, self.sigma_eps), MIN_LAMBDA)
        return gamma, lam


@dataclass(frozen=True)
class BatchPoint:
    axis: str
    value: float
    grid_index: int
    n: int
    d: int
    lam: float
    trials: int
    risk: Estimate
    bias: Estimate
    variance: Estimate
    m: Estimate
    se_unavailable: bool
    results: Tuple[TrialResult, ...] = dataclasses.field(default=(), repr=False)


@dataclass(frozen=True)
class UniversalityRow:
    dist: str
    risk: Estimate
    gap: float
    gap_se: float
    pooled_se: float


def parse_model(spec: str) -> MatrixKind:
    """
    Parse a matrix model spec.

    Grammar:
        identity
        ar:w0,w1,...,wq      lower-triangular Toeplitz band, w_k on the k-th subdiagonal
        redundancy:omega     pairwise redundancy, omega in [0, 1]
        diag:v1,v2,...       diagonal of the Gram matrix in contiguous equal blocks
    """
    if spec is None or not spec.strip():
        raise InvalidParameter("empty model spec")
    head, _, body = spec.strip().partition(":")
    head = head.lower()
    try:
        if head == IDENTITY and not body:
            return MatrixKind.identity()
        if head == TOEPLITZ_AR:
            return MatrixKind.toeplitz_ar(parse_number_list(body))
        if head == REDUNDANCY:
            return MatrixKind.redundancy(parse_number(body))
        if head == EXPLICIT_DIAGONAL:
            return MatrixKind.explicit_diagonal(parse_number_list(body))
    except ValueError as e:
        raise InvalidCoefficients(f"bad model spec {spec!r}: {e}", spec=spec)
    raise InvalidParameter(f"unknown model spec: {spec!r}", spec=spec)


def parse_z_dist(text: str) -> str:
    dist = (text or "").strip().lower()
    if dist not in Z_DISTS:
        raise InvalidParameter(f"z distribution must be one of {', '.join(Z_DISTS)}", z_dist=text)
    return dist


def _block_values(values: Sequence[float], size: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    blocks = (np.arange(size) * values.size) // size
    return values[blocks]


def _operator(kind: MatrixKind, size: int) -> sp.csr_matrix:
    if kind.name == IDENTITY:
        return sp.identity(size, format="csr")
    if kind.name == EXPLICIT_DIAGONAL:
        return sp.diags(np.sqrt(_block_values(kind.coeffs, size)), format="csr")
    if kind.name == TOEPLITZ_AR:
        taps = [(k, c) for k, c in enumerate(kind.coeffs) if k < size]
        bands = [np.full(size - k, c) for k, c in taps]
        return sp.diags(bands, [-k for k, _ in taps], shape=(size, size), format="csr")

    # Redundancy: 0-indexed odd rows mix in the previous coordinate; an odd final row stays e_n.
    rows = np.arange(size)
    paired = rows % 2 == 1
    diagonal = np.where(paired, kind.omega, 1.0)
    below = np.where(paired[1:], 1.0 - kind.omega, 0.0)
    return sp.diags([diagonal, below], [0, -1], shape=(size, size), format="csr")


def build_a(kind: MatrixKind, n: int) -> np.ndarray:
    """Dense n×n matrix for a model of A."""
    if n < 1:
        raise InvalidParameter("n must be at least 1", n=n)
    return _operator(kind, n).toarray()


def build_b(kind: MatrixKind, d: int) -> np.ndarray:
    if kind.name not in B_KINDS:
        raise InvalidParameter(f"b model must be one of {', '.join(B_KINDS)}", model=kind.name)
    if d < 1:
        raise InvalidParameter("d must be at least 1", d=d)
    return _operator(kind, d).toarray()


def derive_seed(base_seed: int, grid_index: int, trial_index: int) -> int:
    """Trial seed as a pure function of (base seed, grid index, trial index)."""
    if base_seed < 0:
        raise InvalidParameter("seed must be a nonnegative integer", seed=base_seed)
    sequence = np.random.SeedSequence(base_seed, spawn_key=(grid_index, trial_index))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _stream(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(tag,)))


def draw_z(rng: np.random.Generator, z_dist: str, n: int, d: int) -> np.ndarray:
    """Z with i.i.d. mean-0, variance-1 entries."""
    if z_dist == GAUSSIAN:
        return rng.standard_normal((n, d))
    if z_dist == RADEMACHER:
        return 2.0 * rng.integers(0, 2, size=(n, d)) - 1.0
    if z_dist == UNIFORM:
        bound = math.sqrt(3.0)
        return rng.uniform(-bound, bound, size=(n, d))
    raise InvalidParameter(f"z distribution must be one of {', '.join(Z_DISTS)}", z_dist=z_dist)


def _cholesky(gram: np.ndarray, shift: float):
    """cho_factor of gram + shift·I, retried once with a slightly larger shift."""
    for attempt, extra in enumerate((0.0, SHIFT_GUARD)):
        system = gram.copy()
        system[np.diag_indices_from(system)] += shift + extra
        try:
            return linalg.cho_factor(system, lower=True, check_finite=False)
        except linalg.LinAlgError:
            logger.debug("Cholesky failed on attempt %d with shift %g", attempt + 1, shift + extra)
    raise SolveFailure("ridge system is not positive definite", shift=shift)


def _pick_method(method: str, n: int, d: int) -> str:
    if method == SOLVE_AUTO:
        return SOLVE_PRIMAL if d <= n else SOLVE_DUAL
    if method not in (SOLVE_PRIMAL, SOLVE_DUAL):
        raise InvalidParameter(f"unknown solve method: {method}", method=method)
    return method


def ridge_fit(x: np.ndarray, y: np.ndarray, lam: float, method: str = SOLVE_AUTO) -> np.ndarray:
    """β̂ = (XᵀX + λnI)⁻¹Xᵀy, through the d×d system or the n×n dual."""
    n, d = x.shape
    shift = lam * n
    if _pick_method(method, n, d) == SOLVE_PRIMAL:
        return linalg.cho_solve(_cholesky(x.T @ x, shift), x.T @ y, check_finite=False)
    return x.T @ linalg.cho_solve(_cholesky(x @ x.T, shift), y, check_finite=False)


def _error_parts(x: np.ndarray, beta: np.ndarray, noise: np.ndarray, lam: float, method: str):
    """β̂ - β⋆ split into its signal part -λn M⁻¹β⋆ and its noise part M⁻¹Xᵀε, M = XᵀX + λnI."""
    n, d = x.shape
    shift = lam * n
    if _pick_method(method, n, d) == SOLVE_PRIMAL:
        factor = _cholesky(x.T @ x, shift)
        signal = -shift * linalg.cho_solve(factor, beta, check_finite=False)
        noisy = linalg.cho_solve(factor, x.T @ noise, check_finite=False)
    else:
        factor = _cholesky(x @ x.T, shift)
        signal = -(beta - x.T @ linalg.cho_solve(factor, x @ beta, check_finite=False))
        noisy = x.T @ linalg.cho_solve(factor, noise, check_finite=False)
    return signal, noisy


def resolvent_trace(eigenvalues: Sequence[float], d: int, lambdas) -> np.ndarray:
    """
    (1/d) tr((XᵀX/n + λI)⁻¹) for each λ from the nonzero-side spectrum.

    Args:
        eigenvalues: eigenvalues of XᵀX/n or XXᵀ/n (the smaller Gram matrix)
        d: number of columns of X; missing eigenvalues are zeros
        lambdas: one or more positive penalties

    Returns:
        numpy array shaped like lambdas
    """
    s = np.clip(np.asarray(eigenvalues, dtype=float), 0.0, None)
    lam = np.asarray(lambdas, dtype=float)
    zeros = d - s.size
    if zeros < 0:
        raise InvalidParameter("more eigenvalues than columns", eigenvalues=int(s.size), d=d)
    totals = (1.0 / (lam[..., None] + s)).sum(axis=-1) + zeros / lam
    return totals / d


def sample_trial(
    model: CovariateModel,
    n: int,
    d: int,
    lam: float,
    alpha: float,
    sigma_eps: float,
    seed: int,
    method: str = SOLVE_AUTO,
) -> TrialResult:
    """One draw of (Z, β⋆, ε), the ridge fit and its risk decomposition."""
    if n < 2 or d < 2:
        raise InvalidParameter("n and d must be at least 2", n=n, d=d)
    if not (math.isfinite(lam) and lam > 0):
        raise InvalidParameter("lambda must be positive", value=lam)

    z = draw_z(_stream(seed, STREAM_Z), model.z_dist, n, d)
    beta = _stream(seed, STREAM_BETA).standard_normal(d) * (alpha / math.sqrt(d))
    noise = _stream(seed, STREAM_NOISE).standard_normal(n) * sigma_eps

    b_scale = np.sqrt(_block_values(model.b_kind.coeffs, d)) if model.b_kind.name == EXPLICIT_DIAGONAL else None
    x = _operator(model.a_kind, n) @ z
    if b_scale is not None:
        x = x * b_scale

    signal, noisy = _error_parts(x, beta, noise, lam, method)
    error = signal + noisy

    gram = x.T @ x if d <= n else x @ x.T
    try:
        eigenvalues = linalg.eigvalsh(gram / n, check_finite=False)
    except linalg.LinAlgError as e:
        raise SolveFailure(f"eigensolve failed: {e}", n=n, d=d)

    return TrialResult(
        empirical_risk=float(error @ error),
        empirical_bias=float(signal @ signal),
        empirical_variance=float(noisy @ noisy),
        empirical_m=float(resolvent_trace(eigenvalues, d, lam)),
        cross_term=float(2.0 * signal @ noisy),
        seed=seed,
        n=n,
        d=d,
    )


def _run_trial(task):
    model, n, d, lam, alpha, sigma_eps, seed, grid_index, trial_index = task
    try:
        return sample_trial(model, n, d, lam, alpha, sigma_eps, seed)
    except RidgeRiskError as e:
        raise e.tag(grid_index=grid_index, trial_index=trial_index)
    except (linalg.LinAlgError, ValueError) as e:
        raise SolveFailure(str(e), grid_index=grid_index, trial_index=trial_index)


def iter_batch(
    model: CovariateModel,
    n: int,
    axis: str,
    grid: Sequence[float],
    trials: int,
    base_seed: int,
    params: BatchParams,
    workers: Optional[int] = None,
) -> Iterator[BatchPoint]:
    """
    Run `trials` trials at every grid point, yielding aggregated points in grid order.

    Args:
        model: covariate model; for axis "omega" its A model must be redundancy
        n: sample size; d = round(γn) per point
        axis: "gamma", "lambda" or "omega"
        grid: axis values
        trials: trials per grid point
        base_seed: seed every trial seed derives from
        params: fixed parameters and the lambda mode
        workers: thread count, RIDGERISK_WORKERS when None
    """
    if trials < 1:
        raise InvalidParameter("trials must be at least 1", trials=trials)
    if axis not in ("gamma", "lambda", "omega"):
        raise InvalidParameter(f"unknown sweep axis: {axis}", axis=axis)
    if params.lambda_mode not in LAMBDA_MODES:
        raise InvalidParameter(f"lambda mode must be one of {', '.join(LAMBDA_MODES)}", mode=params.lambda_mode)
    if axis == "lambda" and params.lambda_mode != LAMBDA_FIXED:
        raise InvalidParameter("a lambda sweep cannot also derive lambda from gamma", mode=params.lambda_mode)
    if trials == 1:
        logger.warning("Only one trial per point: standard errors are reported as 0")

    workers = workers or worker_count()
    logger.info("Monte Carlo batch: %d points x %d trials, n=%d, %d workers", len(grid), trials, n, workers)

    with ThreadPoolExecutor(max_workers=workers) as executor:
        for grid_index, value in enumerate(grid):
            value = float(value)
            point_model = model.with_omega(value) if axis == "omega" else model
            try:
                gamma, lam = params.resolve(axis, value)
            except RidgeRiskError as e:
                raise e.tag(grid_index=grid_index)
            d = int(round(gamma * n))
            seeds = [derive_seed(base_seed, grid_index, t) for t in range(trials)]
            tasks = [
                (point_model, n, d, lam, params.alpha, params.sigma_eps, seed, grid_index, t)
                for t, seed in enumerate(seeds)
            ]
            results = tuple(executor.map(_run_trial, tasks))
            yield BatchPoint(
                axis=axis,
                value=value,
                grid_index=grid_index,
                n=n,
                d=d,
                lam=lam,
                trials=trials,
                risk=Estimate.from_samples([r.empirical_risk for r in results]),
                bias=Estimate.from_samples([r.empirical_bias for r in results]),
                variance=Estimate.from_samples([r.empirical_variance for r in results]),
                m=Estimate.from_samples([r.empirical_m for r in results]),
                se_unavailable=trials == 1,
                results=results,
            )

    logger.info("Monte Carlo batch finished")


def run_batch(model, n, axis, grid, trials, base_seed, params, workers=None) -> List[BatchPoint]:
    return list(iter_batch(model, n, axis, grid, trials, base_seed, params, workers))


def universality_compare(
    model: CovariateModel,
    n: int,
    gamma: float,
    lam: float,
    trials: int,
    base_seed: int,
    alpha: float,
    sigma_eps: float,
    workers: Optional[int] = None,
) -> List[UniversalityRow]:
    """
    Risk under Gaussian, Rademacher and uniform Z with shared trial seeds.

    The gap of each law is the mean per-trial risk difference against the Gaussian arm
    and gap_se the standard error of those paired differences.
    """
    if trials < MIN_UNIVERSALITY_TRIALS:
        raise InvalidParameter(f"universality needs at least {MIN_UNIVERSALITY_TRIALS} trials", trials=trials)

    params = BatchParams(gamma=gamma, lam=lam, alpha=alpha, sigma_eps=sigma_eps)
    arms = {}
    for dist in Z_DISTS:
        (point,) = run_batch(model.with_z(dist), n, "gamma", [gamma], trials, base_seed, params, workers)
        arms[dist] = point

    baseline = np.array([r.empirical_risk for r in arms[GAUSSIAN].results])
    rows = []
    for dist in Z_DISTS:
        point = arms[dist]
        paired = np.array([r.empirical_risk for r in point.results]) - baseline
        gap = Estimate.from_samples(paired)
        pooled = math.sqrt(point.risk.se**2 + arms[GAUSSIAN].risk.se**2)
        rows.append(UniversalityRow(dist=dist, risk=point.risk, gap=gap.mean, gap_se=gap.se, pooled_se=pooled))
        logger.info("%s: mean risk %.6g, gap %.3g +/- %.3g", dist, point.risk.mean, gap.mean, gap.se)
    return rows


def empirical_spectrum(kind: MatrixKind, n: int, matrix: str = "a") -> np.ndarray:
    """Ascending eigenvalues of KᵀK for the n×n model matrix K, clamped at 0.

    matrix="b" builds K as a model of B, which admits only the B model kinds.
    """
    if n < 2:
        raise InvalidParameter("n must be at least 2", n=n)
    if matrix not in ("a", "b"):
        raise InvalidParameter("matrix must be a or b", matrix=matrix)
    matrix = build_b(kind, n) if matrix == "b" else build_a(kind, n)
    try:
        eigenvalues = linalg.eigvalsh(matrix.T @ matrix, check_finite=False)
    except linalg.LinAlgError as e:
        raise SolveFailure(f"eigensolve failed: {e}", n=n)
    return np.clip(eigenvalues, 0.0, None)


def redundancy_block_spectrum(omega: float) -> Tuple[float, float]:
    """Eigenvalues of the 2×2 diagonal block of AᵀA for the redundancy model."""
    kind = MatrixKind.redundancy(omega)
    off = kind.omega * (1.0 - kind.omega)
    block = np.array([[1.0 + (1.0 - kind.omega) ** 2, off], [off, kind.omega**2]])
    low, high = np.clip(linalg.eigvalsh(block), 0.0, None)
    return float(low), float(high)


def limiting_measure(kind: MatrixKind, reference_n: Optional[int] = DEFAULT_REFERENCE_N) -> SpectralMeasure:
    """
    Limiting spectral measure of KᵀK for a model kind.

    Redundancy uses the empirical spectrum at reference_n, or the exact two-atom law
    of its 2×2 blocks when reference_n is None.
    """
    if kind.name == IDENTITY:
        return SpectralMeasure.identity()
    if kind.name == EXPLICIT_DIAGONAL:
        weight = 1.0 / len(kind.coeffs)
        return SpectralMeasure.from_atoms([(value, weight) for value in kind.coeffs])
    if kind.name == TOEPLITZ_AR:
        return SpectralMeasure.szego(kind.coeffs)
    if reference_n is None:
        low, high = redundancy_block_spectrum(kind.omega)
        return SpectralMeasure.from_atoms([(low, 0.5), (high, 0.5)])
    return empirical_measure(empirical_spectrum(kind, reference_n))
