"""Deterministic equivalents for ridge regression with X = AZB.

The limiting resolvent trace m̄(λ; γ) = lim (1/d) tr((XᵀX/n + λI)⁻¹) is κ m_B(κ)/λ,
where κ > 0 solves

    F(κ) = λ m_A(λ / m̃_B(κ)) + γκ(κ m_B(κ) - 1)(1 - γ + γκ m_B(κ)) = 0,
    m̃_B(κ) = γκ(1 - κ m_B(κ)).

F is positive near κ = 0 and tends to λ m_A(λ/(γ E_B)) - γ E_B < 0, so a sign change
always exists; the smallest admissible one is taken. Bias and variance follow from
m̄ and ∂m̄/∂λ, with the variance prefactor σ_ε² (not σ_ε/n) and the 1/n inside the
resolvent, which is the normalization the Monte Carlo estimates agree with.
"""

import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Optional, Tuple

import numpy as np
from config import SOLVER_MAX_EXPANSIONS, SOLVER_MAX_ITERATIONS
from errors import (
    CaseMismatch,
    DegenerateDenominator,
    InvalidParameter,
    MaxIterations,
    NoBracket,
    RidgeRiskError,
)
from measures import SpectralMeasure
from scipy.optimize import brentq
from utils import validate_nonnegative, validate_positive

logger = logging.getLogger(__name__)

MIN_LAMBDA = 1e-8
KAPPA_FLOOR = 1e-8
BRACKET_PAD = 10.0
SCAN_POINTS = 256
XTOL = 1e-14
NEWTON_STEPS = 3
RESIDUAL_TOLERANCE = 1e-10
CROSS_RESIDUAL_TOLERANCE = 1e-9
DENOMINATOR_FLOOR = 1e-14
FD_RELATIVE_STEP = 1e-6
CLAMP_TOLERANCE = 1e-12

CASE_MP = "MP"
CASE_IID_GENERAL_B = "IIDGeneralB"
CASE_GENERAL_A_IDENTITY_B = "GeneralAIdentityB"
CASES = (CASE_MP, CASE_IID_GENERAL_B, CASE_GENERAL_A_IDENTITY_B)

LAMBDA_FIXED = "fixed"
LAMBDA_TRACK_GAMMA = "track-gamma"
LAMBDA_OPTIMAL = "optimal"
LAMBDA_MODES = (LAMBDA_FIXED, LAMBDA_TRACK_GAMMA, LAMBDA_OPTIMAL)


@dataclass(frozen=True)
class ProblemSpec:
    gamma: float
    lam: float
    alpha: float
    sigma_eps: float
    mu_a: SpectralMeasure
    mu_b: SpectralMeasure

    def __post_init__(self):
        for name, value, minimum in (("gamma", self.gamma, 0.0), ("lambda", self.lam, MIN_LAMBDA)):
            is_valid, error_msg = validate_positive(name, value, minimum)
            if not is_valid:
                raise InvalidParameter(error_msg, parameter=name, value=value)
        is_valid, error_msg = validate_positive("alpha", self.alpha)
        if not is_valid:
            raise InvalidParameter(error_msg, parameter="alpha", value=self.alpha)
        is_valid, error_msg = validate_nonnegative("sigma", self.sigma_eps)
        if not is_valid:
            raise InvalidParameter(error_msg, parameter="sigma", value=self.sigma_eps)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return {
            "gamma": self.gamma,
            "lambda": self.lam,
            "alpha": self.alpha,
            "sigma": self.sigma_eps,
            "mu_a": self.mu_a.to_spec(),
            "mu_b": self.mu_b.to_spec(),
        }


@dataclass(frozen=True)
class FixedPointSolution:
    kappa: float
    m_bar: float
    dkappa_dlambda: float
    dm_dlambda: float
    kappa1: float
    residual: float
    cross_residual: float
    iterations: int

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RiskBreakdown:
    bias: float
    variance: float
    risk: float

    @classmethod
    def from_parts(cls, bias, variance):
        bias = _clamp(bias)
        variance = _clamp(variance)
        return cls(bias=bias, variance=variance, risk=bias + variance)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class CurvePoint:
    """One grid point of a theory sweep; solution and breakdown are None on failure."""

    axis: str
    value: float
    spec: Optional[ProblemSpec]
    solution: Optional[FixedPointSolution]
    breakdown: Optional[RiskBreakdown]
    error: Optional[dict] = None

    @property
    def ok(self):
        return self.error is None


def _clamp(value):
    # Round-off can push a true zero slightly negative; anything worse is reported as is.
    value = float(value)
    if -CLAMP_TOLERANCE <= value < 0.0:
        return 0.0
    return value


def fixed_point_residual(spec: ProblemSpec, kappa):
    """Left side of the fixed-point equation in κ (scalar or array, κ > 0)."""
    kappa = np.asarray(kappa, dtype=float)
    t = kappa * spec.mu_b.transform(kappa)
    mt = spec.gamma * kappa * (1.0 - t)
    first = spec.lam * spec.mu_a.transform(spec.lam / mt)
    second = spec.gamma * kappa * (t - 1.0) * (1.0 - spec.gamma + spec.gamma * t)
    return first + second


def appendix_residual(spec: ProblemSpec, kappa):
    """The same equation written through m̃_B: λ m_A(λ/m̃) + m̃²/κ - m̃."""
    kappa = np.asarray(kappa, dtype=float)
    mt = spec.gamma * kappa * (1.0 - kappa * spec.mu_b.transform(kappa))
    return spec.lam * spec.mu_a.transform(spec.lam / mt) + mt**2 / kappa - mt


def _terms(spec: ProblemSpec, kappa: float):
    """Everything the derivative formulas need at one κ."""
    m_b = float(spec.mu_b.transform(kappa))
    dm_b = float(-spec.mu_b.transform(kappa, power=2))
    mt = spec.gamma * kappa * (1.0 - kappa * m_b)
    dmt = spec.gamma - 2.0 * spec.gamma * kappa * m_b - spec.gamma * kappa**2 * dm_b
    u = spec.lam / mt
    m_a = float(spec.mu_a.transform(u))
    dm_a = float(-spec.mu_a.transform(u, power=2))
    return m_b, dm_b, mt, dmt, u, m_a, dm_a


def _residual_slope(spec: ProblemSpec, kappa: float) -> float:
    """∂/∂κ of the m̃_B form of the residual."""
    _, _, mt, dmt, _, _, dm_a = _terms(spec, kappa)
    lam = spec.lam
    return -(lam**2) * dm_a * dmt / mt**2 + 2.0 * mt * dmt / kappa - mt**2 / kappa**2 - dmt


def _is_admissible(spec: ProblemSpec, kappa: float) -> bool:
    t = kappa * float(spec.mu_b.transform(kappa))
    mt = spec.gamma * kappa * (1.0 - t)
    return 0.0 < t < 1.0 and mt > 0.0 and spec.lam / mt > 0.0


def _lower_until(func: Callable[[float], float], lo: float, positive: bool) -> float:
    """Halve lo until func(lo) has the wanted sign, at most SOLVER_MAX_EXPANSIONS times."""
    for _ in range(SOLVER_MAX_EXPANSIONS + 1):
        value = func(lo)
        if (value > 0.0) if positive else (value < 0.0):
            return lo
        lo *= 0.5
    raise NoBracket("no sign change below the bracket floor", kappa_lo=lo)


def _bracket(spec: ProblemSpec) -> Tuple[float, float]:
    try:
        lo = _lower_until(lambda k: float(fixed_point_residual(spec, k)), KAPPA_FLOOR, positive=True)
    except NoBracket as e:
        raise e.tag(**spec.to_dict())

    hi = spec.lam + BRACKET_PAD
    for expansion in range(SOLVER_MAX_EXPANSIONS + 1):
        if float(fixed_point_residual(spec, hi)) < 0.0:
            logger.debug("Bracket [%g, %g] after %d expansions", lo, hi, expansion)
            return lo, hi
        hi *= 2.0
    raise NoBracket("no sign change in the fixed-point residual", kappa_hi=hi, **spec.to_dict())


def _polish(spec: ProblemSpec, kappa: float, a: float, b: float) -> Tuple[float, int]:
    """A few Newton steps from the bracketed root, kept only while they help."""
    best = kappa
    best_residual = abs(float(fixed_point_residual(spec, kappa)))
    steps = 0
    for _ in range(NEWTON_STEPS):
        slope = _residual_slope(spec, best)
        if slope == 0.0 or not math.isfinite(slope):
            break
        candidate = best - float(fixed_point_residual(spec, best)) / slope
        steps += 1
        if not (a <= candidate <= b):
            break
        candidate_residual = abs(float(fixed_point_residual(spec, candidate)))
        if candidate_residual > best_residual:
            break
        best, best_residual = candidate, candidate_residual
    return best, steps


def _find_root(spec: ProblemSpec) -> Tuple[float, float, int]:
    """Smallest admissible root of the residual: (kappa, |residual|, iterations)."""
    lo, hi = _bracket(spec)
    grid = np.geomspace(lo, hi, SCAN_POINTS)
    values = fixed_point_residual(spec, grid)
    crossings = np.flatnonzero(np.sign(values[:-1]) != np.sign(values[1:]))

    func = lambda k: float(fixed_point_residual(spec, k))  # noqa: E731
    for index in crossings:
        a, b = float(grid[index]), float(grid[index + 1])
        if values[index] == 0.0:
            root, iterations = a, 0
        elif values[index + 1] == 0.0:
            root, iterations = b, 0
        else:
            root, result = brentq(func, a, b, xtol=XTOL, maxiter=SOLVER_MAX_ITERATIONS, full_output=True, disp=False)
            if not result.converged:
                raise MaxIterations(
                    f"root finding did not converge in {SOLVER_MAX_ITERATIONS} iterations",
                    flag=result.flag,
                    **spec.to_dict(),
                )
            iterations = result.iterations

        root, newton_steps = _polish(spec, root, a, b)
        if not _is_admissible(spec, root):
            logger.debug("Rejected inadmissible root kappa=%r", root)
            continue
        return root, abs(func(root)), iterations + newton_steps

    raise NoBracket("no admissible root of the fixed-point residual", **spec.to_dict())


def dm_dlambda(spec: ProblemSpec, sol: FixedPointSolution) -> Tuple[float, float]:
    """
    ∂κ/∂λ and ∂m̄/∂λ by implicit differentiation of the m̃_B form of the fixed point.

    Args:
        spec: problem the solution belongs to
        sol: solved fixed point (only kappa is read)

    Returns:
        (dkappa_dlambda, dm_dlambda)
    """
    kappa, lam = sol.kappa, spec.lam
    m_b, dm_b, mt, dmt, _, m_a, dm_a = _terms(spec, kappa)

    numerator = kappa**2 * mt**2 * m_a + lam * kappa**2 * mt * dm_a
    denominator = lam**2 * kappa**2 * dmt * dm_a - mt**2 * ((2.0 * kappa * mt - kappa**2) * dmt - mt**2)
    if abs(denominator) < DENOMINATOR_FLOOR:
        raise DegenerateDenominator(
            "derivative denominator vanishes; use finite differences",
            denominator=denominator,
            kappa=kappa,
            **spec.to_dict(),
        )

    dkappa = numerator / denominator
    dm = (m_b + kappa * dm_b) * dkappa / lam - kappa * m_b / lam**2
    return dkappa, dm


def _finite_difference_derivatives(spec: ProblemSpec) -> Tuple[float, float]:
    h = FD_RELATIVE_STEP * spec.lam
    up = spec.replace(lam=spec.lam + h)
    # One-sided at the λ floor, where spec.lam - h is not a valid spec.
    down = spec.replace(lam=spec.lam - h) if spec.lam - h >= MIN_LAMBDA else spec
    kappa_up, _, _ = _find_root(up)
    kappa_down, _, _ = _find_root(down)
    m_up = kappa_up * float(up.mu_b.transform(kappa_up)) / up.lam
    m_down = kappa_down * float(down.mu_b.transform(kappa_down)) / down.lam
    width = up.lam - down.lam
    return (kappa_up - kappa_down) / width, (m_up - m_down) / width


def solve_kappa(spec: ProblemSpec) -> FixedPointSolution:
    """Solve the fixed point for κ and derive m̄, its λ-derivative and the diagnostics."""
    kappa, residual, iterations = _find_root(spec)
    if residual >= RESIDUAL_TOLERANCE:
        raise MaxIterations(f"fixed-point residual {residual:.3e} above tolerance", kappa=kappa, **spec.to_dict())

    cross_residual = abs(float(appendix_residual(spec, kappa)))
    if cross_residual >= CROSS_RESIDUAL_TOLERANCE:
        raise MaxIterations(
            f"cross-form residual {cross_residual:.3e} above tolerance", kappa=kappa, **spec.to_dict()
        )

    m_b = float(spec.mu_b.transform(kappa))
    mt = spec.gamma * kappa * (1.0 - kappa * m_b)
    partial = FixedPointSolution(
        kappa=kappa,
        m_bar=kappa * m_b / spec.lam,
        dkappa_dlambda=math.nan,
        dm_dlambda=math.nan,
        kappa1=-spec.lam / mt,
        residual=residual,
        cross_residual=cross_residual,
        iterations=iterations,
    )

    try:
        dkappa, dm = dm_dlambda(spec, partial)
    except DegenerateDenominator as e:
        logger.warning("Falling back to finite differences: %s", e.description)
        dkappa, dm = _finite_difference_derivatives(spec)

    logger.debug("kappa=%r m_bar=%r residual=%.2e iterations=%d", kappa, partial.m_bar, residual, iterations)
    return dataclasses.replace(partial, dkappa_dlambda=dkappa, dm_dlambda=dm)


def risk_from_solution(spec: ProblemSpec, sol: FixedPointSolution) -> RiskBreakdown:
    lam, dm = spec.lam, sol.dm_dlambda
    bias = -(spec.alpha**2) * lam**2 * dm
    variance = spec.gamma * spec.sigma_eps**2 * sol.m_bar + spec.gamma * spec.sigma_eps**2 * lam * dm
    return RiskBreakdown.from_parts(bias, variance)


def risk(spec: ProblemSpec) -> RiskBreakdown:
    """Limiting bias, variance and estimation error ‖β̂ - β⋆‖²."""
    return risk_from_solution(spec, solve_kappa(spec))


def optimal_lambda(gamma: float, alpha: float, sigma_eps: float) -> float:
    """λ⋆ = σ_ε² γ / α², the same for every dependency structure."""
    for name, value in (("gamma", gamma), ("alpha", alpha)):
        is_valid, error_msg = validate_positive(name, value)
        if not is_valid:
            raise InvalidParameter(error_msg, parameter=name, value=value)
    is_valid, error_msg = validate_nonnegative("sigma", sigma_eps)
    if not is_valid:
        raise InvalidParameter(error_msg, parameter="sigma", value=sigma_eps)
    return sigma_eps**2 * gamma / alpha**2


def _first_root(func: Callable[[float], float], lo: float, hi: float, what: str) -> float:
    """Smallest sign change of func on a geometric scan of [lo, hi], refined by Brent's method."""
    grid = np.geomspace(lo, hi, SCAN_POINTS)
    values = np.array([func(x) for x in grid])
    crossings = np.flatnonzero(np.sign(values[:-1]) != np.sign(values[1:]))
    if crossings.size == 0:
        raise NoBracket(f"no sign change for the {what} equation on [{lo:g}, {hi:g}]")
    index = int(crossings[0])
    a, b = float(grid[index]), float(grid[index + 1])
    if values[index] == 0.0:
        return a
    if values[index + 1] == 0.0:
        return b
    root, result = brentq(func, a, b, xtol=1e-16, maxiter=SOLVER_MAX_ITERATIONS, full_output=True, disp=False)
    if not result.converged:
        raise MaxIterations(f"{what} equation did not converge", flag=result.flag)
    return root


def case_oracle(case_id: str, spec: ProblemSpec) -> float:
    """
    m̄ from the reduced scalar equation of a special case.

    Cases:
        MP                 μ_A = μ_B = δ_1: λγm̄² + (1 + λ - γ)m̄ - 1 = 0
        IIDGeneralB        μ_A = δ_1: γκ²m_B(κ) + κ(1 - γ) - λ = 0, m̄ = κ m_B(κ)/λ
        GeneralAIdentityB  μ_B = δ_1: λγ²m̄² + γ(1 - γ)m̄ - m_A(1/(γm̄)) = 0

    Raises:
        CaseMismatch: when the case's identity measure is not δ_1
    """
    if case_id not in CASES:
        raise CaseMismatch(f"unknown case: {case_id}", case=case_id)
    needs_identity_a = case_id in (CASE_MP, CASE_IID_GENERAL_B)
    needs_identity_b = case_id in (CASE_MP, CASE_GENERAL_A_IDENTITY_B)
    if needs_identity_a and not spec.mu_a.is_identity():
        raise CaseMismatch(f"case {case_id} needs mu_a = identity", case=case_id, mu_a=spec.mu_a.to_spec())
    if needs_identity_b and not spec.mu_b.is_identity():
        raise CaseMismatch(f"case {case_id} needs mu_b = identity", case=case_id, mu_b=spec.mu_b.to_spec())

    gamma, lam = spec.gamma, spec.lam

    if case_id == CASE_MP:
        a, b = lam * gamma, 1.0 + lam - gamma
        # The positive root, written to avoid cancellation when b > 0.
        disc = math.sqrt(b * b + 4.0 * a)
        return 2.0 / (b + disc) if b >= 0 else (disc - b) / (2.0 * a)

    if case_id == CASE_IID_GENERAL_B:

        def reduced(kappa):
            return gamma * kappa**2 * float(spec.mu_b.transform(kappa)) + kappa * (1.0 - gamma) - lam

        hi = lam + BRACKET_PAD
        for _ in range(SOLVER_MAX_EXPANSIONS):
            if reduced(hi) > 0:
                break
            hi *= 2.0
        lo = _lower_until(reduced, KAPPA_FLOOR * min(1.0, lam), positive=False)
        kappa = _first_root(reduced, lo, hi, case_id)
        return kappa * float(spec.mu_b.transform(kappa)) / lam

    def reduced(m):
        return lam * gamma**2 * m**2 + gamma * (1.0 - gamma) * m - float(spec.mu_a.transform(1.0 / (gamma * m)))

    # reduced(1/λ) = γ/λ - m_A(λ/γ) > 0 because m_A(z) < 1/z.
    upper = 1.0 / lam
    lo = _lower_until(reduced, upper * 1e-12, positive=False)
    return _first_root(reduced, lo, upper, case_id)


def sweep_specs(
    base: ProblemSpec,
    axis: str,
    grid: Iterable[float],
    lambda_mode: str = LAMBDA_FIXED,
    measure_for_omega: Optional[Callable[[float], SpectralMeasure]] = None,
) -> List[Tuple[float, ProblemSpec]]:
    """
    Expand a sweep into one ProblemSpec per grid value.

    Args:
        base: spec holding the fixed parameters
        axis: "gamma", "lambda" or "omega"
        grid: axis values
        lambda_mode: "fixed", "track-gamma" (λ = γ) or "optimal" (λ = λ⋆ at each γ)
        measure_for_omega: builds μ_A for an ω value; required for the omega axis
    """
    if lambda_mode not in LAMBDA_MODES:
        raise InvalidParameter(f"lambda mode must be one of {', '.join(LAMBDA_MODES)}", mode=lambda_mode)
    if axis == "lambda" and lambda_mode != LAMBDA_FIXED:
        raise InvalidParameter("a lambda sweep cannot also derive lambda from gamma", mode=lambda_mode)
    if axis == "omega" and measure_for_omega is None:
        raise InvalidParameter("an omega sweep needs a redundancy model for mu_a")
    if axis not in ("gamma", "lambda", "omega"):
        raise InvalidParameter(f"unknown sweep axis: {axis}", axis=axis)

    points = []
    for value in grid:
        value = float(value)
        try:
            if axis == "gamma":
                spec = base.replace(gamma=value)
            elif axis == "lambda":
                spec = base.replace(lam=value)
            else:
                spec = base.replace(mu_a=measure_for_omega(value))

            if lambda_mode == LAMBDA_TRACK_GAMMA:
                spec = spec.replace(lam=spec.gamma)
            elif lambda_mode == LAMBDA_OPTIMAL:
                spec = spec.replace(lam=max(optimal_lambda(spec.gamma, spec.alpha, spec.sigma_eps), MIN_LAMBDA))
        except RidgeRiskError as e:
            logger.warning("Skipping %s=%r: %s", axis, value, e.description)
            spec = e.tag(axis=axis, value=value)
        points.append((value, spec))
    return points


def theory_curve(
    base: ProblemSpec,
    axis: str,
    grid: Iterable[float],
    lambda_mode: str = LAMBDA_FIXED,
    measure_for_omega: Optional[Callable[[float], SpectralMeasure]] = None,
) -> List[CurvePoint]:
    """Solve every point of a sweep, recording failures per point instead of aborting."""
    curve = []
    for value, spec in sweep_specs(base, axis, grid, lambda_mode, measure_for_omega):
        if isinstance(spec, RidgeRiskError):
            curve.append(CurvePoint(axis, value, None, None, None, error=spec.error))
            continue
        try:
            solution = solve_kappa(spec)
            breakdown = risk_from_solution(spec, solution)
            curve.append(CurvePoint(axis, value, spec, solution, breakdown))
        except RidgeRiskError as e:
            logger.warning("Solver failed at %s=%r: %s", axis, value, e.description)
            curve.append(CurvePoint(axis, value, spec, None, None, error=e.tag(axis=axis, value=value).error))
    return curve
