import math

import numpy as np
import pytest
from asymptotics import (
    CASE_GENERAL_A_IDENTITY_B,
    CASE_IID_GENERAL_B,
    CASE_MP,
    LAMBDA_OPTIMAL,
    LAMBDA_TRACK_GAMMA,
    appendix_residual,
    case_oracle,
    dm_dlambda,
    fixed_point_residual,
    optimal_lambda,
    risk,
    solve_kappa,
    theory_curve,
)
from errors import CaseMismatch, InvalidParameter
from measures import SpectralMeasure
from simulator import MatrixKind, limiting_measure

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
GAMMAS = np.linspace(0.1, 4.0, 20)
LAMBDAS = np.geomspace(0.01, 10.0, 20)


def mp_root(gamma, lam):
    a, b = lam * gamma, 1.0 + lam - gamma
    return (-b + math.sqrt(b * b + 4.0 * a)) / (2.0 * a)


class TestProblemSpec:

    def test_lambda_must_be_positive(self, make_spec):
        with pytest.raises(InvalidParameter) as exc:
            make_spec(lam=0.0)
        assert exc.value.description == "lambda must be positive"

    def test_lambda_floor(self, make_spec):
        with pytest.raises(InvalidParameter):
            make_spec(lam=1e-9)

    @pytest.mark.parametrize("field", ["gamma", "alpha"])
    def test_positive_fields(self, make_spec, field):
        with pytest.raises(InvalidParameter):
            make_spec(**{field: -1.0})

    def test_negative_sigma(self, make_spec):
        with pytest.raises(InvalidParameter):
            make_spec(sigma_eps=-0.1)

    def test_to_dict(self, make_spec):
        data = make_spec(gamma=2.0, lam=0.5).to_dict()
        assert data == {"gamma": 2.0, "lambda": 0.5, "alpha": 1.0, "sigma": 1.0, "mu_a": "identity", "mu_b": "identity"}


class TestSolveKappa:

    def test_golden_ratio(self, make_spec):
        sol = solve_kappa(make_spec())
        assert sol.kappa == pytest.approx(GOLDEN, abs=1e-10)
        assert sol.m_bar == pytest.approx(GOLDEN - 1.0, abs=1e-10)
        assert sol.residual < 1e-10
        assert sol.cross_residual < 1e-9

    def test_case_two_example(self, make_spec, two_atoms):
        spec = make_spec(gamma=2.0, mu_b=two_atoms)
        sol = solve_kappa(spec)
        assert sol.kappa == pytest.approx(2.935, abs=1e-3)
        kappa = sol.kappa
        reduced = 2.0 * kappa**2 * two_atoms.transform(kappa) - kappa - 1.0
        assert abs(reduced) < 1e-10

    def test_large_lambda(self, make_spec):
        sol = solve_kappa(make_spec(lam=1e6))
        assert 1e6 * sol.m_bar == pytest.approx(1.0, abs=1e-5)

    def test_root_below_default_bracket_floor(self, make_spec):
        # μ_A = δ_c rescales the MP problem: m̄(λ) = m_MP(λ/c)/c, with κ ≈ 2e-9 here.
        scale, gamma, lam = 1e4, 0.5, 1e-5
        spec = make_spec(gamma=gamma, lam=lam, mu_a=SpectralMeasure.from_atoms([(scale, 1.0)]))
        sol = solve_kappa(spec)
        assert sol.kappa < 1e-8
        assert sol.residual < 1e-10

        reduced_lam = lam / scale
        b = 1.0 + reduced_lam - gamma
        m = 2.0 / (b + math.sqrt(b * b + 4.0 * reduced_lam * gamma))
        dm = -(gamma * m**2 + m) / (2.0 * reduced_lam * gamma * m + b)
        assert sol.m_bar == pytest.approx(m / scale, rel=1e-9)
        assert sol.dm_dlambda == pytest.approx(dm / scale**2, rel=1e-5)
        assert case_oracle(CASE_GENERAL_A_IDENTITY_B, spec) == pytest.approx(m / scale, rel=1e-8)

    def test_smallest_lambda_with_atoms(self, make_spec, three_atoms, two_atoms):
        for gamma in (0.05, 0.2, 0.4):
            sol = solve_kappa(make_spec(gamma=gamma, lam=1e-8, mu_a=three_atoms, mu_b=two_atoms))
            assert sol.residual < 1e-10
            assert sol.m_bar > 0
            assert math.isfinite(sol.dm_dlambda) and sol.dm_dlambda < 0

    def test_kappa1_relation(self, make_spec, three_atoms, two_atoms):
        spec = make_spec(gamma=0.7, lam=0.3, mu_a=three_atoms, mu_b=two_atoms)
        sol = solve_kappa(spec)
        m_b = two_atoms.transform(sol.kappa)
        mtilde = spec.gamma * sol.kappa * (1.0 - sol.kappa * m_b)
        assert sol.kappa1 == pytest.approx(-spec.lam / mtilde, rel=1e-12)
        assert sol.kappa1 < 0

    def test_solution_is_root_of_both_forms(self, make_spec, three_atoms, ar_measure):
        spec = make_spec(gamma=1.3, lam=0.05, mu_a=ar_measure, mu_b=three_atoms)
        sol = solve_kappa(spec)
        assert abs(fixed_point_residual(spec, sol.kappa)) < 1e-10
        assert abs(appendix_residual(spec, sol.kappa)) < 1e-9
        assert sol.m_bar > 0
        assert sol.dm_dlambda < 0

    def test_accepted_solutions_have_positive_m_a_argument(self, make_spec, three_atoms, two_atoms, ar_measure):
        pairs = ((None, None), (three_atoms, two_atoms), (ar_measure, two_atoms))
        for mu_a, mu_b in pairs:
            for gamma in (0.1, 0.9, 1.0, 1.1, 4.0):
                for lam in (1e-3, 0.1, 10.0):
                    spec = make_spec(gamma=gamma, lam=lam, mu_a=mu_a, mu_b=mu_b)
                    sol = solve_kappa(spec)
                    mtilde = gamma * sol.kappa * (1.0 - sol.kappa * spec.mu_b.transform(sol.kappa))
                    assert mtilde > 0
                    assert lam / mtilde > 0
                    assert -1.0 / sol.kappa1 > 0

    def test_residual_forms_differ_by_exact_identity(self, make_spec, three_atoms, two_atoms, ar_measure):
        # γκ(κm_B - 1)(1 - γ + γκm_B) = -m̃_B + m̃_B²/κ, so the two residuals agree for every κ.
        rng = np.random.default_rng(20191)
        measures = (SpectralMeasure.identity(), three_atoms, two_atoms, ar_measure)
        for _ in range(200):
            gamma = float(rng.uniform(0.05, 5.0))
            kappa = float(np.exp(rng.uniform(np.log(1e-3), np.log(1e3))))
            lam = float(np.exp(rng.uniform(np.log(1e-3), np.log(10.0))))
            mu_a, mu_b = (measures[i] for i in rng.integers(0, len(measures), size=2))
            spec = make_spec(gamma=gamma, lam=lam, mu_a=mu_a, mu_b=mu_b)

            t = kappa * float(mu_b.transform(kappa))
            mtilde = gamma * kappa * (1.0 - t)
            lhs = gamma * kappa * (t - 1.0) * (1.0 - gamma + gamma * t)
            rhs = -mtilde + mtilde**2 / kappa
            scale = max(1.0, abs(lhs), mtilde, mtilde**2 / kappa)
            assert abs(lhs - rhs) <= 1e-12 * scale
            main, cross = float(fixed_point_residual(spec, kappa)), float(appendix_residual(spec, kappa))
            assert abs(main - cross) <= 1e-12 * scale

    def test_to_dict(self, make_spec):
        data = solve_kappa(make_spec()).to_dict()
        assert set(data) == {
            "kappa",
            "m_bar",
            "dkappa_dlambda",
            "dm_dlambda",
            "kappa1",
            "residual",
            "cross_residual",
            "iterations",
        }


class TestCaseOracles:

    def test_mp_examples(self, make_spec):
        assert case_oracle(CASE_MP, make_spec()) == pytest.approx(0.6180340, abs=1e-7)
        root = case_oracle(CASE_MP, make_spec(gamma=0.5, lam=0.1))
        assert 0.05 * root**2 + 0.6 * root - 1.0 == pytest.approx(0.0, abs=1e-12)
        assert root == pytest.approx(1.48331, abs=1e-5)

    def test_mp_grid(self, make_spec):
        for gamma in GAMMAS:
            for lam in LAMBDAS:
                spec = make_spec(gamma=gamma, lam=lam)
                oracle = case_oracle(CASE_MP, spec)
                assert oracle == pytest.approx(mp_root(gamma, lam), rel=1e-12)
                assert abs(solve_kappa(spec).m_bar - oracle) < 1e-8

    def test_iid_general_b_grid(self, make_spec, two_atoms):
        for gamma in GAMMAS:
            for lam in LAMBDAS:
                spec = make_spec(gamma=gamma, lam=lam, mu_b=two_atoms)
                assert abs(solve_kappa(spec).m_bar - case_oracle(CASE_IID_GENERAL_B, spec)) < 1e-8

    def test_general_a_identity_b_grid(self, make_spec, three_atoms):
        for gamma in GAMMAS:
            for lam in LAMBDAS:
                spec = make_spec(gamma=gamma, lam=lam, mu_a=three_atoms)
                assert abs(solve_kappa(spec).m_bar - case_oracle(CASE_GENERAL_A_IDENTITY_B, spec)) < 1e-8

    def test_iid_general_b_example(self, make_spec, two_atoms):
        spec = make_spec(gamma=2.0, mu_b=two_atoms)
        kappa = solve_kappa(spec).kappa
        assert case_oracle(CASE_IID_GENERAL_B, spec) == pytest.approx(kappa * two_atoms.transform(kappa), abs=1e-10)

    def test_case_mismatch(self, make_spec, two_atoms):
        spec = make_spec(mu_a=two_atoms)
        for case in (CASE_MP, CASE_IID_GENERAL_B):
            with pytest.raises(CaseMismatch):
                case_oracle(case, spec)
        with pytest.raises(CaseMismatch):
            case_oracle(CASE_GENERAL_A_IDENTITY_B, make_spec(mu_b=two_atoms))

    def test_unknown_case(self, make_spec):
        with pytest.raises(CaseMismatch):
            case_oracle("Wishart", make_spec())


class TestDerivative:

    def test_golden_ratio_derivative(self, make_spec):
        sol = solve_kappa(make_spec())
        assert sol.dm_dlambda == pytest.approx(-1.0 / math.sqrt(5.0), abs=1e-9)

    def test_recomputes_from_solution(self, make_spec, two_atoms):
        spec = make_spec(gamma=2.0, lam=0.5, mu_b=two_atoms)
        sol = solve_kappa(spec)
        dkappa, dm = dm_dlambda(spec, sol)
        assert dkappa == sol.dkappa_dlambda
        assert dm == sol.dm_dlambda

    @pytest.mark.parametrize("gamma", np.linspace(0.2, 3.0, 5))
    @pytest.mark.parametrize("lam", np.geomspace(0.05, 5.0, 5))
    def test_matches_central_difference(self, make_spec, two_atoms, gamma, lam):
        spec = make_spec(gamma=gamma, lam=lam, mu_b=two_atoms)
        h = 1e-6 * lam
        up = solve_kappa(spec.replace(lam=lam + h)).m_bar
        down = solve_kappa(spec.replace(lam=lam - h)).m_bar
        numeric = (up - down) / (2 * h)
        assert solve_kappa(spec).dm_dlambda == pytest.approx(numeric, rel=1e-5)

    def test_dependent_a_matches_central_difference(self, make_spec, ar_measure, two_atoms):
        spec = make_spec(gamma=1.5, lam=0.2, mu_a=ar_measure, mu_b=two_atoms)
        h = 1e-6 * spec.lam
        up = solve_kappa(spec.replace(lam=0.2 + h)).m_bar
        down = solve_kappa(spec.replace(lam=0.2 - h)).m_bar
        numeric = (up - down) / (2 * h)
        assert solve_kappa(spec).dm_dlambda == pytest.approx(numeric, rel=1e-5)


class TestRisk:

    def test_golden_ratio_breakdown(self, make_spec):
        result = risk(make_spec())
        assert result.bias == pytest.approx(0.4472136, abs=1e-7)
        assert result.variance == pytest.approx(0.1708204, abs=1e-7)
        assert result.risk == pytest.approx(0.6180340, abs=1e-7)
        assert result.risk == result.bias + result.variance

    def test_noiseless_has_no_variance(self, make_spec, three_atoms, two_atoms):
        result = risk(make_spec(gamma=2.0, lam=0.03, sigma_eps=0.0, mu_a=three_atoms, mu_b=two_atoms))
        assert result.variance == 0
        assert result.bias > 0

    def test_full_shrinkage(self, make_spec):
        result = risk(make_spec(lam=1e6, alpha=1.0))
        assert result.bias == pytest.approx(1.0, abs=1e-3)

    def test_bias_scales_with_alpha_squared(self, make_spec, three_atoms):
        low = risk(make_spec(gamma=0.8, lam=0.2, alpha=0.5, mu_a=three_atoms))
        high = risk(make_spec(gamma=0.8, lam=0.2, alpha=1.0, mu_a=three_atoms))
        assert high.bias == pytest.approx(4.0 * low.bias, rel=1e-12)
        assert high.variance == pytest.approx(low.variance, rel=1e-12)

    @pytest.mark.parametrize("gamma,alpha,sigma", [(0.2, 1.0, 1.0), (2.0, 0.7, 0.2), (1.5, 1.0, 0.5)])
    def test_bias_nondecreasing_above_optimal_lambda(self, make_spec, three_atoms, two_atoms, gamma, alpha, sigma):
        target = optimal_lambda(gamma, alpha, sigma)
        base = make_spec(gamma=gamma, lam=target, alpha=alpha, sigma_eps=sigma, mu_a=three_atoms, mu_b=two_atoms)
        curve = theory_curve(base, "lambda", np.geomspace(target, 1e3 * target, 40))
        biases = np.array([p.breakdown.bias for p in curve])
        assert np.all(np.diff(biases) >= -1e-12)

    def test_components_nonnegative(self, make_spec, three_atoms, two_atoms):
        for gamma in (0.25, 1.0, 4.0):
            result = risk(make_spec(gamma=gamma, lam=0.03, alpha=0.7, sigma_eps=0.2, mu_a=three_atoms, mu_b=two_atoms))
            assert result.bias >= 0
            assert result.variance >= 0


class TestOptimalLambda:

    def test_examples(self):
        assert optimal_lambda(2.0, 1.0, 1.0) == 2.0
        assert optimal_lambda(2.0, 0.7, 0.2) == pytest.approx(0.1632653, abs=1e-7)
        assert optimal_lambda(2.0, 1.0, 0.0) == 0.0

    def test_invalid(self):
        with pytest.raises(InvalidParameter):
            optimal_lambda(0.0, 1.0, 1.0)
        with pytest.raises(InvalidParameter):
            optimal_lambda(1.0, 0.0, 1.0)

    def test_noisy_three_atom_setting_is_minimum(self, make_spec):
        best = make_spec(gamma=2.0, lam=optimal_lambda(2.0, 0.7, 0.2), alpha=0.7, sigma_eps=0.2)
        at_best = risk(best).risk
        grid = np.linspace(0.05, 0.5, 91)
        assert all(at_best <= risk(best.replace(lam=lam)).risk + 1e-12 for lam in grid)

    @pytest.mark.parametrize(
        "gamma,alpha,sigma",
        [(0.2, 1.0, 1.0), (2.0, 0.7, 0.2), (1.5, 1.0, 0.5)],
    )
    def test_log_grid_argmin(self, make_spec, three_atoms, two_atoms, ar_measure, gamma, alpha, sigma):
        target = optimal_lambda(gamma, alpha, sigma)
        grid = np.geomspace(target / 10, target * 10, 400)
        step = grid[1] / grid[0]
        for mu_a, mu_b in ((None, None), (three_atoms, two_atoms), (ar_measure, None)):
            base = make_spec(gamma=gamma, lam=target, alpha=alpha, sigma_eps=sigma, mu_a=mu_a, mu_b=mu_b)
            curve = theory_curve(base, "lambda", grid)
            best = grid[int(np.argmin([p.breakdown.risk for p in curve]))]
            assert target / step <= best <= target * step


class TestTheoryCurve:

    def test_three_atom_gamma_sweep(self, make_spec, three_atoms, two_atoms):
        base = make_spec(lam=0.03, alpha=0.7, sigma_eps=0.2, mu_a=three_atoms, mu_b=two_atoms)
        grid = np.linspace(0.05, 4.0, 80)
        curve = theory_curve(base, "gamma", grid)
        assert len(curve) == 80
        assert all(p.ok for p in curve)
        assert [p.value for p in curve] == list(grid)
        risks = np.array([p.breakdown.risk for p in curve])
        assert np.all(np.isfinite(risks)) and np.all(risks > 0)

    def test_track_gamma(self, make_spec):
        curve = theory_curve(make_spec(), "gamma", [0.5, 1.0, 2.0], LAMBDA_TRACK_GAMMA)
        assert [p.spec.lam for p in curve] == [0.5, 1.0, 2.0]

    def test_optimal_lambda_mode(self, make_spec):
        curve = theory_curve(make_spec(alpha=0.7, sigma_eps=0.2), "gamma", [1.0, 2.0], LAMBDA_OPTIMAL)
        assert curve[1].spec.lam == pytest.approx(0.1632653, abs=1e-7)

    def test_lambda_sweep_minimum_at_optimum(self, make_spec):
        grid = np.round(np.arange(0.05, 0.61, 0.01), 10)
        curve = theory_curve(make_spec(gamma=0.2), "lambda", grid)
        best = curve[int(np.argmin([p.breakdown.risk for p in curve]))].value
        assert best == pytest.approx(0.2, abs=0.011)

    def test_lambda_sweep_rejects_derived_lambda(self, make_spec):
        with pytest.raises(InvalidParameter):
            theory_curve(make_spec(), "lambda", [0.1, 0.2], LAMBDA_TRACK_GAMMA)

    def test_omega_needs_measure_builder(self, make_spec):
        with pytest.raises(InvalidParameter):
            theory_curve(make_spec(), "omega", [0.5])

    def test_invalid_point_recorded_not_raised(self, make_spec):
        curve = theory_curve(make_spec(), "gamma", [-1.0, 1.0])
        assert not curve[0].ok
        assert curve[0].error["code"] == "invalid_parameter"
        assert curve[1].ok


def redundancy_measure(omega):
    return limiting_measure(MatrixKind.redundancy(omega), reference_n=None)


class TestRedundancyPhenomenology:

    def test_risk_peak_near_interpolation_threshold(self, make_spec):
        base = make_spec(lam=0.05, mu_a=redundancy_measure(0.8))
        grid = np.linspace(0.1, 3.0, 59)
        curve = theory_curve(base, "gamma", grid)
        peak = curve[int(np.argmax([p.breakdown.risk for p in curve]))].value
        assert 0.8 < peak < 1.4

    def test_bias_rises_early_with_strong_redundancy(self, make_spec):
        base = make_spec(lam=0.05, mu_a=redundancy_measure(0.2))
        low, high = theory_curve(base, "gamma", [0.25, 0.75])
        assert high.breakdown.bias > 5.0 * low.breakdown.bias

    def test_risk_nonincreasing_in_omega(self, make_spec):
        base = make_spec(gamma=2.0, lam=optimal_lambda(2.0, 1.0, 1.0))
        omegas = np.round(np.arange(0.2, 1.01, 0.1), 10)
        curve = theory_curve(base, "omega", omegas, measure_for_omega=redundancy_measure)
        risks = np.array([p.breakdown.risk for p in curve])
        assert np.all(np.diff(risks) <= 1e-10)

    def test_risk_rises_slightly_from_omega_point_one(self, make_spec):
        base = make_spec(gamma=2.0, lam=optimal_lambda(2.0, 1.0, 1.0))
        low, high = theory_curve(base, "omega", [0.1, 0.2], measure_for_omega=redundancy_measure)
        assert low.breakdown.risk == pytest.approx(0.84736, abs=1e-4)
        assert high.breakdown.risk == pytest.approx(0.84890, abs=1e-4)
        assert 1e-3 < high.breakdown.risk - low.breakdown.risk < 2e-3

    @pytest.mark.slow
    def test_risk_nonincreasing_in_omega_reference_spectrum(self, make_spec):
        base = make_spec(gamma=2.0, lam=2.0)
        curve = theory_curve(
            base, "omega", [0.2, 0.6, 1.0], measure_for_omega=lambda w: limiting_measure(MatrixKind.redundancy(w), 2000)
        )
        risks = [p.breakdown.risk for p in curve]
        assert risks[0] >= risks[1] >= risks[2]

    def test_identity_limit_at_omega_one(self, make_spec):
        assert redundancy_measure(1.0).is_identity()
        with_redundancy = risk(make_spec(gamma=1.5, lam=0.3, mu_a=redundancy_measure(1.0)))
        plain = risk(make_spec(gamma=1.5, lam=0.3))
        assert with_redundancy.risk == pytest.approx(plain.risk, rel=1e-12)

    def test_szego_solver_converges(self, make_spec):
        sol = solve_kappa(make_spec(gamma=2.0, lam=1.0, mu_a=SpectralMeasure.szego([1.0, 0.5])))
        assert sol.residual < 1e-10
