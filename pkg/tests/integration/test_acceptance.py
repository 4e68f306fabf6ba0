"""
End-to-end checks of the pricing engine at production path counts.

These run the full 50-step, 10⁵-path configuration and take minutes; they
are marked slow and integration.
"""

import numpy as np
import pytest

from app.engine.bsde_solver import Backend
from app.engine.bsde_solver import SolverConfig
from app.engine.bsde_solver import black_scholes_problem
from app.engine.bsde_solver import solve
from app.engine.market import ClaimSpec
from app.engine.market import MarketParams
from app.engine.market import simulate_paths_q
from app.engine.regime import RegimeMode
from app.engine.regime import RegimeParams
from app.engine.regime import validation_report
from app.engine.xva import RegimeSpec
from app.engine.xva import SweepAxis
from app.engine.xva import SweepSpec
from app.engine.xva import price_xva
from app.engine.xva import sweep
from app.engine.xva import write_sweep_csv

pytestmark = [pytest.mark.slow, pytest.mark.integration]

FULL = SolverConfig(n_steps=50, n_paths=100_000, seed=20240101)
BS_VALUE = 0.06097
ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)
FUNDING_BORROW = (0.05, 0.075, 0.1)
# Finite-difference solve of the two reduced problems at α = 0.5, r_f⁻ = 0.1
CRISIS_RATIO_HALF_COLLATERAL = 2.568
MEAN_NORMAL_LENGTHS = (0.5, 1.39, 5.0)


def _curve(frame, mode: RegimeMode) -> np.ndarray:
    rows = frame[frame["regime_mode"] == mode.value]
    assert (rows["status"] == "ok").all()
    return rows["xva_plus"].to_numpy()


class TestRegimeLaws:
    """Closed-form regime laws against 10⁵ simulated paths."""

    def test_no_jump_probability_and_compensator(self):
        """Test P(β⁺_t = 0) and the compensated mean within three standard errors."""
        rows = validation_report(RegimeParams(0.5, 1.0), times=(0.5, 1.0, 2.0), n_paths=100_000, seed=11)
        checked = 0
        for row in rows:
            if row.quantity in ("P(up_jumps=0)", "E[beta - markov_compensator]"):
                assert abs(row.monte_carlo - row.closed_form) <= 3 * row.standard_error + 1e-12
                checked += 1
        assert checked == 6


class TestSolverOracle:
    """The linear problem against the closed-form call."""

    def test_regression_within_one_percent(self, benchmark_market, call_claim):
        """Test the regression backend lands within 1% of 0.0610."""
        bundle = simulate_paths_q(benchmark_market, call_claim, n_steps=50, n_paths=100_000, seed=FULL.seed)
        output = solve(black_scholes_problem(benchmark_market, call_claim, bundle), FULL)
        assert output.value() == pytest.approx(BS_VALUE, rel=0.01)

    def test_error_shrinks_with_paths(self, benchmark_market, call_claim):
        """Test the oracle error at 10⁵ paths is no worse than at 10⁴ up to noise."""
        errors = {}
        for n_paths in (10_000, 100_000):
            settings = SolverConfig(n_steps=50, n_paths=n_paths, seed=FULL.seed)
            bundle = simulate_paths_q(benchmark_market, call_claim, n_steps=50, n_paths=n_paths, seed=FULL.seed)
            output = solve(black_scholes_problem(benchmark_market, call_claim, bundle), settings)
            errors[n_paths] = (abs(output.value() - BS_VALUE), output.error())
        assert errors[100_000][0] <= errors[10_000][0] + 3 * errors[10_000][1]

    def test_shooting_within_two_percent(self, benchmark_market, call_claim):
        """Test the shooting backend lands within 2% of 0.0610."""
        settings = SolverConfig(n_steps=50, n_paths=100_000, seed=FULL.seed, backend=Backend.SHOOTING)
        bundle = simulate_paths_q(benchmark_market, call_claim, n_steps=50, n_paths=100_000, seed=FULL.seed)
        output = solve(black_scholes_problem(benchmark_market, call_claim, bundle), settings)
        assert output.value() == pytest.approx(BS_VALUE, rel=0.02)


class TestDegenerateMarket:
    """Equal rates, bond returns at r_D and no losses: XVA vanishes."""

    @pytest.mark.parametrize("mode", list(RegimeMode))
    def test_zero_xva(self, degenerate_market, call_claim, regime_params, mode):
        """Test |XVA±| within three standard errors of zero."""
        report = price_xva(degenerate_market, call_claim, RegimeSpec(mode, regime_params), FULL)
        assert abs(report.xva_plus) <= 3 * report.se_plus + 1e-12
        assert abs(report.xva_minus) <= 3 * report.se_minus + 1e-12


class TestCrisisAmplification:
    """Crisis XVA against normal XVA at the benchmark with r_f⁻ = 0.1."""

    @pytest.fixture(scope="class")
    def ratios(self):
        market = MarketParams(funding_rate_borrow=0.1)
        regime = RegimeParams.from_means(1.39, 0.99)
        ratios = {}
        for alpha in (0.0, 0.5, 1.0):
            priced = market.replace(collateralization=alpha)
            normal = price_xva(priced, ClaimSpec(), RegimeSpec(RegimeMode.FROZEN_NORMAL, regime), FULL)
            crisis = price_xva(priced, ClaimSpec(), RegimeSpec(RegimeMode.FROZEN_CRISIS, regime), FULL)
            assert normal.xva_plus > 0
            ratios[alpha] = crisis.xva_plus / normal.xva_plus
        return ratios

    def test_crisis_more_than_doubles(self, ratios):
        """Test XVA⁺(crisis)/XVA⁺(normal) exceeds 1.5 and sits at the finite-difference value 2.568 for α = 0.5."""
        assert all(ratio > 1.5 for ratio in ratios.values())
        assert ratios[0.5] == pytest.approx(CRISIS_RATIO_HALF_COLLATERAL, rel=0.03)

    def test_ratio_grows_as_collateral_falls(self, ratios):
        """Test the crisis amplification is nondecreasing as α falls."""
        assert ratios[0.0] >= ratios[0.5] >= ratios[1.0]


class TestSweeps:
    """Shape of the α and funding-rate curves."""

    @pytest.fixture(scope="class")
    def alpha_sweeps(self):
        spec_modes = (RegimeMode.FROZEN_NORMAL, RegimeMode.FROZEN_CRISIS)
        regime = RegimeParams.from_means(1.39, 0.99)
        return {
            rate: sweep(
                SweepSpec(SweepAxis.ALPHA, ALPHAS, spec_modes),
                MarketParams(funding_rate_borrow=rate),
                ClaimSpec(),
                regime,
                FULL,
            )
            for rate in FUNDING_BORROW
        }

    def test_nondecreasing_in_alpha(self, alpha_sweeps):
        """Test frozen-normal XVA⁺ does not fall as α rises, for every r_f⁻."""
        for frame in alpha_sweeps.values():
            curve = _curve(frame, RegimeMode.FROZEN_NORMAL)
            assert np.all(np.diff(curve) >= -1e-9)

    def test_nondecreasing_in_funding_rate(self, alpha_sweeps):
        """Test frozen-crisis XVA⁺ does not fall as r_f⁻ rises, at every α."""
        curves = np.array([_curve(alpha_sweeps[rate], RegimeMode.FROZEN_CRISIS) for rate in FUNDING_BORROW])
        assert np.all(np.diff(curves, axis=0) >= -1e-9)

    def test_crisis_curve_is_affine(self, alpha_sweeps):
        """Test the frozen-crisis α-curve fits a line with R² >= 0.98."""
        for frame in alpha_sweeps.values():
            curve = _curve(frame, RegimeMode.FROZEN_CRISIS)
            slope, intercept = np.polyfit(ALPHAS, curve, 1)
            fitted = slope * np.asarray(ALPHAS) + intercept
            total = np.sum((curve - curve.mean()) ** 2)
            r_squared = 1.0 if total == 0 else 1.0 - np.sum((curve - fitted) ** 2) / total
            assert r_squared >= 0.98

    def test_reproducible_csv(self, benchmark_market, call_claim, regime_params, tmp_path):
        """Test a rerun with the same seed writes a byte-identical CSV."""
        spec = SweepSpec(SweepAxis.ALPHA, (0.0, 1.0), (RegimeMode.FROZEN_NORMAL,))
        first = write_sweep_csv(sweep(spec, benchmark_market, call_claim, regime_params, FULL), tmp_path / "a.csv")
        second = write_sweep_csv(
            sweep(spec, benchmark_market, call_claim, regime_params, FULL, threads=3), tmp_path / "b.csv"
        )
        assert first.read_bytes() == second.read_bytes()


class TestFullCollateral:
    """At α = 1 the closeout loss vanishes."""

    def test_flat_in_mean_normal_length(self, benchmark_market, call_claim):
        """Test dynamic XVA⁺ at α = 1 and r_f⁻ = r_r⁻ barely moves with the mean normal-regime length."""
        market = benchmark_market.replace(collateralization=1.0)
        # with equal borrow rates the crisis driver coincides with the normal one
        assert market.funding_rate_borrow == market.repo_rate_borrow

        reports = [
            price_xva(market, call_claim, RegimeSpec(RegimeMode.DYNAMIC, RegimeParams.from_means(m, 0.99)), FULL)
            for m in (0.5, 1.39, 5.0)
        ]
        values = np.array([r.xva_plus for r in reports])
        errors = np.array([r.se_plus for r in reports])
        i, j = int(values.argmax()), int(values.argmin())
        assert values[i] - values[j] <= 3 * np.hypot(errors[i], errors[j]) + 1e-12

    def test_independent_of_losses(self, benchmark_market, call_claim, regime_params):
        """Test L_I and L_C leave XVA⁺ unchanged when α = 1."""
        market = benchmark_market.replace(collateralization=1.0)
        spec = RegimeSpec(RegimeMode.FROZEN_NORMAL, regime_params)
        base = price_xva(market, call_claim, spec, FULL)
        lossless = price_xva(market.replace(loss_investor=0.0, loss_counterparty=0.0), call_claim, spec, FULL)
        assert base.xva_plus == lossless.xva_plus


class TestRegimeLengthSweep:
    """Dynamic XVA⁺ along the mean normal-regime length with r_f⁻ = 0.1."""

    @pytest.mark.parametrize("alpha", [0.0, 0.5])
    def test_shorter_normal_regimes_cost_more(self, call_claim, regime_params, alpha):
        """Test XVA⁺ falls as the mean normal-regime length grows when α < 1."""
        market = MarketParams(funding_rate_borrow=0.1, collateralization=alpha)
        spec = SweepSpec(SweepAxis.MEAN_NORMAL_REGIME, MEAN_NORMAL_LENGTHS, (RegimeMode.DYNAMIC,))
        curve = _curve(sweep(spec, market, call_claim, regime_params, FULL), RegimeMode.DYNAMIC)
        assert np.all(np.diff(curve) < 0)

    def test_crisis_still_matters_when_fully_collateralized(self, call_claim, regime_params):
        """Test α = 1 alone does not flatten the curve once r_f⁻ exceeds r_r⁻."""
        market = MarketParams(funding_rate_borrow=0.1, collateralization=1.0)
        spec = SweepSpec(SweepAxis.MEAN_NORMAL_REGIME, (MEAN_NORMAL_LENGTHS[0], MEAN_NORMAL_LENGTHS[-1]), (RegimeMode.DYNAMIC,))
        frame = sweep(spec, market, call_claim, regime_params, FULL)
        short, long = _curve(frame, RegimeMode.DYNAMIC)
        errors = frame["se_plus"].to_numpy()
        assert short - long > 3 * np.hypot(*errors)


class TestBackendAgreement:
    """Regression and shooting on the same XVA problem."""

    def test_frozen_normal(self, benchmark_market, call_claim, regime_params):
        """Test the two backends agree on XVA⁺ within 10% plus three standard errors."""
        spec = RegimeSpec(RegimeMode.FROZEN_NORMAL, regime_params)
        regression = price_xva(benchmark_market, call_claim, spec, FULL)
        shooting_settings = SolverConfig(n_steps=50, n_paths=100_000, seed=FULL.seed, backend=Backend.SHOOTING)
        shooting = price_xva(benchmark_market, call_claim, spec, shooting_settings)
        tolerance = 0.1 * abs(regression.xva_plus) + 3 * (regression.se_plus + shooting.se_plus)
        assert abs(regression.xva_plus - shooting.xva_plus) <= tolerance
