"""Unit tests for XVA pricing, sweeps and hedges."""

import json

import numpy as np
import pytest

from app.engine.bsde_solver import FullSolution
from app.engine.bsde_solver import SolverConfig
from app.engine.market import simulate_paths_q
from app.engine.regime import RegimeMode
from app.engine.xva import SWEEP_COLUMNS
from app.engine.xva import HedgeMarker
from app.engine.xva import RegimeSpec
from app.engine.xva import SweepAxis
from app.engine.xva import SweepSpec
from app.engine.xva import bond_hedges_from_z
from app.engine.xva import gnuplot_script
from app.engine.xva import hedge_view
from app.engine.xva import price_xva
from app.engine.xva import risky_bond_prices
from app.engine.xva import stock_hedge_from_z
from app.engine.xva import sweep
from app.engine.xva import write_sweep_csv
from app.exceptions import AssumptionError
from app.exceptions import ValidationError

SMALL = SolverConfig(n_steps=5, n_paths=2000, seed=3)


class TestPriceXva:
    """Test single-point pricing."""

    @pytest.mark.parametrize("mode", list(RegimeMode))
    def test_degenerate_market_is_zero(self, degenerate_market, call_claim, regime_params, mode):
        """Test XVA± vanish within three standard errors in every regime mode."""
        report = price_xva(degenerate_market, call_claim, RegimeSpec(mode, regime_params), SMALL)
        assert abs(report.xva_plus) <= 3 * report.se_plus + 1e-12
        assert abs(report.xva_minus) <= 3 * report.se_minus + 1e-12

    def test_benchmark_report(self, benchmark_market, call_claim):
        """Test the report fields, prices and JSON form."""
        report = price_xva(benchmark_market, call_claim, RegimeSpec(), SMALL)
        assert report.v_hat0 == pytest.approx(0.06097, abs=1e-4)
        assert report.xva_plus > 0
        assert report.seller_price == pytest.approx(report.v_hat0 + report.xva_plus)
        assert report.buyer_price == pytest.approx(report.v_hat0 + report.xva_minus)
        data = json.loads(report.to_json())
        assert data["regime_mode"] == "frozen-normal"
        assert data["checks"]["necessary_passed"] is True
        assert set(data["diagnostics"]) == {"plus", "minus"}

    def test_necessary_failure_raises(self, benchmark_market, call_claim):
        """Test pricing refuses a market failing a necessary condition."""
        broken = benchmark_market.replace(funding_rate_lend=0.06)
        with pytest.raises(AssumptionError) as exc:
            price_xva(broken, call_claim, RegimeSpec(), SMALL)
        assert "a" in exc.value.details["conditions"].split(",")

    def test_same_seed_same_numbers(self, benchmark_market, call_claim):
        """Test repeated pricing is bitwise reproducible."""
        first = price_xva(benchmark_market, call_claim, RegimeSpec(), SMALL)
        second = price_xva(benchmark_market, call_claim, RegimeSpec(), SMALL, threads=2)
        assert first.xva_plus == second.xva_plus
        assert first.xva_minus == second.xva_minus


class TestSweepSpec:
    """Test sweep grid validation."""

    def test_coerces_strings(self):
        """Test axis and regime names are parsed."""
        spec = SweepSpec("alpha", [0, 0.5], ["frozen-crisis"])
        assert spec.axis == SweepAxis.ALPHA
        assert spec.grid == (0.0, 0.5)
        assert spec.regime_modes == (RegimeMode.FROZEN_CRISIS,)

    @pytest.mark.parametrize(
        "axis, grid",
        [("alpha", [1.5]), ("alpha", []), ("funding_borrow", [0.0]), ("mean_normal_regime", [float("nan")])],
    )
    def test_rejects_bad_grids(self, axis, grid):
        """Test out-of-range, empty and non-finite grids are rejected."""
        with pytest.raises(ValidationError):
            SweepSpec(axis, grid)

    def test_unknown_axis(self):
        """Test an unknown axis name is rejected."""
        with pytest.raises(ValueError):
            SweepSpec("volatility", [0.1])


class TestSweep:
    """Test sweep execution and outputs."""

    def test_rows_in_grid_order(self, benchmark_market, call_claim, regime_params, tmp_path):
        """Test one row per (value, mode) in grid order and a stable CSV layout."""
        spec = SweepSpec(SweepAxis.ALPHA, (0.0, 1.0), (RegimeMode.FROZEN_NORMAL, RegimeMode.FROZEN_CRISIS))
        frame = sweep(spec, benchmark_market, call_claim, regime_params, SMALL, threads=2)
        assert list(frame.columns) == SWEEP_COLUMNS
        assert list(frame["axis_value"]) == [0.0, 0.0, 1.0, 1.0]
        assert list(frame["regime_mode"]) == ["frozen-normal", "frozen-crisis"] * 2
        assert (frame["status"] == "ok").all()
        text = write_sweep_csv(frame, tmp_path / "sweep.csv").read_text()
        assert text.splitlines()[0] == ",".join(SWEEP_COLUMNS)

    def test_failed_point_is_recorded(self, benchmark_market, call_claim, regime_params):
        """Test an arbitrage point gets a failed status and NaN values, the rest still run."""
        spec = SweepSpec(SweepAxis.FUNDING_BORROW, (0.04, 0.1))
        frame = sweep(spec, benchmark_market, call_claim, regime_params, SMALL)
        assert frame["status"].iloc[0].startswith("failed:")
        assert np.isnan(frame["xva_plus"].iloc[0])
        assert frame["status"].iloc[1] == "ok"

    def test_overrides_apply(self, benchmark_market, call_claim, regime_params):
        """Test sweep overrides change the base market."""
        spec = SweepSpec(SweepAxis.ALPHA, (0.5,), overrides={"funding_rate_lend": 0.06})
        frame = sweep(spec, benchmark_market, call_claim, regime_params, SMALL)
        assert frame["status"].iloc[0].startswith("failed:")

    def test_gnuplot_script(self):
        """Test the plot script reads the CSV and draws one line per mode."""
        script = gnuplot_script("sweep.csv", SweepAxis.ALPHA, (RegimeMode.FROZEN_NORMAL, RegimeMode.FROZEN_CRISIS))
        assert "set datafile separator ','" in script
        assert "collateralization alpha" in script
        assert script.count("with linespoints") == 2
        assert "set output 'sweep.png'" in script


class TestHedges:
    """Test hedge ratios."""

    def test_stock_hedge(self):
        """Test ξ = z/(σS) and the frozen crisis marker."""
        assert stock_hedge_from_z(0.3, 2.0, 0.3, 0) == pytest.approx(0.5)
        assert stock_hedge_from_z(-0.3, 2.0, 0.3, 0) == pytest.approx(-0.5)
        assert stock_hedge_from_z(0.3, 2.0, 0.3, 1) == pytest.approx(0.5)
        assert stock_hedge_from_z(-0.3, 2.0, 0.3, 1) == HedgeMarker.FROZEN
        assert stock_hedge_from_z(0.0, 2.0, 0.3, 1) == 0.0
        assert stock_hedge_from_z(0.03, 1.0, 0.3, 0) == pytest.approx(0.1)
        with pytest.raises(ValidationError):
            stock_hedge_from_z(0.1, 0.0, 0.3, 0)

    def test_bond_hedges(self):
        """Test ξ^i = −z^i/P^i."""
        assert bond_hedges_from_z(0.1, -0.2, 1.0, 2.0) == pytest.approx((-0.1, 0.1))
        assert bond_hedges_from_z(-0.5, 0.0, 1.0, 1.0) == pytest.approx((0.5, 0.0))
        with pytest.raises(ValidationError):
            bond_hedges_from_z(0.1, 0.1, 0.0, 1.0)

    def test_bond_prices_start_at_one(self, benchmark_market):
        """Test P^i_0 = 1 and growth at μ_i."""
        investor, counterparty = risky_bond_prices(benchmark_market, np.array([0.0, 1.0]))
        assert investor[0] == counterparty[0] == 1.0
        assert investor[1] == pytest.approx(np.exp(0.21))

    def test_hedge_view(self, benchmark_market, call_claim):
        """Test the per-path view flags frozen crisis entries."""
        bundle = simulate_paths_q(benchmark_market, call_claim, RegimeMode.FROZEN_CRISIS, n_steps=2, n_paths=4)
        shape = bundle.stock.shape
        full = FullSolution(
            xva=np.zeros(shape),
            z=np.array([[-1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]),
            z_investor=np.full(shape, 0.1),
            z_counterparty=np.zeros(shape),
            default_step=np.full(4, 3),
            defaulted_first=np.array(["none"] * 4),
        )
        view = hedge_view(full, bundle, benchmark_market, np.zeros(shape))
        assert view.frozen[0, 0]
        assert np.isnan(view.stock[0, 0])
        assert not view.frozen[1].any()
        np.testing.assert_allclose(view.bond_investor[:, 0], -0.1)
