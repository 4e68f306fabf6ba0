"""
XVA pricing and sensitivity sweeps.

price_xva checks the market, simulates one path bundle and solves the
reduced seller (ğ⁺) and buyer (ğ⁻) problems on it. sweep repeats that over
a parameter grid with the same seed so that the curves share their random
numbers.
"""

import itertools
import json
import math
from dataclasses import asdict
from dataclasses import dataclass
from dataclasses import field
from enum import StrEnum
from functools import partial
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app.config import config
from app.engine.bsde_solver import FullSolution
from app.engine.bsde_solver import SolverConfig
from app.engine.bsde_solver import SolverOutput
from app.engine.bsde_solver import reduced_xva_problem
from app.engine.bsde_solver import solve
from app.engine.generators import CheckReport
from app.engine.generators import Severity
from app.engine.generators import Sign
from app.engine.generators import check_assumptions
from app.engine.market import ClaimSpec
from app.engine.market import MarketParams
from app.engine.market import PathBundle
from app.engine.market import bs_price_delta
from app.engine.market import simulate_paths_q
from app.engine.regime import RegimeMode
from app.engine.regime import RegimeParams
from app.engine.regime import mean_to_rate
from app.exceptions import AssumptionError
from app.exceptions import ValidationError
from app.exceptions import XvaError
from app.logger import get_logger
from app.utils import atomic_write_text
from app.utils import ordered_map
from app.utils import performance_monitor
from app.utils import timing_decorator

logger = get_logger("xva.pricing")

SWEEP_COLUMNS = [
    "axis_value", "regime_mode", "xva_plus", "se_plus", "xva_minus", "se_minus", "v_hat0", "status",
]


class SweepAxis(StrEnum):
    ALPHA = "alpha"
    FUNDING_BORROW = "funding_borrow"
    MEAN_NORMAL_REGIME = "mean_normal_regime"


class HedgeMarker(StrEnum):
    FROZEN = "frozen"


@dataclass(frozen=True)
class RegimeSpec:
    mode: RegimeMode = RegimeMode.FROZEN_NORMAL
    params: RegimeParams = field(default_factory=lambda: RegimeParams.from_means(1.39, 0.99))

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", RegimeMode(self.mode))


@dataclass
class XVAReport:
    xva_plus: float
    se_plus: float
    xva_minus: float
    se_minus: float
    v_hat0: float
    delta0: float
    regime_mode: RegimeMode
    market: MarketParams
    claim: ClaimSpec
    regime: RegimeParams
    solver: SolverConfig
    checks: CheckReport
    diagnostics: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def seller_price(self) -> float:
        return self.v_hat0 + self.xva_plus

    @property
    def buyer_price(self) -> float:
        return self.v_hat0 + self.xva_minus

    def as_dict(self) -> dict[str, Any]:
        return {
            "xva_plus": self.xva_plus,
            "se_plus": self.se_plus,
            "xva_minus": self.xva_minus,
            "se_minus": self.se_minus,
            "v_hat0": self.v_hat0,
            "delta0": self.delta0,
            "regime_mode": self.regime_mode.value,
            "market": asdict(self.market),
            "claim": asdict(self.claim),
            "regime": asdict(self.regime),
            "solver": asdict(self.solver),
            "checks": self.checks.as_dict(),
            "diagnostics": self.diagnostics,
            "warnings": self.warnings,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, default=str)


@dataclass(frozen=True)
class SweepSpec:
    axis: SweepAxis
    grid: tuple[float, ...]
    regime_modes: tuple[RegimeMode, ...] = (RegimeMode.FROZEN_NORMAL,)
    overrides: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "axis", SweepAxis(self.axis))
        object.__setattr__(self, "grid", tuple(float(v) for v in self.grid))
        object.__setattr__(self, "regime_modes", tuple(RegimeMode(m) for m in self.regime_modes))
        if not self.grid:
            raise ValidationError("sweep grid must not be empty")
        if not self.regime_modes:
            raise ValidationError("sweep needs at least one regime mode")
        for value in self.grid:
            if not math.isfinite(value):
                raise ValidationError("sweep grid values must be finite", {"value": value})
            if self.axis == SweepAxis.ALPHA and not 0 <= value <= 1:
                raise ValidationError("alpha must lie in [0, 1]", {"value": value})
            if self.axis != SweepAxis.ALPHA and value <= 0:
                raise ValidationError(f"{self.axis} values must be positive", {"value": value})


@dataclass
class HedgeView:
    stock: np.ndarray
    frozen: np.ndarray
    bond_investor: np.ndarray
    bond_counterparty: np.ndarray


# ---------------------------------------------------------------------------
# Pricing
# ---------------------------------------------------------------------------


def _require_necessary(checks: CheckReport) -> list[str]:
    if not checks.necessary_passed:
        failed = [
            item.condition
            for item in checks.items
            if item.severity == Severity.NECESSARY and not (item.passed or item.boundary)
        ]
        raise AssumptionError("necessary no-arbitrage conditions violated", {"conditions": ",".join(failed)})
    return checks.warnings


def price_on_bundle(
    market: MarketParams,
    claim: ClaimSpec,
    bundle: PathBundle,
    solver: SolverConfig,
) -> tuple[SolverOutput, SolverOutput]:
    """Solve the seller and buyer reduced problems on an existing bundle."""
    plus = solve(reduced_xva_problem(market, claim, bundle, Sign.PLUS), solver)
    minus = solve(reduced_xva_problem(market, claim, bundle, Sign.MINUS), solver)
    return plus, minus


@timing_decorator
def price_xva(
    market: MarketParams,
    claim: ClaimSpec,
    regime: RegimeSpec,
    solver: SolverConfig,
    threads: int | None = None,
) -> XVAReport:
    checks = check_assumptions(market, claim.maturity)
    warnings = _require_necessary(checks)

    bundle = simulate_paths_q(
        market,
        claim,
        regime_mode=regime.mode,
        regime_params=regime.params,
        n_steps=solver.n_steps,
        n_paths=solver.n_paths,
        seed=solver.seed,
        antithetic=solver.antithetic,
        threads=threads,
    )
    plus, minus = price_on_bundle(market, claim, bundle, solver)
    reference = bs_price_delta(market, claim, 0.0, claim.spot)

    if plus.value() < minus.value():
        logger.info("buyer XVA exceeds seller XVA on this run")

    report = XVAReport(
        xva_plus=plus.value(),
        se_plus=plus.error(),
        xva_minus=minus.value(),
        se_minus=minus.error(),
        v_hat0=float(reference.value),
        delta0=float(reference.delta),
        regime_mode=regime.mode,
        market=market,
        claim=claim,
        regime=regime.params,
        solver=solver,
        checks=checks,
        diagnostics={"plus": plus.diagnostics, "minus": minus.diagnostics},
        warnings=warnings,
    )
    logger.info(
        f"XVA+ {report.xva_plus:.6f} ± {report.se_plus:.1e}, "
        f"XVA- {report.xva_minus:.6f} ± {report.se_minus:.1e} ({regime.mode})"
    )
    return report


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def _apply_axis(
    axis: SweepAxis, value: float, market: MarketParams, regime: RegimeParams
) -> tuple[MarketParams, RegimeParams]:
    if axis == SweepAxis.ALPHA:
        return market.replace(collateralization=value), regime
    if axis == SweepAxis.FUNDING_BORROW:
        return market.replace(funding_rate_borrow=value), regime
    return market, RegimeParams(mean_to_rate(value), regime.rate_crisis, regime.initial_state)


def _sweep_point(
    spec: SweepSpec,
    market: MarketParams,
    claim: ClaimSpec,
    regime: RegimeParams,
    solver: SolverConfig,
    point: tuple[float, RegimeMode],
) -> dict[str, Any]:
    value, mode = point
    row: dict[str, Any] = {"axis_value": value, "regime_mode": mode.value}
    try:
        point_market, point_regime = _apply_axis(spec.axis, value, market, regime)
        report = price_xva(point_market, claim, RegimeSpec(mode, point_regime), solver, threads=1)
    except XvaError as e:
        logger.warning(f"sweep point {spec.axis}={value} ({mode}) failed: {e}")
        row.update({c: np.nan for c in SWEEP_COLUMNS[2:-1]})
        row["status"] = f"failed: {e.message}"
        return row
    row.update({
        "xva_plus": report.xva_plus,
        "se_plus": report.se_plus,
        "xva_minus": report.xva_minus,
        "se_minus": report.se_minus,
        "v_hat0": report.v_hat0,
        "status": "ok",
    })
    return row


def sweep(
    spec: SweepSpec,
    market: MarketParams,
    claim: ClaimSpec,
    regime: RegimeParams,
    solver: SolverConfig,
    threads: int | None = None,
) -> pd.DataFrame:
    """One row per (grid value, regime mode), in grid order, sharing one seed."""
    base_market = market.replace(**spec.overrides) if spec.overrides else market
    points = list(itertools.product(spec.grid, spec.regime_modes))
    performance_monitor.start_timer(f"sweep {spec.axis}")
    rows = ordered_map(
        partial(_sweep_point, spec, base_market, claim, regime, solver),
        points,
        threads or config.THREADS,
    )
    performance_monitor.end_timer(f"sweep {spec.axis}")
    logger.debug(performance_monitor.get_report())
    frame = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    failed = int((frame["status"] != "ok").sum())
    if failed:
        logger.warning(f"{failed} of {len(frame)} sweep points failed")
    return frame


def write_sweep_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.10g"))


def gnuplot_script(csv_name: str, axis: SweepAxis, regime_modes: tuple[RegimeMode, ...]) -> str:
    """Plot XVA+ against the sweep axis, one line per regime mode."""
    label = {
        SweepAxis.ALPHA: "collateralization alpha",
        SweepAxis.FUNDING_BORROW: "funding borrow rate",
        SweepAxis.MEAN_NORMAL_REGIME: "mean normal regime length (years)",
    }[SweepAxis(axis)]
    lines = [
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set key left top",
        f"set xlabel '{label}'",
        "set ylabel 'XVA+'",
        "set terminal pngcairo size 800,600",
        f"set output '{Path(csv_name).stem}.png'",
    ]
    plots = [
        f"'{csv_name}' using (stringcolumn(2) eq '{mode.value}' ? $1 : 1/0):3 "
        f"with linespoints title '{mode.value}'"
        for mode in regime_modes
    ]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def write_gnuplot(path: str | Path, csv_name: str, spec: SweepSpec) -> Path:
    return atomic_write_text(path, gnuplot_script(csv_name, spec.axis, spec.regime_modes))


# ---------------------------------------------------------------------------
# Hedges
# ---------------------------------------------------------------------------


def stock_hedge_from_z(z: float, spot: float, sigma: float, beta: int) -> float | HedgeMarker:
    """Stock shares ξ with z = (1 − β·1{ξ<0})σξS; a negative z in crisis has no admissible ξ."""
    if not spot > 0:
        raise ValidationError("spot must be positive", {"spot": spot})
    if z == 0:
        return 0.0
    if beta == 1 and z < 0:
        return HedgeMarker.FROZEN
    return z / (sigma * spot)


def bond_hedges_from_z(
    z_investor: float, z_counterparty: float, price_investor: float, price_counterparty: float
) -> tuple[float, float]:
    """Bond shares from z^i = −ξ^i P^i."""
    if not (price_investor > 0 and price_counterparty > 0):
        raise ValidationError(
            "bond prices must be positive",
            {"investor": price_investor, "counterparty": price_counterparty},
        )
    return -z_investor / price_investor, -z_counterparty / price_counterparty


def risky_bond_prices(market: MarketParams, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pre-default bond prices P^i_t = exp(μ_i t) with P^i_0 = 1."""
    return np.exp(market.bond_return_investor * grid), np.exp(market.bond_return_counterparty * grid)


def hedge_view(
    full: FullSolution,
    bundle: PathBundle,
    market: MarketParams,
    z_hat: np.ndarray,
    bond_prices: tuple[np.ndarray, np.ndarray] | None = None,
) -> HedgeView:
    """
    Hedge ratios of the full position V = V̂ + XVA on every path and step.

    Stock shares come from z̃ + Ẑ; entries where the crisis freezes the short
    leg are NaN and flagged in ``frozen``.
    """
    price_investor, price_counterparty = bond_prices or risky_bond_prices(market, bundle.grid)
    z_total = full.z + z_hat[:, :-1]
    beta = bundle.regime[:, :-1]
    frozen = (beta == 1) & (z_total < 0)
    stock = np.where(frozen, np.nan, z_total / (market.volatility * bundle.stock[:, :-1]))
    return HedgeView(
        stock=stock,
        frozen=frozen,
        bond_investor=-full.z_investor / price_investor[None, :],
        bond_counterparty=-full.z_counterparty / price_counterparty[None, :],
    )
