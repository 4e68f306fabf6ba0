"""
Market model under the valuation measure.

Holds the rate set, the claim, the simulated path bundle, the Black-Scholes
reference value V̂ with its diffusion loading Ẑ = σSΔ, closeout values and
the replicating-portfolio helpers used for audits.
"""

import math
from dataclasses import dataclass
from dataclasses import field
from enum import StrEnum
from functools import partial
from typing import Any

import numpy as np
import pandas as pd
from scipy.stats import norm

from app.config import config
from app.engine.regime import RegimeMode
from app.engine.regime import RegimeParams
from app.engine.regime import simulate_jump_matrix
from app.engine.regime import states_on_grid
from app.engine.streams import STREAM_BROWNIAN
from app.engine.streams import STREAM_DEFAULT
from app.engine.streams import Chunk
from app.engine.streams import chunk_generator
from app.engine.streams import chunks
from app.exceptions import AssumptionError
from app.exceptions import ValidationError
from app.logger import get_logger
from app.logger import log_memory_usage
from app.utils import negative_part
from app.utils import ordered_map
from app.utils import positive_part

logger = get_logger("xva.market")


class OptionKind(StrEnum):
    CALL = "call"
    PUT = "put"


class DefaultEvent(StrEnum):
    INVESTOR = "investor_default"
    COUNTERPARTY = "counterparty_default"


@dataclass(frozen=True)
class MarketParams:
    """Asymmetric rates, bond returns and loss parameters. Defaults are the desk benchmark."""

    repo_rate_lend: float = 0.05
    repo_rate_borrow: float = 0.05
    funding_rate_lend: float = 0.05
    funding_rate_borrow: float = 0.05
    collateral_rate_receive: float = 0.01
    collateral_rate_pay: float = 0.01
    discount_rate: float = 0.01
    bond_return_investor: float = 0.21
    bond_return_counterparty: float = 0.16
    volatility: float = 0.3
    loss_investor: float = 0.5
    loss_counterparty: float = 0.5
    collateralization: float = 0.5
    # Physical-measure context; never used for pricing
    physical_drift: float | None = None
    physical_intensity_investor: float | None = None
    physical_intensity_counterparty: float | None = None

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if value is not None and not math.isfinite(value):
                raise ValidationError(f"{name} must be finite", {name: value})
        if not self.volatility > 0:
            raise ValidationError("volatility must be positive", {"volatility": self.volatility})
        for name in ("loss_investor", "loss_counterparty", "collateralization"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValidationError(f"{name} must lie in [0, 1]", {name: value})
        for name in ("bond_return_investor", "bond_return_counterparty"):
            if getattr(self, name) < self.discount_rate:
                raise ValidationError(
                    f"{name} below the discount rate gives a negative default intensity",
                    {name: getattr(self, name), "discount_rate": self.discount_rate},
                )

    def replace(self, **changes: Any) -> "MarketParams":
        values = {**self.__dict__, **changes}
        return MarketParams(**values)


@dataclass(frozen=True)
class ClaimSpec:
    kind: OptionKind = OptionKind.CALL
    strike: float = 1.0
    maturity: float = 0.25
    spot: float = 1.0

    def __post_init__(self) -> None:
        for name in ("strike", "maturity", "spot"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be positive", {name: value})
        if self.kind not in (OptionKind.CALL, OptionKind.PUT):
            raise ValidationError("kind must be call or put", {"kind": self.kind})

    def payoff(self, spot: Any) -> Any:
        if self.kind == OptionKind.CALL:
            return np.maximum(spot - self.strike, 0.0)
        return np.maximum(self.strike - spot, 0.0)


@dataclass(frozen=True)
class BlackScholesValue:
    value: Any
    delta: Any
    z_hat: Any


@dataclass
class PathBundle:
    grid: np.ndarray
    stock: np.ndarray
    brownian_increments: np.ndarray
    regime: np.ndarray
    default_times: np.ndarray
    regime_mode: RegimeMode = RegimeMode.FROZEN_NORMAL
    antithetic: bool = True
    seed: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.stock.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self.grid) - 1

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def maturity(self) -> float:
        return float(self.grid[-1])

    def to_frame(self, max_paths: int | None = None) -> pd.DataFrame:
        """Long-format export: path_id, step, t, S, beta, dW (dW empty at the last step)."""
        n = self.n_paths if max_paths is None else min(max_paths, self.n_paths)
        steps = len(self.grid)
        increments = np.concatenate(
            [self.brownian_increments[:n], np.full((n, 1), np.nan)], axis=1
        )
        return pd.DataFrame({
            "path_id": np.repeat(np.arange(n), steps),
            "step": np.tile(np.arange(steps), n),
            "t": np.tile(self.grid, n),
            "S": self.stock[:n].ravel(),
            "beta": self.regime[:n].ravel(),
            "dW": increments.ravel(),
        })


@dataclass(frozen=True)
class PortfolioShares:
    stock: float = 0.0
    bond_investor: float = 0.0
    bond_counterparty: float = 0.0
    funding: float = 0.0
    repo: float = 0.0
    collateral: float = 0.0


@dataclass(frozen=True)
class AccountPrices:
    stock: float = 1.0
    bond_investor: float = 1.0
    bond_counterparty: float = 1.0
    funding: float = 1.0
    repo: float = 1.0
    collateral: float = 1.0

    def __post_init__(self) -> None:
        for name, value in self.__dict__.items():
            if not value > 0:
                raise ValidationError(f"{name} price must be positive", {name: value})


# ---------------------------------------------------------------------------
# Reference valuation
# ---------------------------------------------------------------------------


def bs_price_delta(params: MarketParams, claim: ClaimSpec, t: Any, spot: Any) -> BlackScholesValue:
    """Black-Scholes value, delta and Ẑ = σSΔ at (t, S); vectorized over arrays."""
    t_arr = np.asarray(t, dtype=float)
    s_arr = np.asarray(spot, dtype=float)
    if np.any(t_arr > claim.maturity) or np.any(t_arr < 0):
        raise ValidationError("t must lie in [0, maturity]", {"maturity": claim.maturity})
    if np.any(s_arr <= 0):
        raise ValidationError("spot must be positive")

    r, sigma, strike = params.discount_rate, params.volatility, claim.strike
    tau = claim.maturity - t_arr
    live = tau > 0
    safe_tau = np.where(live, tau, 1.0)
    vol_sqrt = sigma * np.sqrt(safe_tau)
    d1 = (np.log(s_arr / strike) + (r + 0.5 * sigma**2) * safe_tau) / vol_sqrt
    d2 = d1 - vol_sqrt
    discounted_strike = strike * discount_factor(params, safe_tau)

    if claim.kind == OptionKind.CALL:
        live_value = s_arr * norm.cdf(d1) - discounted_strike * norm.cdf(d2)
        live_delta = norm.cdf(d1)
        expiry_delta = (s_arr > strike).astype(float)
    else:
        live_value = discounted_strike * norm.cdf(-d2) - s_arr * norm.cdf(-d1)
        live_delta = norm.cdf(d1) - 1.0
        expiry_delta = -(s_arr < strike).astype(float)

    value = np.where(live, live_value, claim.payoff(s_arr))
    delta = np.where(live, live_delta, expiry_delta)
    z_hat = sigma * s_arr * delta

    if value.ndim == 0:
        return BlackScholesValue(float(value), float(delta), float(z_hat))
    return BlackScholesValue(value, delta, z_hat)


def reference_on_grid(
    params: MarketParams, claim: ClaimSpec, bundle: PathBundle
) -> tuple[np.ndarray, np.ndarray]:
    """(V̂, Ẑ) at every path and grid time."""
    reference = bs_price_delta(params, claim, bundle.grid[None, :], bundle.stock)
    return reference.value, reference.z_hat


def discount_factor(params: MarketParams, tau: Any) -> Any:
    """e^{−r_D·τ} for a float or an array of times to maturity."""
    factor = np.exp(-params.discount_rate * np.asarray(tau, dtype=float))
    return float(factor) if factor.ndim == 0 else factor


def collateral_value(params: MarketParams, v_hat: Any) -> Any:
    """C = α·V̂."""
    return params.collateralization * v_hat


# ---------------------------------------------------------------------------
# Credit
# ---------------------------------------------------------------------------


def default_intensities_q(params: MarketParams) -> tuple[float, float]:
    """h_i^Q = μ_i − r_D."""
    h_investor = params.bond_return_investor - params.discount_rate
    h_counterparty = params.bond_return_counterparty - params.discount_rate
    if h_investor < 0 or h_counterparty < 0:
        raise AssumptionError(
            "bond returns must not fall below the discount rate",
            {"h_investor": h_investor, "h_counterparty": h_counterparty},
        )
    return h_investor, h_counterparty


def _default_chunk(rates: np.ndarray, seed: int, chunk: Chunk, chunk_size: int) -> np.ndarray:
    uniforms = chunk_generator(seed, STREAM_DEFAULT, chunk.index).random((chunk_size, 2))
    exponentials = -np.log1p(-uniforms[: chunk.rows])
    with np.errstate(divide="ignore"):
        return np.where(rates > 0, exponentials / np.where(rates > 0, rates, 1.0), np.inf)


def sample_default_times(
    params: MarketParams, n_paths: int, seed: int, threads: int | None = None
) -> np.ndarray:
    """(τ_I, τ_C) per path; a zero intensity never defaults (+inf)."""
    if n_paths < 1:
        raise ValidationError("n_paths must be at least 1", {"n_paths": n_paths})
    rates = np.asarray(default_intensities_q(params))
    chunk_size = config.PATH_CHUNK
    parts = ordered_map(
        partial(_default_chunk, rates, seed, chunk_size=chunk_size),
        chunks(n_paths, chunk_size),
        threads or config.THREADS,
    )
    return np.concatenate(parts, axis=0)


def closeout_value(params: MarketParams, v_hat: Any, event: DefaultEvent) -> Any:
    """θ_I(v) = v − L_I((1−α)v)⁺ and θ_C(v) = v + L_C((1−α)v)⁻."""
    theta_investor, theta_counterparty = theta_tilde(params, v_hat)
    if event == DefaultEvent.INVESTOR:
        return v_hat + theta_investor
    if event == DefaultEvent.COUNTERPARTY:
        return v_hat + theta_counterparty
    raise ValidationError("unknown default event", {"event": event})


def theta_tilde(params: MarketParams, v_hat: Any) -> tuple[Any, Any]:
    """Closeout adjustments (θ̃_I, θ̃_C); work on floats, arrays and tensors."""
    exposure = (1.0 - params.collateralization) * v_hat
    return (
        -params.loss_investor * positive_part(exposure),
        params.loss_counterparty * negative_part(exposure),
    )


# ---------------------------------------------------------------------------
# Portfolio audit
# ---------------------------------------------------------------------------


def portfolio_value(shares: PortfolioShares, prices: AccountPrices, beta: int) -> float:
    """Replicating-portfolio value; in crisis a short stock leg and the repo account are frozen."""
    if beta not in (0, 1):
        raise ValidationError("beta must be 0 or 1", {"beta": beta})
    frozen_short = 1.0 if (beta == 1 and shares.stock < 0) else 0.0
    return (
        (1.0 - frozen_short) * shares.stock * prices.stock
        + shares.bond_investor * prices.bond_investor
        + shares.bond_counterparty * prices.bond_counterparty
        + shares.funding * prices.funding
        + (1 - beta) * shares.repo * prices.repo
        - shares.collateral * prices.collateral
    )


def repo_financing_gap(shares: PortfolioShares, prices: AccountPrices) -> float:
    """ψ^r·B^{r_r} + ξ·S; zero when the stock position is financed in the repo market."""
    return shares.repo * prices.repo + shares.stock * prices.stock


# ---------------------------------------------------------------------------
# Path simulation
# ---------------------------------------------------------------------------


def _brownian_chunk(
    n_steps: int, dt: float, antithetic: bool, seed: int, chunk: Chunk, chunk_size: int
) -> np.ndarray:
    generator = chunk_generator(seed, STREAM_BROWNIAN, chunk.index)
    if antithetic:
        half = generator.standard_normal((chunk_size // 2, n_steps))
        normals = np.empty((chunk_size, n_steps))
        normals[0::2] = half
        normals[1::2] = -half
    else:
        normals = generator.standard_normal((chunk_size, n_steps))
    return math.sqrt(dt) * normals[: chunk.rows]


def simulate_paths_q(
    params: MarketParams,
    claim: ClaimSpec,
    regime_mode: RegimeMode = RegimeMode.FROZEN_NORMAL,
    regime_params: RegimeParams | None = None,
    n_steps: int = 50,
    n_paths: int = 100_000,
    seed: int = 0,
    antithetic: bool = True,
    threads: int | None = None,
) -> PathBundle:
    """
    Simulate stock, regime and default times under the valuation measure.

    The stock follows exact log-normal transitions with drift r_D. Paths are
    grouped in chunks with their own random streams, so the bundle is a pure
    function of the arguments whatever the thread count.
    """
    if n_steps < 1 or n_paths < 1:
        raise ValidationError(
            "n_steps and n_paths must be at least 1", {"n_steps": n_steps, "n_paths": n_paths}
        )
    regime_mode = RegimeMode(regime_mode)
    if regime_mode == RegimeMode.DYNAMIC and regime_params is None:
        raise ValidationError("dynamic regime mode needs regime parameters")

    workers = threads or config.THREADS
    grid = np.linspace(0.0, claim.maturity, n_steps + 1)
    dt = claim.maturity / n_steps
    chunk_size = config.PATH_CHUNK

    increments = np.concatenate(
        ordered_map(
            partial(_brownian_chunk, n_steps, dt, antithetic, seed, chunk_size=chunk_size),
            chunks(n_paths, chunk_size),
            workers,
        ),
        axis=0,
    )

    sigma = params.volatility
    log_steps = (params.discount_rate - 0.5 * sigma**2) * dt + sigma * increments
    log_stock = math.log(claim.spot) + np.concatenate(
        [np.zeros((n_paths, 1)), np.cumsum(log_steps, axis=1)], axis=1
    )
    stock = np.exp(log_stock)

    if regime_mode == RegimeMode.DYNAMIC:
        assert regime_params is not None
        jumps = simulate_jump_matrix(regime_params, claim.maturity, n_paths, seed, workers)
        regime = states_on_grid(jumps, regime_params.initial_state, grid)
    else:
        state = 1 if regime_mode == RegimeMode.FROZEN_CRISIS else 0
        regime = np.full((n_paths, n_steps + 1), state, dtype=np.int8)

    default_times = sample_default_times(params, n_paths, seed, workers)

    logger.debug(f"simulated {n_paths} paths x {n_steps} steps ({regime_mode})")
    log_memory_usage(logger)
    return PathBundle(
        grid=grid,
        stock=stock,
        brownian_increments=increments,
        regime=regime,
        default_times=default_times,
        regime_mode=regime_mode,
        antithetic=antithetic,
        seed=seed,
    )
