"""Shared fixtures."""

from pathlib import Path

import pytest

from app.engine.market import ClaimSpec
from app.engine.market import MarketParams
from app.engine.regime import RegimeParams

FIXTURES = Path(__file__).parent / "fixtures"
TEDRATE = FIXTURES / "TEDRATE.csv"


@pytest.fixture
def benchmark_market() -> MarketParams:
    """Desk benchmark: r_r = r_f = 0.05, r_c = r_D = 0.01, mu = 0.21/0.16, sigma = 0.3."""
    return MarketParams()


@pytest.fixture
def degenerate_market() -> MarketParams:
    """All rates 0.01, bond returns at r_D and no losses: the exact XVA is zero."""
    return MarketParams(
        repo_rate_lend=0.01,
        repo_rate_borrow=0.01,
        funding_rate_lend=0.01,
        funding_rate_borrow=0.01,
        collateral_rate_receive=0.01,
        collateral_rate_pay=0.01,
        discount_rate=0.01,
        bond_return_investor=0.01,
        bond_return_counterparty=0.01,
        loss_investor=0.0,
        loss_counterparty=0.0,
    )


@pytest.fixture
def call_claim() -> ClaimSpec:
    return ClaimSpec()


@pytest.fixture
def regime_params() -> RegimeParams:
    return RegimeParams.from_means(1.39, 0.99)


@pytest.fixture
def tedrate_csv() -> Path:
    if not TEDRATE.exists():
        pytest.skip("TEDRATE.csv fixture not present (see tests/fixtures/README.md)")
    return TEDRATE
