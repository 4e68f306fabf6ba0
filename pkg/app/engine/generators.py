"""
BSDE drivers and parameter checks.

The drivers work on floats, numpy arrays and torch tensors alike so that the
regression solver and the shooting backend evaluate the same code. Rate
selection goes through positive/negative parts of the arguments, never
through branches on share signs.
"""

import math
from dataclasses import dataclass
from dataclasses import field
from enum import StrEnum
from typing import Any

import numpy as np

from app.engine.market import MarketParams
from app.engine.market import default_intensities_q
from app.engine.market import theta_tilde
from app.exceptions import ValidationError
from app.logger import get_logger
from app.utils import negative_part
from app.utils import positive_part

logger = get_logger("xva.generators")


class Sign(StrEnum):
    PLUS = "plus"
    MINUS = "minus"


class Severity(StrEnum):
    NECESSARY = "necessary"
    SUFFICIENT = "sufficient"
    WELL_POSEDNESS = "well-posedness"


@dataclass(frozen=True)
class GeneratorPoint:
    """
    One argument tuple of a driver.

    ``level`` is v for f±, xva for f̃± and ŭ for ğ±. ``z_investor`` and
    ``z_counterparty`` are ignored by ğ±, ``z_hat`` by f±.
    """

    t: float
    level: float
    z: float
    z_investor: float = 0.0
    z_counterparty: float = 0.0
    beta: int = 0
    v_hat: float = 0.0
    z_hat: float = 0.0

    def __post_init__(self) -> None:
        if self.beta not in (0, 1):
            raise ValidationError("beta must be 0 or 1", {"beta": self.beta})
        for name in ("t", "level", "z", "z_investor", "z_counterparty", "v_hat", "z_hat"):
            if not math.isfinite(getattr(self, name)):
                raise ValidationError(f"{name} must be finite", {name: getattr(self, name)})


@dataclass(frozen=True)
class CheckItem:
    condition: str
    description: str
    lhs: float
    rhs: float
    passed: bool
    severity: Severity
    # lhs == rhs on a strict inequality
    boundary: bool = False

    def as_dict(self) -> dict[str, Any]:
        return {
            "condition": self.condition,
            "description": self.description,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "passed": self.passed,
            "severity": self.severity.value,
            "boundary": self.boundary,
        }


@dataclass(frozen=True)
class CheckReport:
    items: tuple[CheckItem, ...]
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    @property
    def necessary_passed(self) -> bool:
        """Necessary items hold, counting an exact boundary tie as a warning."""
        return all(
            item.passed or item.boundary
            for item in self.items
            if item.severity == Severity.NECESSARY
        )

    @property
    def warnings(self) -> list[str]:
        return [
            f"{item.condition}: {item.description} ({item.lhs:.6g} vs {item.rhs:.6g})"
            for item in self.items
            if not item.passed
        ]

    def as_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "necessary_passed": self.necessary_passed,
            "items": [item.as_dict() for item in self.items],
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class LipschitzConstant:
    value: float
    a1: float
    a2: float
    a3: float


def _indicator(z: Any, beta: Any) -> Any:
    """𝟙{z > 0, β = 1}: the short stock leg is frozen in crisis."""
    active = (z > 0) & (beta == 1)
    if hasattr(active, "to"):
        return active.to(z.dtype)
    return np.asarray(active, dtype=float)


def f_plus(
    params: MarketParams, v: Any, z: Any, z_investor: Any, z_counterparty: Any, beta: Any, v_hat: Any
) -> Any:
    """f⁺ on broadcastable arrays or tensors."""
    sigma = params.volatility
    frozen = _indicator(z, beta)
    collateral = params.collateralization * v_hat
    funding = v - frozen / sigma * z + z_investor + z_counterparty - collateral
    return -(
        params.funding_rate_lend * positive_part(funding)
        - params.funding_rate_borrow * negative_part(funding)
        + (params.discount_rate - params.repo_rate_borrow * (1 - frozen)) / sigma * positive_part(z)
        - (params.discount_rate - params.repo_rate_lend * (1 - frozen)) / sigma * negative_part(z)
        + params.collateral_rate_receive * positive_part(collateral)
        - params.collateral_rate_pay * negative_part(collateral)
        - params.discount_rate * z_investor
        - params.discount_rate * z_counterparty
    )


def f_tilde_plus(
    params: MarketParams,
    xva: Any,
    z: Any,
    z_investor: Any,
    z_counterparty: Any,
    beta: Any,
    v_hat: Any,
    z_hat: Any,
) -> Any:
    """f̃⁺ in its explicit form: the funding bracket carries (1−α)V̂, the stock terms z̃+Ẑ."""
    sigma = params.volatility
    alpha = params.collateralization
    total_z = z + z_hat
    frozen = _indicator(total_z, beta)
    funding = xva - frozen / sigma * total_z + z_investor + z_counterparty + (1 - alpha) * v_hat
    return -(
        params.funding_rate_lend * positive_part(funding)
        + (params.discount_rate - params.repo_rate_borrow * (1 - frozen)) / sigma * positive_part(total_z)
        - params.funding_rate_borrow * negative_part(funding)
        - (params.discount_rate - params.repo_rate_lend * (1 - frozen)) / sigma * negative_part(total_z)
        + params.collateral_rate_receive * positive_part(alpha * v_hat)
        - params.collateral_rate_pay * negative_part(alpha * v_hat)
        - params.discount_rate * z_investor
        - params.discount_rate * z_counterparty
    ) + params.discount_rate * v_hat


def g_breve_plus(
    params: MarketParams, u: Any, z: Any, beta: Any, v_hat: Any, z_hat: Any
) -> Any:
    """ğ⁺: the reduced driver after the default jumps are integrated out."""
    h_investor, h_counterparty = default_intensities_q(params)
    theta_investor, theta_counterparty = theta_tilde(params, v_hat)
    jump_investor = theta_investor - u
    jump_counterparty = theta_counterparty - u
    return (
        h_investor * jump_investor
        + h_counterparty * jump_counterparty
        + f_tilde_plus(params, u, z, jump_investor, jump_counterparty, beta, v_hat, z_hat)
    )


def g_breve(
    params: MarketParams, u: Any, z: Any, beta: Any, v_hat: Any, z_hat: Any, sign: Sign
) -> Any:
    """ğ± on arrays or tensors; ğ⁻ by reflection of the state and reference arguments."""
    if sign == Sign.PLUS:
        return g_breve_plus(params, u, z, beta, v_hat, z_hat)
    return -g_breve_plus(params, -u, -z, beta, -v_hat, -z_hat)


def eval_f(params: MarketParams, point: GeneratorPoint, sign: Sign = Sign.PLUS) -> float:
    p = point
    if Sign(sign) == Sign.PLUS:
        value = f_plus(params, p.level, p.z, p.z_investor, p.z_counterparty, p.beta, p.v_hat)
    else:
        value = -f_plus(
            params, -p.level, -p.z, -p.z_investor, -p.z_counterparty, p.beta, -p.v_hat
        )
    return float(value)


def eval_f_tilde(params: MarketParams, point: GeneratorPoint, sign: Sign = Sign.PLUS) -> float:
    p = point
    if Sign(sign) == Sign.PLUS:
        value = f_tilde_plus(
            params, p.level, p.z, p.z_investor, p.z_counterparty, p.beta, p.v_hat, p.z_hat
        )
    else:
        value = -f_tilde_plus(
            params, -p.level, -p.z, -p.z_investor, -p.z_counterparty, p.beta, -p.v_hat, -p.z_hat
        )
    return float(value)


def eval_g_breve(
    params: MarketParams,
    t: float,
    u: float,
    z: float,
    beta: int,
    v_hat: float,
    z_hat: float,
    sign: Sign = Sign.PLUS,
) -> float:
    GeneratorPoint(t=t, level=u, z=z, beta=beta, v_hat=v_hat, z_hat=z_hat)
    return float(g_breve(params, u, z, beta, v_hat, z_hat, Sign(sign)))


def lipschitz_constant(params: MarketParams) -> LipschitzConstant:
    """Lipschitz constant of f± in (v, z, z^I, z^C), uniform in β and V̂."""
    r_d = params.discount_rate
    r_fb = params.funding_rate_borrow
    scale = min(params.volatility, 1.0)
    gap_borrow = abs(r_d - params.repo_rate_borrow)
    gap_lend = abs(r_d - params.repo_rate_lend)

    a1 = (r_fb + r_d) / scale
    a2 = max(r_fb + r_d, gap_lend / scale)
    a3 = max((r_fb + max(r_d, gap_borrow)) / scale, r_fb + r_d)
    value = max(r_fb + max(r_d, gap_borrow), gap_lend) / scale
    return LipschitzConstant(value=value, a1=a1, a2=a2, a3=a3)


def _strict(
    condition: str, description: str, lhs: float, rhs: float, severity: Severity
) -> CheckItem:
    return CheckItem(
        condition, description, lhs, rhs, lhs < rhs, severity, boundary=math.isclose(lhs, rhs, abs_tol=1e-15)
    )


def _weak(
    condition: str, description: str, lhs: float, rhs: float, severity: Severity
) -> CheckItem:
    return CheckItem(condition, description, lhs, rhs, lhs <= rhs, severity)


def check_assumptions(params: MarketParams, maturity: float) -> CheckReport:
    """
    Evaluate the no-arbitrage and well-posedness conditions.

    Items (a)-(c) are necessary for an arbitrage-free market, (d) is the
    sufficient condition in the normal regime, (e.i)-(e.iii) bound the
    drivers so that the pricing BSDE has a unique solution on [0, T].
    Failures are report items; callers decide whether to raise.
    """
    if not maturity > 0:
        raise ValidationError("maturity must be positive", {"maturity": maturity})

    p = params
    h_investor = max(p.bond_return_investor - p.discount_rate, 0.0)
    h_counterparty = max(p.bond_return_counterparty - p.discount_rate, 0.0)
    k = lipschitz_constant(p)

    items = (
        _weak("a", "r_f+ <= r_f-", p.funding_rate_lend, p.funding_rate_borrow, Severity.NECESSARY),
        _strict(
            "b",
            "max(r_f+, r_D) < min(mu_I, mu_C)",
            max(p.funding_rate_lend, p.discount_rate),
            min(p.bond_return_investor, p.bond_return_counterparty),
            Severity.NECESSARY,
        ),
        _weak("c", "r_r+ <= r_f- (normal regime)", p.repo_rate_lend, p.funding_rate_borrow, Severity.NECESSARY),
        _weak("d.1", "r_r+ <= r_f+ (normal regime)", p.repo_rate_lend, p.funding_rate_lend, Severity.SUFFICIENT),
        _weak("d.2", "r_f+ <= r_r- (normal regime)", p.funding_rate_lend, p.repo_rate_borrow, Severity.SUFFICIENT),
        _strict(
            "e.i",
            "r_f- < 1/(5 T^1.5)",
            p.funding_rate_borrow,
            1.0 / (5.0 * math.sqrt(maturity**3)),
            Severity.WELL_POSEDNESS,
        ),
        _strict("e.ii", "K < 1/(5 T)", k.value, 1.0 / (5.0 * maturity), Severity.WELL_POSEDNESS),
        _strict(
            "e.iii",
            "r_f- - r_D < min(sqrt(h_I), sqrt(h_C))/(5 T)",
            p.funding_rate_borrow - p.discount_rate,
            min(math.sqrt(h_investor), math.sqrt(h_counterparty)) / (5.0 * maturity),
            Severity.WELL_POSEDNESS,
        ),
    )
    notes = ("default-Poisson rates in (e.iii) are the valuation-measure intensities h_i = mu_i - r_D",)
    report = CheckReport(items, notes)

    for item in items:
        if not item.passed:
            tie = " (boundary tie)" if item.boundary else ""
            logger.warning(f"condition {item.condition} fails{tie}: {item.description}")
    return report
