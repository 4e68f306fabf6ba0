"""
Alternating renewal process for market regimes.

State 0 is the normal regime, state 1 the crisis regime (frozen repo market
and short-sale ban). Holding times are exponential with a per-state rate;
``rate_normal`` is λ_U and ``rate_crisis`` is λ_V. Rates are stored, not
mean lengths: use ``mean_to_rate`` when starting from estimated means.
"""

import math
from dataclasses import dataclass
from enum import StrEnum
from functools import partial

import numpy as np
from scipy.integrate import quad
from scipy.special import gammaln
from scipy.special import logsumexp

from app.config import config
from app.engine.streams import STREAM_REGIME
from app.engine.streams import Chunk
from app.engine.streams import chunk_generator
from app.engine.streams import chunks
from app.exceptions import FormulaError
from app.exceptions import ValidationError
from app.logger import get_logger
from app.utils import ordered_map

logger = get_logger("xva.regime")

# Holding times drawn per row and per block
DRAW_BLOCK = 16

# |λ - λ_U| below this makes the up-jump pmf numerically singular
SINGULAR_TOLERANCE = 1e-12

# Largest round-off accepted from the signed closed-form sum
CANCELLATION_TOLERANCE = 1e-12


class RegimeMode(StrEnum):
    FROZEN_NORMAL = "frozen-normal"
    FROZEN_CRISIS = "frozen-crisis"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class RegimeParams:
    rate_normal: float
    rate_crisis: float
    initial_state: int = 0

    def __post_init__(self) -> None:
        for name in ("rate_normal", "rate_crisis"):
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValidationError(f"{name} must be a positive rate per year", {name: value})
        if self.initial_state not in (0, 1):
            raise ValidationError(
                "initial_state must be 0 or 1", {"initial_state": self.initial_state}
            )

    @classmethod
    def from_means(
        cls, mean_normal_years: float, mean_crisis_years: float, initial_state: int = 0
    ) -> "RegimeParams":
        """Build parameters from mean regime lengths in years."""
        return cls(mean_to_rate(mean_normal_years), mean_to_rate(mean_crisis_years), initial_state)

    def rate_in(self, state: int) -> float:
        return self.rate_normal if state == 0 else self.rate_crisis


@dataclass(frozen=True)
class RegimePath:
    jump_times: tuple[float, ...]
    horizon: float
    initial_state: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 0:
            raise ValidationError("horizon must be non-negative", {"horizon": self.horizon})
        if self.initial_state not in (0, 1):
            raise ValidationError("initial_state must be 0 or 1")
        previous = 0.0
        for t in self.jump_times:
            if t <= previous or t > self.horizon:
                raise ValidationError(
                    "jump_times must be strictly increasing in (0, horizon]",
                    {"jump_time": t, "horizon": self.horizon},
                )
            previous = t

    def state_after(self, k: int) -> int:
        """State after the k-th jump."""
        return self.initial_state ^ (k % 2)


@dataclass(frozen=True)
class PmfResult:
    value: float
    raw: float
    clamped: bool
    # "closed-form", or "quadrature" when cancellation makes the closed form unreliable
    method: str = "closed-form"


@dataclass(frozen=True)
class ValidationRow:
    quantity: str
    t: float
    closed_form: float
    monte_carlo: float
    standard_error: float
    consistent: bool


def mean_to_rate(mean_years: float) -> float:
    if not mean_years > 0:
        raise ValidationError("mean regime length must be positive", {"mean": mean_years})
    return 1.0 / mean_years


def rate_to_mean(rate: float) -> float:
    if not rate > 0:
        raise ValidationError("rate must be positive", {"rate": rate})
    return 1.0 / rate


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _simulate_chunk(
    params: RegimeParams, horizon: float, seed: int, chunk: Chunk, chunk_size: int
) -> np.ndarray:
    """Jump times for one chunk, NaN padded, shape (chunk.rows, max_jumps)."""
    rows = chunk.rows
    elapsed = np.zeros(chunk_size)
    blocks: list[np.ndarray] = []
    block = 0
    while horizon > 0 and np.any(elapsed[:rows] <= horizon):
        generator = chunk_generator(seed, STREAM_REGIME, chunk.index, block)
        uniforms = generator.random((chunk_size, DRAW_BLOCK))
        draw_index = block * DRAW_BLOCK + np.arange(DRAW_BLOCK)
        # The holding time ending at jump j is spent in state initial ^ (j mod 2)
        states = params.initial_state ^ (draw_index % 2)
        rates = np.where(states == 0, params.rate_normal, params.rate_crisis)
        holding = -np.log1p(-uniforms) / rates
        times = elapsed[:, None] + np.cumsum(holding, axis=1)
        elapsed = times[:, -1]
        blocks.append(times)
        block += 1

    if not blocks:
        return np.empty((rows, 0))

    jumps = np.concatenate(blocks, axis=1)[:rows]
    jumps[jumps > horizon] = np.nan
    width = int(np.max(np.sum(~np.isnan(jumps), axis=1), initial=0))
    return jumps[:, :width]


def simulate_jump_matrix(
    params: RegimeParams,
    horizon: float,
    n_paths: int,
    seed: int,
    threads: int | None = None,
) -> np.ndarray:
    """
    Jump times of n_paths regime paths as a NaN-padded matrix.

    Row p is identical to ``simulate_regime_path(params, horizon, seed, p)``.
    """
    if not horizon >= 0:
        raise ValidationError("horizon must be non-negative", {"horizon": horizon})
    if n_paths < 1:
        raise ValidationError("n_paths must be at least 1", {"n_paths": n_paths})

    chunk_size = config.PATH_CHUNK
    parts = ordered_map(
        partial(_simulate_chunk, params, horizon, seed, chunk_size=chunk_size),
        chunks(n_paths, chunk_size),
        threads or config.THREADS,
    )
    width = max(part.shape[1] for part in parts)
    padded = [
        np.pad(part, ((0, 0), (0, width - part.shape[1])), constant_values=np.nan)
        for part in parts
    ]
    return np.concatenate(padded, axis=0)


def _path_from_row(row: np.ndarray, horizon: float, initial_state: int) -> RegimePath:
    return RegimePath(tuple(float(t) for t in row[~np.isnan(row)]), horizon, initial_state)


def simulate_regime_path(
    params: RegimeParams, horizon: float, seed: int, path_index: int = 0
) -> RegimePath:
    """Simulate one regime path over [0, horizon]."""
    if not horizon >= 0:
        raise ValidationError("horizon must be non-negative", {"horizon": horizon})
    if path_index < 0:
        raise ValidationError("path_index must be non-negative", {"path_index": path_index})
    chunk_size = config.PATH_CHUNK
    chunk_index, row = divmod(path_index, chunk_size)
    chunk = Chunk(index=chunk_index, start=chunk_index * chunk_size, stop=path_index + 1)
    jumps = _simulate_chunk(params, horizon, seed, chunk, chunk_size)
    return _path_from_row(jumps[row], horizon, params.initial_state)


def simulate_regime_paths(
    params: RegimeParams,
    horizon: float,
    n_paths: int,
    seed: int,
    threads: int | None = None,
) -> list[RegimePath]:
    """Simulate n_paths independent regime paths."""
    jumps = simulate_jump_matrix(params, horizon, n_paths, seed, threads)
    return [_path_from_row(row, horizon, params.initial_state) for row in jumps]


def states_on_grid(jumps: np.ndarray, initial_state: int, grid: np.ndarray) -> np.ndarray:
    """β at each grid time for a NaN-padded jump matrix (right-continuous)."""
    counts = np.zeros((jumps.shape[0], len(grid)), dtype=np.int64)
    for k in range(jumps.shape[1]):
        counts += jumps[:, k, None] <= grid[None, :]
    return (initial_state ^ (counts % 2)).astype(np.int8)


# ---------------------------------------------------------------------------
# Path functionals
# ---------------------------------------------------------------------------


def _check_time(path: RegimePath, t: float) -> None:
    if not 0 <= t <= path.horizon:
        raise ValidationError(
            "t must lie in [0, horizon]", {"t": t, "horizon": path.horizon}
        )


def jump_count_at(path: RegimePath, t: float) -> int:
    """J_t: number of jump times <= t."""
    _check_time(path, t)
    return int(np.searchsorted(np.asarray(path.jump_times, dtype=float), t, side="right"))


def state_at(path: RegimePath, t: float) -> int:
    """β_t; the state changes at each jump time."""
    return path.initial_state ^ (jump_count_at(path, t) % 2)


def upward_jump_count_at(path: RegimePath, t: float) -> int:
    """β⁺_t: number of normal-to-crisis jumps up to t."""
    count = jump_count_at(path, t)
    return (count + 1) // 2 if path.initial_state == 0 else count // 2


def holding_times(
    path: RegimePath, start_before: float | None = None
) -> tuple[list[float], list[float]]:
    """
    Completed holding times split by state (normal, crisis).

    The holding still running at the horizon is censored and dropped.
    ``start_before`` keeps only holdings that began before that time.
    """
    normal: list[float] = []
    crisis: list[float] = []
    start = 0.0
    for k, end in enumerate(path.jump_times):
        if start_before is None or start < start_before:
            (normal if path.state_after(k) == 0 else crisis).append(end - start)
        start = end
    return normal, crisis


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------


def merged_rate(params: RegimeParams) -> float:
    """λ = λ_U·λ_V/(λ_U + λ_V)."""
    return params.rate_normal * params.rate_crisis / (params.rate_normal + params.rate_crisis)


def _signed_sum(terms: list[tuple[float, float]]) -> float:
    """Sum of sign·exp(log_magnitude) terms."""
    return float(sum(sign * math.exp(log_mag) for sign, log_mag in terms))


def upward_jump_pmf(params: RegimeParams, t: float, n: int) -> PmfResult:
    """
    P(β⁺_t = n) for a process started in the normal regime.

    Evaluates the closed forms exactly as stated, which treat the downward
    jumps as Poisson with the merged rate; compare against Monte Carlo with
    ``validation_report`` before relying on n >= 1.
    """
    if params.initial_state != 0:
        raise ValidationError("upward_jump_pmf is stated for a start in the normal regime")
    if t < 0 or n < 0:
        raise ValidationError("t and n must be non-negative", {"t": t, "n": n})

    lam_u = params.rate_normal
    lam = merged_rate(params)
    gap = lam - lam_u

    if n == 0:
        raw = math.exp(-lam_u * t)
        return PmfResult(raw, raw, False)

    if abs(gap) < SINGULAR_TOLERANCE:
        raise FormulaError(
            "closed-form pmf is singular when the merged rate equals rate_normal; "
            "use validation_report for a Monte-Carlo estimate",
            {"rate_normal": lam_u, "merged_rate": lam},
        )

    log_gap = math.log(abs(gap))
    gap_sign = -1.0 if gap < 0 else 1.0

    if n == 1:
        terms = [
            (gap_sign, math.log(lam_u) - lam_u * t - log_gap),
            (-gap_sign, math.log(lam_u) - lam * t - log_gap),
        ]
        raw = lam_u / gap * (math.exp(-lam_u * t) - math.exp(-lam * t))
    else:
        m = n - 1  # the stated formula gives P(β⁺ = m + 1) for m >= 1
        log_lam = math.log(lam)
        log_t = math.log(t) if t > 0 else -math.inf

        terms = [(gap_sign ** (m + 1), math.log(lam_u) + m * log_lam - lam_u * t - (m + 1) * log_gap)]

        for k in range(m):
            j = np.arange(k + 1)
            with np.errstate(invalid="ignore"):
                inner = np.where(j == 0, 0.0, j * log_t) - gammaln(j + 1) - (k - j + 1) * log_lam
            log_inner = float(logsumexp(inner))
            terms.append((
                -(gap_sign ** (m - k + 1)),
                2 * math.log(lam_u) + m * log_lam - lam * t - (m - k + 1) * log_gap + log_inner,
            ))

        k = np.arange(m + 1)
        with np.errstate(invalid="ignore"):
            poisson = np.where(k == 0, 0.0, k * (log_lam + log_t)) - gammaln(k + 1)
        terms.append((
            -gap_sign,
            math.log(lam_u) - lam * t - log_gap + float(logsumexp(poisson)),
        ))
        raw = _signed_sum(terms)

    round_off = len(terms) * np.finfo(float).eps * math.exp(max(log_mag for _, log_mag in terms))
    if round_off > CANCELLATION_TOLERANCE:
        value = _pmf_quadrature(lam_u, lam, t, n - 1)
        logger.debug(
            f"upward_jump_pmf n={n}, t={t}: closed form round-off {round_off:.1e}, using quadrature"
        )
        return PmfResult(value, raw, False, "quadrature")

    value = min(max(raw, 0.0), 1.0)
    clamped = value != raw
    if clamped:
        logger.warning(f"upward_jump_pmf clamped {raw:.3e} to {value} at t={t}, n={n}")
    return PmfResult(value, raw, clamped)


def _pmf_quadrature(lam_u: float, lam: float, t: float, m: int) -> float:
    """∫₀ᵗ λ_U e^{−λ_U s} · Poisson(m; λ(t − s)) ds, the integral the closed forms evaluate."""
    if t == 0:
        return 0.0

    def integrand(s: float) -> float:
        rest = t - s
        log_poisson = -lam * rest - gammaln(m + 1) + (m * math.log(lam * rest) if m else 0.0)
        return lam_u * math.exp(-lam_u * s + log_poisson) if rest > 0 or m == 0 else 0.0

    value, _ = quad(integrand, 0.0, t, epsabs=1e-15, epsrel=1e-12, limit=200)
    return min(max(value, 0.0), 1.0)


def compensator_at(params: RegimeParams, path: RegimePath, t: float) -> float:
    """
    Λ^β_t = ∫₀ᵗ (λ⁺_s + λ) ds with λ⁺_s = λ_U before the first jump and λ after.
    """
    _check_time(path, t)
    if path.initial_state != 0 or params.initial_state != 0:
        raise ValidationError("compensator_at is stated for a start in the normal regime")
    lam = merged_rate(params)
    first_jump = path.jump_times[0] if path.jump_times else math.inf
    before = min(t, first_jump)
    return params.rate_normal * before + lam * max(t - first_jump, 0.0) + lam * t


def markov_compensator_at(params: RegimeParams, path: RegimePath, t: float) -> float:
    """∫₀ᵗ (λ_U·1{β=0} − λ_V·1{β=1}) ds; β_t − β_0 minus this is a martingale."""
    _check_time(path, t)
    total = 0.0
    start = 0.0
    for k, end in enumerate((*path.jump_times, math.inf)):
        stop = min(end, t)
        if stop > start:
            state = path.state_after(k)
            rate = params.rate_normal if state == 0 else -params.rate_crisis
            total += rate * (stop - start)
        if end >= t:
            break
        start = end
    return total


# ---------------------------------------------------------------------------
# Monte-Carlo validation
# ---------------------------------------------------------------------------


def _time_in_normal(jumps: np.ndarray, initial_state: int, t: float) -> np.ndarray:
    clipped = np.where(np.isnan(jumps), t, np.minimum(jumps, t))
    bounds = np.concatenate([np.zeros((len(jumps), 1)), clipped, np.full((len(jumps), 1), t)], axis=1)
    durations = np.diff(bounds, axis=1)
    states = initial_state ^ (np.arange(durations.shape[1]) % 2)
    return durations[:, states == 0].sum(axis=1)


def validation_report(
    params: RegimeParams,
    times: tuple[float, ...] = (0.5, 1.0, 2.0),
    n_paths: int = 100_000,
    seed: int = 0,
    max_up_jumps: int = 2,
) -> list[ValidationRow]:
    """
    Compare closed forms with Monte-Carlo estimates.

    Rows cover P(β⁺_t = n) for n <= max_up_jumps, the mean of β_t − Λ^β_t
    for the closed-form compensator and the mean of β_t − Λ_t for the Markov
    compensator. ``consistent`` means |difference| <= 3 standard errors.
    """
    if params.initial_state != 0:
        raise ValidationError("validation_report is stated for a start in the normal regime")

    horizon = max(times)
    jumps = simulate_jump_matrix(params, horizon, n_paths, seed)
    lam = merged_rate(params)
    first_jump = np.where(np.isnan(jumps[:, 0]), np.inf, jumps[:, 0]) if jumps.shape[1] else np.full(n_paths, np.inf)
    rows: list[ValidationRow] = []

    def add(quantity: str, t: float, closed: float, samples: np.ndarray) -> None:
        estimate = float(samples.mean())
        error = float(samples.std(ddof=1) / math.sqrt(len(samples)))
        consistent = abs(estimate - closed) <= 3 * error + 1e-12
        if not consistent:
            logger.warning(
                f"{quantity} at t={t}: closed form {closed:.5f} vs Monte Carlo "
                f"{estimate:.5f} ± {error:.5f}"
            )
        rows.append(ValidationRow(quantity, t, closed, estimate, error, consistent))

    for t in times:
        counts = np.sum(jumps <= t, axis=1)
        beta = counts % 2
        ups = (counts + 1) // 2

        for n in range(max_up_jumps + 1):
            try:
                closed = upward_jump_pmf(params, t, n).value
            except FormulaError:
                closed = math.nan
            add(f"P(up_jumps={n})", t, closed, (ups == n).astype(float))

        closed_comp = params.rate_normal * np.minimum(t, first_jump) + lam * np.maximum(t - first_jump, 0.0) + lam * t
        add("E[beta - compensator]", t, 0.0, beta - closed_comp)

        in_normal = _time_in_normal(jumps, 0, t)
        markov_comp = params.rate_normal * in_normal - params.rate_crisis * (t - in_normal)
        add("E[beta - markov_compensator]", t, 0.0, beta - markov_comp)

    return rows
