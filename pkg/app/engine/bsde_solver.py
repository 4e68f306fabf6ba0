"""
Backward solvers for the reduced XVA BSDE.

The regression backend runs an explicit backward Euler scheme: conditional
expectations are least-squares fits on {1, x, x², x³} in x = log(S/K), with
a separate coefficient vector per regime. The shooting backend lives in
app.engine.shooting and is imported only when selected.
"""

import json
from collections.abc import Callable
from dataclasses import dataclass
from dataclasses import field
from enum import StrEnum
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from app.config import config
from app.engine.generators import Sign
from app.engine.generators import g_breve
from app.engine.market import ClaimSpec
from app.engine.market import MarketParams
from app.engine.market import PathBundle
from app.engine.market import reference_on_grid
from app.engine.market import theta_tilde
from app.exceptions import SolverError
from app.exceptions import ValidationError
from app.logger import PerformanceLogger
from app.logger import get_logger
from app.utils import atomic_write_text

logger = get_logger("xva.solver")

# Regression needs this many samples per basis function in a regime group
SAMPLES_PER_BASIS = 10

Driver = Callable[[float, Any, Any, Any, Any, Any], Any]


class Backend(StrEnum):
    REGRESSION = "regression"
    SHOOTING = "shooting"


@dataclass(frozen=True)
class ShootingConfig:
    hidden_layers: int = 2
    width: int = 16
    learning_rate: float = 1e-3
    iterations: int = 5000
    batch_size: int = 256
    # Fractions of the run after which the step size drops tenfold
    decay_at: tuple[float, ...] = (0.6, 0.85)

    def __post_init__(self) -> None:
        if self.hidden_layers < 1 or self.width < 1:
            raise ValidationError("network needs at least one hidden layer of width >= 1")
        if not self.learning_rate > 0:
            raise ValidationError("learning_rate must be positive", {"learning_rate": self.learning_rate})
        if self.iterations < 1 or self.batch_size < 2:
            raise ValidationError(
                "iterations must be >= 1 and batch_size >= 2",
                {"iterations": self.iterations, "batch_size": self.batch_size},
            )


@dataclass(frozen=True)
class SolverConfig:
    n_steps: int = 50
    n_paths: int = 100_000
    backend: Backend = Backend.REGRESSION
    basis_degree: int = 3
    clamp_quantile: float = config.CLAMP_QUANTILE
    seed: int = config.DEFAULT_SEED
    antithetic: bool = True
    shooting: ShootingConfig = field(default_factory=ShootingConfig)

    def __post_init__(self) -> None:
        object.__setattr__(self, "backend", Backend(self.backend))
        if self.n_steps < 1:
            raise ValidationError("n_steps must be at least 1", {"n_steps": self.n_steps})
        if self.basis_degree < 0:
            raise ValidationError("basis_degree must be non-negative", {"basis_degree": self.basis_degree})
        if not 0 <= self.clamp_quantile < 0.5:
            raise ValidationError("clamp_quantile must lie in [0, 0.5)", {"clamp_quantile": self.clamp_quantile})
        if self.backend == Backend.REGRESSION and self.n_paths < self.basis_dimension * SAMPLES_PER_BASIS:
            raise ValidationError(
                "too few paths for the regression basis",
                {"n_paths": self.n_paths, "minimum": self.basis_dimension * SAMPLES_PER_BASIS},
            )
        if self.n_paths < 2:
            raise ValidationError("n_paths must be at least 2", {"n_paths": self.n_paths})

    @property
    def basis_dimension(self) -> int:
        return self.basis_degree + 1


@dataclass
class ReducedProblem:
    """A BSDE -dU = driver dt - Z dW with U_T = terminal(S_T) over a path bundle."""

    driver: Driver
    terminal: Callable[[np.ndarray], np.ndarray]
    paths: PathBundle
    v_hat: np.ndarray
    z_hat: np.ndarray
    strike: float
    name: str = "reduced-xva"

    def __post_init__(self) -> None:
        shape = self.paths.stock.shape
        if self.v_hat.shape != shape or self.z_hat.shape != shape:
            raise SolverError(
                "reference arrays do not match the path grid",
                {"paths": shape, "v_hat": self.v_hat.shape, "z_hat": self.z_hat.shape},
            )


@dataclass
class SolverOutput:
    u0: dict[int, float]
    standard_error: dict[int, float]
    backend: Backend
    grid: np.ndarray
    u_paths: np.ndarray
    z_paths: np.ndarray
    diagnostics: dict[str, Any] = field(default_factory=dict)
    step_records: list[dict[str, Any]] = field(default_factory=list)

    @property
    def initial_regime(self) -> int:
        return min(self.u0)

    def value(self, regime: int | None = None) -> float:
        return self.u0[self.initial_regime if regime is None else regime]

    def error(self, regime: int | None = None) -> float:
        return self.standard_error[self.initial_regime if regime is None else regime]

    def as_dict(self) -> dict[str, Any]:
        return {
            "backend": self.backend.value,
            "u0": {str(k): v for k, v in self.u0.items()},
            "standard_error": {str(k): v for k, v in self.standard_error.items()},
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)

    def step_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.step_records)

    def write_steps(self, path: str | Path) -> Path:
        return atomic_write_text(path, self.step_frame().to_csv(index=False))


@dataclass
class FullSolution:
    """Per-path (XVA, z̃, z̃^I, z̃^C) after re-inserting the default events."""

    xva: np.ndarray
    z: np.ndarray
    z_investor: np.ndarray
    z_counterparty: np.ndarray
    default_step: np.ndarray
    defaulted_first: np.ndarray


# ---------------------------------------------------------------------------
# Problem builders
# ---------------------------------------------------------------------------


def reduced_xva_problem(
    market: MarketParams, claim: ClaimSpec, bundle: PathBundle, sign: Sign = Sign.PLUS
) -> ReducedProblem:
    """Reduced XVA± problem: driver ğ±, terminal value 0."""
    v_hat, z_hat = reference_on_grid(market, claim, bundle)
    sign = Sign(sign)

    def driver(t: float, u: Any, z: Any, beta: Any, v: Any, zh: Any) -> Any:
        return g_breve(market, u, z, beta, v, zh, sign)

    return ReducedProblem(
        driver=driver,
        terminal=np.zeros_like,
        paths=bundle,
        v_hat=v_hat,
        z_hat=z_hat,
        strike=claim.strike,
        name=f"reduced-xva-{sign.value}",
    )


def black_scholes_problem(
    market: MarketParams, claim: ClaimSpec, bundle: PathBundle, scale: float = 1.0
) -> ReducedProblem:
    """Linear validation problem with driver -r_D·v and terminal scale·payoff."""
    r = market.discount_rate

    def driver(t: float, u: Any, z: Any, beta: Any, v: Any, zh: Any) -> Any:
        return -r * u

    zeros = np.zeros_like(bundle.stock)
    return ReducedProblem(
        driver=driver,
        terminal=lambda stock: scale * claim.payoff(stock),
        paths=bundle,
        v_hat=zeros,
        z_hat=zeros,
        strike=claim.strike,
        name="black-scholes",
    )


# ---------------------------------------------------------------------------
# Regression backend
# ---------------------------------------------------------------------------


def _winsorize(values: np.ndarray, quantile: float) -> tuple[np.ndarray, int]:
    if quantile <= 0 or values.size < 2:
        return values, 0
    low, high = np.quantile(values, [quantile, 1.0 - quantile])
    clipped = np.clip(values, low, high)
    return clipped, int(np.count_nonzero(clipped != values))


def _standard_error(values: np.ndarray, paired: bool) -> float:
    """Standard error of the mean; antithetic rows are averaged in pairs first."""
    if paired and values.size >= 4 and values.size % 2 == 0:
        pairs = 0.5 * (values[0::2] + values[1::2])
        return float(np.std(pairs, ddof=1) / np.sqrt(pairs.size))
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def _complete_pairs(mask: np.ndarray) -> bool:
    return mask.size % 2 == 0 and bool(np.all(mask[0::2] == mask[1::2]))


def _r_squared(target: np.ndarray, fitted: np.ndarray) -> float:
    total = float(np.sum((target - target.mean()) ** 2))
    if total == 0.0:
        return 1.0
    return 1.0 - float(np.sum((target - fitted) ** 2)) / total


def _fit(
    basis: np.ndarray, target: np.ndarray, step: int, regime: int
) -> tuple[np.ndarray, float]:
    coefficients, _, rank, _ = np.linalg.lstsq(basis, target, rcond=None)
    if rank < basis.shape[1]:
        raise SolverError(
            "rank-deficient regression matrix",
            {"step": step, "regime": regime, "rank": int(rank), "columns": basis.shape[1]},
        )
    fitted = basis @ coefficients
    return fitted, _r_squared(target, fitted)


def _check_finite(
    values: np.ndarray, step: int, t: float, u: np.ndarray, z: np.ndarray, beta: np.ndarray
) -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argmax(bad))
        raise SolverError(
            "non-finite driver value",
            {"step": step, "t": t, "path": i, "u": u[i], "z": z[i], "beta": int(beta[i])},
        )


def solve_regression(problem: ReducedProblem, solver: SolverConfig) -> SolverOutput:
    """Explicit backward Euler with per-regime least-squares conditional expectations."""
    bundle = problem.paths
    n_steps, n_paths = bundle.n_steps, bundle.n_paths
    dt = bundle.dt
    grid = bundle.grid
    dimension = solver.basis_dimension
    minimum_group = dimension * SAMPLES_PER_BASIS

    u_paths = np.empty((n_paths, n_steps + 1))
    z_paths = np.empty((n_paths, n_steps))
    u_next = np.asarray(problem.terminal(bundle.stock[:, -1]), dtype=float)
    u_paths[:, -1] = u_next
    # terminal + Σ driver·Δt per path; ŭ₀ is its per-regime sample mean up to winsorizing
    pathwise = u_next.copy()

    records: list[dict[str, Any]] = [{
        "step": n_steps, "t": float(grid[-1]), "mean_u": float(u_next.mean()),
        "mean_z": np.nan, "r2_normal": np.nan, "r2_crisis": np.nan, "clamped": 0, "fallback": "",
    }]
    u0: dict[int, float] = {}
    standard_error: dict[int, float] = {}
    total_clamped = 0

    with PerformanceLogger(logger, f"regression solve ({problem.name})"):
        for i in range(n_steps - 1, -1, -1):
            t = float(grid[i])
            beta = bundle.regime[:, i]
            increments = bundle.brownian_increments[:, i]
            x = np.log(bundle.stock[:, i] / problem.strike)
            basis = np.vander(x, dimension, increasing=True)

            groups = {regime: beta == regime for regime in (0, 1) if np.any(beta == regime)}
            z = np.empty(n_paths)
            r2: dict[int, float] = {}
            fallback: list[str] = []
            clamped = 0

            z_target_all, c = _winsorize(u_next * increments, solver.clamp_quantile)
            clamped += c
            for regime, mask in groups.items():
                if i == 0 or mask.sum() < minimum_group:
                    z[mask] = z_target_all[mask].mean() / dt
                else:
                    fitted, _ = _fit(basis[mask], z_target_all[mask], i, regime)
                    z[mask] = fitted / dt

            drift = np.asarray(
                problem.driver(t, u_next, z, beta, problem.v_hat[:, i], problem.z_hat[:, i]),
                dtype=float,
            )
            drift = np.broadcast_to(drift, u_next.shape)
            _check_finite(drift, i, t, u_next, z, beta)

            raw_target = u_next + drift * dt
            pathwise += drift * dt
            target, c = _winsorize(raw_target, solver.clamp_quantile)
            clamped += c
            u_now = np.empty(n_paths)
            for regime, mask in groups.items():
                if i == 0:
                    # Every path shares S_0, so the fit collapses to the sample mean
                    u_now[mask] = raw_target[mask].mean()
                    u0[regime] = float(raw_target[mask].mean())
                    standard_error[regime] = _standard_error(
                        pathwise[mask], bundle.antithetic and _complete_pairs(mask)
                    )
                elif mask.sum() < minimum_group:
                    u_now[mask] = target[mask].mean()
                    fallback.append(str(regime))
                    logger.warning(
                        f"step {i}: regime {regime} has {int(mask.sum())} paths, using the group mean"
                    )
                else:
                    fitted, r2[regime] = _fit(basis[mask], target[mask], i, regime)
                    u_now[mask] = fitted

            u_paths[:, i] = u_now
            z_paths[:, i] = z
            u_next = u_now
            total_clamped += clamped
            records.append({
                "step": i, "t": t, "mean_u": float(u_now.mean()), "mean_z": float(z.mean()),
                "r2_normal": r2.get(0, np.nan), "r2_crisis": r2.get(1, np.nan),
                "clamped": clamped, "fallback": ";".join(fallback),
            })
            logger.debug(f"step {i}: mean u {u_now.mean():.6g}, clamped {clamped}")

    records.reverse()
    r2_values = [r[k] for r in records for k in ("r2_normal", "r2_crisis") if np.isfinite(r[k])]
    diagnostics = {
        "n_steps": n_steps,
        "n_paths": n_paths,
        "seed": bundle.seed,
        "clamped_samples": total_clamped,
        "min_r_squared": min(r2_values) if r2_values else None,
    }
    return SolverOutput(
        u0=u0,
        standard_error=standard_error,
        backend=Backend.REGRESSION,
        grid=grid,
        u_paths=u_paths,
        z_paths=z_paths,
        diagnostics=diagnostics,
        step_records=records,
    )


def solve_shooting(problem: ReducedProblem, solver: SolverConfig) -> SolverOutput:
    from app.engine.shooting import solve_shooting as run

    return run(problem, solver)


def solve(problem: ReducedProblem, solver: SolverConfig) -> SolverOutput:
    if solver.backend == Backend.SHOOTING:
        return solve_shooting(problem, solver)
    return solve_regression(problem, solver)


# ---------------------------------------------------------------------------
# Full solution
# ---------------------------------------------------------------------------


def expand_full(
    output: SolverOutput, params: MarketParams, v_hat: np.ndarray, default_times: np.ndarray
) -> FullSolution:
    """
    Re-insert the default events into the reduced solution.

    Before the first default XVA is ŭ. From the first default on it is the
    closeout adjustment of whoever defaulted, read at the first grid time at
    or after the default; defaults after maturity never trip.
    """
    u = output.u_paths
    grid = output.grid
    if v_hat.shape != u.shape or default_times.shape != (u.shape[0], 2) or len(grid) != u.shape[1]:
        raise SolverError(
            "solution, reference and default times are on different grids",
            {"u": u.shape, "v_hat": v_hat.shape, "default_times": default_times.shape},
        )

    n_paths = u.shape[0]
    maturity = grid[-1]
    tau_investor, tau_counterparty = default_times[:, 0], default_times[:, 1]
    tau = np.minimum(tau_investor, tau_counterparty)
    defaulted = tau <= maturity

    theta_investor, theta_counterparty = theta_tilde(params, v_hat)
    step = np.where(defaulted, np.searchsorted(grid, np.where(defaulted, tau, 0.0), side="left"), len(grid))
    rows = np.arange(n_paths)
    read_at = np.minimum(step, len(grid) - 1)
    investor_first = defaulted & (tau_investor < tau_counterparty)
    closeout = np.where(
        investor_first, theta_investor[rows, read_at], theta_counterparty[rows, read_at]
    )

    times = grid[None, :]
    alive = times < tau[:, None]
    xva = np.where(alive, u, np.where(defaulted, closeout, 0.0)[:, None])
    z = output.z_paths * alive[:, :-1]
    up_to_default = times <= tau[:, None]
    z_investor = (theta_investor - u) * up_to_default
    z_counterparty = (theta_counterparty - u) * up_to_default

    first = np.where(defaulted, np.where(investor_first, "investor", "counterparty"), "none")
    return FullSolution(
        xva=xva,
        z=z,
        z_investor=z_investor,
        z_counterparty=z_counterparty,
        default_step=step,
        defaulted_first=first,
    )
