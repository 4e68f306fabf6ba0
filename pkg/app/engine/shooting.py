"""
Forward shooting backend for the reduced BSDE.

ŭ₀ is a trainable scalar per initial regime and z̆(t, log S/K, β) a small
feed-forward network. ŭ is rolled forward with Euler steps of the driver
and the mean squared terminal mismatch is minimized with Adam on seeded
mini-batches drawn from the path bundle.
"""

from typing import Any

import numpy as np
import torch
import torch.nn as nn

from app.engine.bsde_solver import Backend
from app.engine.bsde_solver import ReducedProblem
from app.engine.bsde_solver import SolverConfig
from app.engine.bsde_solver import SolverOutput
from app.engine.bsde_solver import _complete_pairs
from app.engine.bsde_solver import _standard_error
from app.exceptions import SolverError
from app.logger import PerformanceLogger
from app.logger import get_logger

logger = get_logger("xva.shooting")

DTYPE = torch.float64

# Secant passes that re-center ŭ₀ on the full bundle after training
CALIBRATION_PASSES = 3


class ZNetwork(nn.Module):
    """z̆ as a function of (t/T, log S/K, β)."""

    def __init__(self, hidden_layers: int, width: int):
        super().__init__()
        layers: list[nn.Module] = []
        size = 3
        for _ in range(hidden_layers):
            layers += [nn.Linear(size, width), nn.Tanh()]
            size = width
        self.output = nn.Linear(size, 1)
        # Start from z̆ ≡ 0
        nn.init.zeros_(self.output.weight)
        nn.init.zeros_(self.output.bias)
        self.hidden = nn.Sequential(*layers)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.output(self.hidden(features)).squeeze(-1)


class ShootingModel(nn.Module):
    def __init__(self, hidden_layers: int, width: int, u0_start: float):
        super().__init__()
        self.u0 = nn.Parameter(torch.full((2,), u0_start, dtype=DTYPE))
        self.z_net = ZNetwork(hidden_layers, width)

    def forward(self, batch: dict[str, torch.Tensor], problem: ReducedProblem, keep_paths: bool = False) -> Any:
        grid = batch["grid"]
        maturity = float(grid[-1])
        n_steps = len(grid) - 1
        u = self.u0[batch["regime"][:, 0].long()]
        u_steps = [u]
        z_steps = []
        for i in range(n_steps):
            t = float(grid[i])
            beta = batch["regime"][:, i]
            features = torch.stack(
                [torch.full_like(u, t / maturity), batch["moneyness"][:, i], beta], dim=-1
            )
            z = self.z_net(features)
            drift = problem.driver(t, u, z, beta, batch["v_hat"][:, i], batch["z_hat"][:, i])
            u = u - drift * (grid[i + 1] - grid[i]) + z * batch["increments"][:, i]
            if keep_paths:
                u_steps.append(u)
                z_steps.append(z)
        if keep_paths:
            return u, torch.stack(u_steps, dim=1), torch.stack(z_steps, dim=1)
        return u


def _tensors(problem: ReducedProblem, rows: np.ndarray | slice) -> dict[str, torch.Tensor]:
    bundle = problem.paths
    stock = bundle.stock[rows]
    return {
        "grid": torch.as_tensor(bundle.grid, dtype=DTYPE),
        "regime": torch.as_tensor(bundle.regime[rows], dtype=DTYPE),
        "moneyness": torch.as_tensor(np.log(stock / problem.strike), dtype=DTYPE),
        "increments": torch.as_tensor(bundle.brownian_increments[rows], dtype=DTYPE),
        "v_hat": torch.as_tensor(problem.v_hat[rows], dtype=DTYPE),
        "z_hat": torch.as_tensor(problem.z_hat[rows], dtype=DTYPE),
        "terminal": torch.as_tensor(np.asarray(problem.terminal(stock[:, -1]), dtype=float), dtype=DTYPE),
    }


def _calibrate(model: ShootingModel, full: dict[str, torch.Tensor], problem: ReducedProblem, regimes: list[int]) -> None:
    """Solve mean terminal residual = 0 per initial regime with the network held fixed."""
    with torch.no_grad():
        for _ in range(CALIBRATION_PASSES):
            base = model(full, problem) - full["terminal"]
            bump = 1e-4
            model.u0 += bump
            bumped = model(full, problem) - full["terminal"]
            model.u0 -= bump
            for regime in regimes:
                mask = full["regime"][:, 0] == regime
                slope = float((bumped[mask] - base[mask]).mean()) / bump
                if abs(slope) < 1e-12:
                    continue
                model.u0[regime] -= float(base[mask].mean()) / slope


def solve_shooting(problem: ReducedProblem, solver: SolverConfig) -> SolverOutput:
    settings = solver.shooting
    bundle = problem.paths
    regimes = sorted(int(b) for b in np.unique(bundle.regime[:, 0]))

    previous_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    torch.manual_seed(solver.seed)
    try:
        full = _tensors(problem, slice(None))
        model = ShootingModel(
            settings.hidden_layers, settings.width, float(full["terminal"].mean())
        ).to(DTYPE)
        optimizer = torch.optim.Adam(model.parameters(), lr=settings.learning_rate)
        milestones = sorted({max(1, int(f * settings.iterations)) for f in settings.decay_at})
        scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=milestones, gamma=0.1)
        sampler = torch.Generator().manual_seed(solver.seed)

        losses: list[float] = []
        with PerformanceLogger(logger, f"shooting solve ({problem.name})"):
            for iteration in range(settings.iterations):
                rows = torch.randint(
                    bundle.n_paths, (settings.batch_size,), generator=sampler
                ).numpy()
                batch = _tensors(problem, rows)
                residual = model(batch, problem) - batch["terminal"]
                loss = torch.mean(residual**2)
                if not torch.isfinite(loss):
                    raise SolverError(
                        "shooting loss diverged", {"iteration": iteration, "loss": float(loss)}
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                scheduler.step()
                losses.append(float(loss))
                if iteration % 500 == 0:
                    logger.debug(f"iteration {iteration}: loss {float(loss):.3e}")

        _calibrate(model, full, problem, regimes)

        with torch.no_grad():
            u_terminal, u_paths, z_paths = model(full, problem, keep_paths=True)
            residual = (u_terminal - full["terminal"]).numpy()
        if not np.all(np.isfinite(residual)):
            raise SolverError("shooting produced non-finite paths", {"iteration": settings.iterations})
    finally:
        torch.set_num_threads(previous_threads)

    u0 = {regime: float(model.u0[regime]) for regime in regimes}
    # terminal + Σ driver·Δt recovered from the rolled path: ŭ₀ + Σ z̆·ΔW − residual
    stochastic = np.sum(z_paths.numpy() * bundle.brownian_increments, axis=1)
    pathwise = u_paths[:, 0].numpy() + stochastic - residual
    standard_error = {}
    for regime in regimes:
        mask = bundle.regime[:, 0] == regime
        standard_error[regime] = _standard_error(
            pathwise[mask], bundle.antithetic and _complete_pairs(mask)
        )

    tail = losses[-max(1, len(losses) // 20):]
    diagnostics = {
        "n_steps": bundle.n_steps,
        "n_paths": bundle.n_paths,
        "seed": bundle.seed,
        "iterations": settings.iterations,
        "final_loss": float(np.mean(tail)),
        "terminal_residual_mean": float(residual.mean()),
        "terminal_residual_variance": float(residual.var()),
    }
    records = [
        {"step": i, "t": float(bundle.grid[i]), "mean_u": float(u_paths[:, i].mean()),
         "mean_z": float(z_paths[:, i].mean()) if i < bundle.n_steps else np.nan}
        for i in range(bundle.n_steps + 1)
    ]
    return SolverOutput(
        u0=u0,
        standard_error=standard_error,
        backend=Backend.SHOOTING,
        grid=bundle.grid,
        u_paths=u_paths.numpy(),
        z_paths=z_paths.numpy(),
        diagnostics=diagnostics,
        step_records=records,
    )
